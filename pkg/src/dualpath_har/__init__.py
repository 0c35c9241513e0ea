"""Dual-path multimodal sensor-fusion training engine.

A self-contained trainer for windowed sensor classification: a
residual/dense dual-path backbone over partitioned channels, multi-stage
bidirectional contrastive alignment, confidence-driven gradient
modulation, and a desk-scale data pipeline with metrics and a CLI.
"""

from .autodiff import (
    BatchNormState,
    Parameter,
    Tape,
    Tensor,
    avg_pool1d,
    backward,
    batchnorm1d,
    concat,
    conv1d,
    cross_entropy,
    global_avg_pool,
    l2_normalize,
    linear,
    mse,
    relu,
    softmax,
    zero_grads,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .contrastive import (
    ContrastiveConfig,
    SimilarityMatrix,
    alignment_loss,
    cosine_similarity_matrix,
    multi_stage_loss,
    stage_contrastive_loss,
)
from .data import (
    ChannelStats,
    CsvSchema,
    SensorRecording,
    SynthConfig,
    WindowedDataset,
    apply_normalizer,
    fit_normalizer,
    load_csv,
    load_dataset,
    normalize_dataset,
    save_dataset,
    sliding_windows,
    stratified_split,
    synth_generate,
)
from .gradcheck import finite_diff_check
from .metrics import ConfusionMatrix, MetricsReport, format_report, metrics_from_confusion
from .model import (
    ChannelPartition,
    DensePathConfig,
    DualPathNetwork,
    ForwardOutputs,
    ResidualBaselineNetwork,
    ResidualPathConfig,
    merge_partition,
    partition_input,
)
from .modulation import (
    ModulationState,
    apply_modulation,
    batch_confidences,
    compute_modulation,
    contribution_ratios,
    modulation_coefficients,
)
from .optim import AdamW, MomentumSGD, make_optimizer
from .trainer import (
    TrainConfig,
    TrainResult,
    data_augment,
    evaluate,
    fit,
    head_accuracies,
    run_ablation,
    total_loss,
    train_epoch,
)

__version__ = "0.1.0"
