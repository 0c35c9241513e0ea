"""Training loop, loss composition, ablation runner, and evaluation.

Per batch: forward, the three classification losses, the multi-stage
contrastive and alignment losses (when the CL switch is on; switched-off
components are absent from the graph, not zero-weighted), backward,
confidence-driven modulation of the branch classifier gradients (when
CGM is on), optimizer step. The trajectory is a pure function of
(config, seed).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import Tape, Tensor, add, cross_entropy, scale
from .contrastive import (
    alignment_loss,
    cosine_similarity_matrix,
    multi_stage_loss,
    stage_contrastive_loss,
)
from .errors import ContractError, NonFiniteLossError
from .metrics import ConfusionMatrix, metrics_from_confusion
from .model import (
    ChannelPartition,
    DensePathConfig,
    DualPathNetwork,
    ResidualBaselineNetwork,
    ResidualPathConfig,
)
from .modulation import apply_modulation, compute_modulation
from .optim import make_optimizer


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lambda_align: float = 0.7
    temperature: float = 0.5
    alpha: float = 0.9
    epsilon: float = 1e-8
    optimizer: str = "adamw"
    lr: float = 0.001
    momentum_beta: float = 0.9
    weight_decay: float = 0.01
    # component switches
    dpfe: bool = True
    cl: bool = True
    cgm: bool = True
    da: bool = False
    cgm_scope: str = "classifiers"  # or "classifiers+backbone"
    # augmentation knobs (only used when da is on)
    da_scale_low: float = 0.9
    da_scale_high: float = 1.1
    da_jitter_std: float = 0.01
    d_proj: int = 32
    res: ResidualPathConfig = field(default_factory=ResidualPathConfig)
    dense: DensePathConfig = field(default_factory=DensePathConfig)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ContractError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lambda_align < 0:
            raise ContractError(f"lambda_align must be >= 0, got {self.lambda_align}")
        if self.temperature <= 0:
            raise ContractError(f"temperature must be > 0, got {self.temperature}")
        if self.alpha < 0:
            raise ContractError(f"alpha must be >= 0, got {self.alpha}")
        if self.cgm_scope not in ("classifiers", "classifiers+backbone"):
            raise ContractError(f"unknown cgm_scope {self.cgm_scope!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        if "res" in raw and isinstance(raw["res"], dict):
            raw["res"] = ResidualPathConfig(**raw["res"])
        if "dense" in raw and isinstance(raw["dense"], dict):
            raw["dense"] = DensePathConfig(**raw["dense"])
        unknown = set(raw) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


def total_loss(cls_res, cls_dense, cls_fusion, contrast, align, lambda_align):
    """(cls_res + cls_dense + cls_fusion) + lambda_align * (contrast + align)."""
    cls_sum = add(add(cls_res, cls_dense), cls_fusion)
    return add(cls_sum, scale(add(contrast, align), lambda_align))


def data_augment(windows, rng, scale_low=0.9, scale_high=1.1, jitter_std=0.01):
    """Per-window amplitude scaling plus elementwise Gaussian jitter."""
    windows = np.asarray(windows, dtype=np.float64)
    scales = rng.uniform(scale_low, scale_high, size=(windows.shape[0], 1, 1))
    out = windows * scales
    if jitter_std > 0:
        out = out + rng.normal(0.0, jitter_std, size=windows.shape)
    return out


def build_network(config, num_classes, partition=None, num_channels=None, rng=None):
    """Network matching the config switches (dual-path, or the single-path
    baseline when DPFE is off)."""
    if config.dpfe:
        if partition is None:
            raise ContractError("dual-path network needs a channel partition")
        return DualPathNetwork(
            partition, config.res, config.dense,
            num_classes=num_classes, d_proj=config.d_proj, rng=rng,
        )
    if num_channels is None:
        num_channels = partition.total_channels if partition else None
    if num_channels is None:
        raise ContractError("baseline network needs the channel count")
    return ResidualBaselineNetwork(num_channels, config.res,
                                   num_classes=num_classes, rng=rng)


def _batch_indices(count, batch_size, rng):
    order = rng.permutation(count)
    for lo in range(0, count, batch_size):
        idx = order[lo:lo + batch_size]
        if idx.size >= 2:  # batch-norm needs at least 2 windows
            yield idx


def _check_finite(components, step):
    bad = {k: v for k, v in components.items() if not math.isfinite(v)}
    if bad:
        raise NonFiniteLossError(
            f"non-finite loss at step {step}: {bad}; components={components}",
            batch_index=step, components=components,
        )


def train_epoch(net, dataset, config, optimizer, shuffle_rng, augment_rng,
                epoch=0, step_offset=0):
    """One pass over the dataset; returns the per-batch log records."""
    if config.batch_size > len(dataset):
        raise ContractError(
            f"batch_size {config.batch_size} exceeds dataset size {len(dataset)}"
        )
    dual = isinstance(net, DualPathNetwork)
    if dual:
        res_group, dense_group = net.classifier_parameters()
        if config.cgm_scope == "classifiers+backbone":
            res_bb, dense_bb = net.backbone_parameters()
            res_group = res_group + res_bb
            dense_group = dense_group + dense_bb

    records = []
    step = step_offset
    for batch_idx, idx in enumerate(_batch_indices(len(dataset), config.batch_size, shuffle_rng)):
        xb = dataset.windows[idx]
        yb = dataset.labels[idx]
        if config.da:
            xb = data_augment(xb, augment_rng, config.da_scale_low,
                              config.da_scale_high, config.da_jitter_std)

        record = {"step": step, "epoch": epoch, "batch": batch_idx}
        with Tape() as tape:
            if dual:
                out = net.forward(Tensor(xb), training=True)
                loss_res = cross_entropy(out.logits[0], yb)
                loss_dense = cross_entropy(out.logits[1], yb)
                loss_fusion = cross_entropy(out.logits[2], yb)
                if config.cl:
                    stage_losses = [
                        stage_contrastive_loss(
                            cosine_similarity_matrix(z_res, z_dense, stage=s),
                            config.temperature,
                        )
                        for s, (z_res, z_dense) in enumerate(out.stage_projections)
                    ]
                    contrast = multi_stage_loss(stage_losses)
                    align = alignment_loss(*out.aligned_pooled)
                    loss = total_loss(loss_res, loss_dense, loss_fusion,
                                      contrast, align, config.lambda_align)
                    record["loss_contrast"] = contrast.item()
                    record["loss_align"] = align.item()
                else:
                    loss = add(add(loss_res, loss_dense), loss_fusion)
                    record["loss_contrast"] = None
                    record["loss_align"] = None
                record["loss_cls_res"] = loss_res.item()
                record["loss_cls_dense"] = loss_dense.item()
                record["loss_cls_fusion"] = loss_fusion.item()
            else:
                logits = net.forward(Tensor(xb), training=True)
                loss = cross_entropy(logits, yb)
                record["loss_cls"] = loss.item()
            record["loss_total"] = loss.item()

        _check_finite({k: v for k, v in record.items()
                       if k.startswith("loss") and v is not None}, step)
        tape.backward(loss)

        if dual:
            # Detached statistics are logged every batch; gradients are
            # touched only when the CGM switch is on.
            state = compute_modulation(out.logits[0].data, out.logits[1].data,
                                       yb, config.alpha, config.epsilon)
            record["s_res"] = state.s_res
            record["s_dense"] = state.s_dense
            record["r_res"] = state.r_res
            record["r_dense"] = state.r_dense
            if config.cgm:
                apply_modulation(res_group, dense_group, state.m_res, state.m_dense)
                record["m_res"] = state.m_res
                record["m_dense"] = state.m_dense
            else:
                record["m_res"] = None
                record["m_dense"] = None

        optimizer.step()
        records.append(record)
        step += 1
    return records


@dataclass
class TrainResult:
    net: object
    config: TrainConfig
    epoch_records: list
    batch_records: list

    @property
    def final_train_accuracy(self):
        return self.epoch_records[-1]["train_accuracy"] if self.epoch_records else None


def fit(train_dataset, config, partition=None, num_classes=None,
        track_train_accuracy=True):
    """Train a fresh network on `train_dataset` under `config`.

    Seed handling: the config seed spawns independent streams for
    initialization, batch shuffling, and augmentation, so toggling
    switches that consume no randomness leaves the others untouched.
    """
    if len(train_dataset) == 0:
        raise ContractError("fit: dataset is empty")
    partition = partition or train_dataset.partition
    if num_classes is None:
        num_classes = train_dataset.num_classes

    init_ss, shuffle_ss, augment_ss = np.random.SeedSequence(config.seed).spawn(3)
    net = build_network(config, num_classes, partition=partition,
                        num_channels=train_dataset.num_channels,
                        rng=np.random.default_rng(init_ss))
    optimizer = make_optimizer(config.optimizer, net.parameters(), config.lr,
                               config.momentum_beta, config.weight_decay)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    augment_rng = np.random.default_rng(augment_ss)

    epoch_records = []
    batch_records = []
    step = 0
    for epoch in range(config.epochs):
        records = train_epoch(net, train_dataset, config, optimizer,
                              shuffle_rng, augment_rng, epoch, step)
        step += len(records)
        batch_records.extend(records)
        summary = {
            "epoch": epoch,
            "mean_total_loss": float(np.mean([r["loss_total"] for r in records])),
        }
        if track_train_accuracy:
            cm, _ = evaluate(net, train_dataset)
            summary["train_accuracy"] = float(
                np.trace(cm.counts) / max(cm.total, 1)
            )
        epoch_records.append(summary)
    return TrainResult(net, config, epoch_records, batch_records)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def predict_logits(net, dataset, batch_size=256):
    """Eval-mode logits for every window, keyed by head name."""
    heads = ("res", "dense", "fusion") if isinstance(net, DualPathNetwork) else ("fusion",)
    collected = {h: [] for h in heads}
    for lo in range(0, len(dataset), batch_size):
        xb = Tensor(dataset.windows[lo:lo + batch_size])
        if isinstance(net, DualPathNetwork):
            out = net.forward(xb, training=False)
            for h, logits in zip(heads, out.logits):
                collected[h].append(logits.data)
        else:
            collected["fusion"].append(net.forward(xb, training=False).data)
    return {h: np.concatenate(parts) for h, parts in collected.items()}


def evaluate(net, dataset, batch_size=256):
    """Confusion matrix and metrics from fusion-head argmax predictions.

    Argmax ties resolve toward the lower class index.
    """
    if len(dataset) == 0:
        raise ContractError("evaluate: dataset is empty")
    logits = predict_logits(net, dataset, batch_size)["fusion"]
    predictions = logits.argmax(axis=1)
    cm = ConfusionMatrix.from_predictions(dataset.labels, predictions, net.num_classes)
    return cm, metrics_from_confusion(cm)


def head_accuracies(net, dataset, batch_size=256):
    """Standalone accuracy of every classifier head."""
    all_logits = predict_logits(net, dataset, batch_size)
    return {
        head: float((logits.argmax(axis=1) == dataset.labels).mean())
        for head, logits in all_logits.items()
    }


# ---------------------------------------------------------------------------
# ablation runner
# ---------------------------------------------------------------------------

VARIANT_PRESETS = {
    "full": {},
    "-cl": {"cl": False},
    "-cgm": {"cgm": False},
    "-da": {"da": False},
    "baseline": {"dpfe": False, "cl": False, "cgm": False},
}


def resolve_variant(name):
    key = name.lower()
    if key not in VARIANT_PRESETS:
        raise ContractError(
            f"unknown ablation variant {name!r}; choose from {sorted(VARIANT_PRESETS)}"
        )
    return VARIANT_PRESETS[key]


@dataclass
class AblationRow:
    variant: str
    seed: int
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    f1_weighted: float


@dataclass
class AblationReport:
    rows: list
    medians: dict  # variant -> metric -> float

    def as_dict(self):
        return {
            "rows": [asdict(r) for r in self.rows],
            "medians": self.medians,
        }


def run_ablation(train_dataset, test_dataset, base_config, variants=None,
                 seeds=(0, 1, 2)):
    """Train each variant under each seed; report per-seed and median metrics."""
    if variants is None:
        variants = ["full", "-cl", "-cgm"]
    rows = []
    medians = {}
    for variant in variants:
        overrides = resolve_variant(variant)
        per_seed = []
        for seed in seeds:
            config = replace(base_config, seed=seed, **overrides)
            result = fit(train_dataset, config, track_train_accuracy=False)
            _, report = evaluate(result.net, test_dataset)
            row = AblationRow(
                variant=variant, seed=seed,
                accuracy=report.accuracy,
                precision_macro=report.precision_macro,
                recall_macro=report.recall_macro,
                f1_macro=report.f1_macro,
                f1_weighted=report.f1_weighted,
            )
            rows.append(row)
            per_seed.append(row)
        medians[variant] = {
            metric: float(np.median([getattr(r, metric) for r in per_seed]))
            for metric in ("accuracy", "precision_macro", "recall_macro",
                           "f1_macro", "f1_weighted")
        }
    return AblationReport(rows, medians)


def format_ablation(report):
    """Render the median table (per-seed rows below)."""
    lines = [
        f"{'variant':>10}  {'ACC':>8}  {'Precision':>9}  {'Recall':>8}  {'F1':>8}",
    ]
    for variant, med in report.medians.items():
        lines.append(
            f"{variant:>10}  {med['accuracy']:8.4f}  {med['precision_macro']:9.4f}"
            f"  {med['recall_macro']:8.4f}  {med['f1_macro']:8.4f}"
        )
    if report.rows:
        lines.append("")
        lines.append(f"{'variant':>10}  {'seed':>4}  {'ACC':>8}  {'F1':>8}")
        for r in report.rows:
            lines.append(f"{r.variant:>10}  {r.seed:4d}  {r.accuracy:8.4f}  {r.f1_macro:8.4f}")
    return "\n".join(lines)
