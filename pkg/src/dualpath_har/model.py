"""The dual-path backbone: channel partitioning, a residual path and a
densely-connected path over 1-D sensor windows, per-stage projection
heads, and three classifiers (one per path plus a fusion head).

Both paths run four stages. Residual stages downsample with a stride-2
first block (1x1 projection shortcut at boundaries); dense stages end
with a transition (1x1 conv to the configured stage width, plus a
stride-2 average pool between stages) so the final feature widths of
the two paths can be pinned equal for the alignment loss. Stage taps
are taken after the full stage, transition included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    BatchNormState,
    Parameter,
    Tensor,
    avg_pool1d,
    batchnorm1d,
    concat,
    conv1d,
    global_avg_pool,
    linear,
    relu,
    transpose,
)
from .errors import ContractError, DegenerateBatchError, ShapeError

NUM_STAGES = 4


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelPartition:
    """Two disjoint, covering, non-empty channel index sets."""

    index_set_1: tuple
    index_set_2: tuple
    total_channels: int

    def __post_init__(self):
        i1 = tuple(sorted(int(i) for i in self.index_set_1))
        i2 = tuple(sorted(int(i) for i in self.index_set_2))
        object.__setattr__(self, "index_set_1", i1)
        object.__setattr__(self, "index_set_2", i2)
        if not i1 or not i2:
            raise ContractError("partition: both index sets must be non-empty")
        if set(i1) & set(i2):
            raise ContractError(f"partition: index sets overlap: {set(i1) & set(i2)}")
        if set(i1) | set(i2) != set(range(self.total_channels)):
            raise ContractError(
                f"partition: sets {i1} and {i2} do not cover 0..{self.total_channels - 1}"
            )

    @classmethod
    def contiguous(cls, first, second):
        """First `first` channels to path 1, next `second` to path 2."""
        return cls(tuple(range(first)), tuple(range(first, first + second)), first + second)

    @classmethod
    def from_channel_names(cls, names, key="acc"):
        """Default heuristic: channels whose name contains `key` go to path 1."""
        i1 = tuple(i for i, n in enumerate(names) if key in n.lower())
        i2 = tuple(i for i, n in enumerate(names) if key not in n.lower())
        if not i1 or not i2:
            raise ContractError(
                f"partition heuristic with key {key!r} produced an empty set; "
                "specify explicit channel index lists"
            )
        return cls(i1, i2, len(names))


def _doubling_widths(base_width):
    return tuple(base_width * (2 ** i) for i in range(NUM_STAGES))


@dataclass(frozen=True)
class ResidualPathConfig:
    blocks_per_stage: tuple = (1, 1, 1, 1)
    base_width: int = 8
    stage_widths: tuple = ()
    stage_strides: tuple = (1, 2, 2, 2)
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_stage", tuple(self.blocks_per_stage))
        widths = tuple(self.stage_widths) or _doubling_widths(self.base_width)
        object.__setattr__(self, "stage_widths", widths)
        object.__setattr__(self, "stage_strides", tuple(self.stage_strides))
        if len(self.blocks_per_stage) != NUM_STAGES:
            raise ContractError(
                f"blocks_per_stage needs {NUM_STAGES} entries, got {self.blocks_per_stage}"
            )
        if any(b < 1 for b in self.blocks_per_stage):
            raise ContractError(f"blocks_per_stage entries must be >= 1: {self.blocks_per_stage}")
        if len(widths) != NUM_STAGES or any(w < 1 for w in widths):
            raise ContractError(f"stage_widths needs {NUM_STAGES} positive entries: {widths}")
        if len(self.stage_strides) != NUM_STAGES:
            raise ContractError(f"stage_strides needs {NUM_STAGES} entries")

    @property
    def out_dim(self):
        return self.stage_widths[-1]


@dataclass(frozen=True)
class DensePathConfig:
    layers_per_stage: tuple = (2, 2, 2, 2)
    growth_rate: int = 8
    stem_channels: int = 8
    stage_widths: tuple = ()
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "layers_per_stage", tuple(self.layers_per_stage))
        widths = tuple(self.stage_widths) or _doubling_widths(self.stem_channels)
        object.__setattr__(self, "stage_widths", widths)
        if len(self.layers_per_stage) != NUM_STAGES:
            raise ContractError(
                f"layers_per_stage needs {NUM_STAGES} entries, got {self.layers_per_stage}"
            )
        if any(n < 1 for n in self.layers_per_stage):
            raise ContractError(f"layers_per_stage entries must be >= 1: {self.layers_per_stage}")
        if self.growth_rate < 1:
            raise ContractError(f"growth_rate must be >= 1, got {self.growth_rate}")
        if len(widths) != NUM_STAGES or any(w < 1 for w in widths):
            raise ContractError(f"stage_widths needs {NUM_STAGES} positive entries: {widths}")

    @property
    def out_dim(self):
        return self.stage_widths[-1]


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def _he_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base for parameterized components; children found by attribute walk."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            yield from _walk_params(f"{prefix}{name}", value)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            yield from _walk_buffers(f"{prefix}{name}", value)

    def local_buffers(self):
        return ()


def _walk_params(name, value):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Layer):
        yield from value.named_parameters(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_params(f"{name}.{i}", item)


def _walk_buffers(name, value):
    if isinstance(value, Layer):
        for local, arr in value.local_buffers():
            yield f"{name}.{local}", arr
        yield from value.named_buffers(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_buffers(f"{name}.{i}", item)


class Conv1d(Layer):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0):
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size
        self.weight = Parameter(
            _he_uniform(rng, (out_channels, in_channels, kernel_size), fan_in), "weight"
        )
        self.bias = Parameter(np.zeros(out_channels), "bias")

    def __call__(self, x):
        return conv1d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Layer):
    def __init__(self, in_dim, out_dim, rng):
        self.weight = Parameter(_he_uniform(rng, (out_dim, in_dim), in_dim), "weight")
        self.bias = Parameter(np.zeros(out_dim), "bias")

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class BatchNorm1d(Layer):
    def __init__(self, num_channels, decay=0.9, eps=1e-5):
        self.gamma = Parameter(np.ones(num_channels), "gamma")
        self.beta = Parameter(np.zeros(num_channels), "beta")
        self.state = BatchNormState(num_channels, decay=decay, eps=eps)

    def __call__(self, x, training):
        return batchnorm1d(x, self.gamma, self.beta, self.state, training)

    def local_buffers(self):
        return (("running_mean", self.state.running_mean),
                ("running_var", self.state.running_var))


class ResidualBlock(Layer):
    """Pre-activation residual block: out = shortcut(h) + conv(relu(bn(...)))."""

    def __init__(self, in_channels, out_channels, rng, stride=1, kernel_size=3):
        pad = kernel_size // 2
        self.bn1 = BatchNorm1d(in_channels)
        self.conv1 = Conv1d(in_channels, out_channels, kernel_size, rng, stride, pad)
        self.bn2 = BatchNorm1d(out_channels)
        self.conv2 = Conv1d(out_channels, out_channels, kernel_size, rng, 1, pad)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Conv1d(in_channels, out_channels, 1, rng, stride, 0)
        else:
            self.shortcut = None

    def __call__(self, h, training):
        t = self.conv1(relu(self.bn1(h, training)))
        t = self.conv2(relu(self.bn2(t, training)))
        s = h if self.shortcut is None else self.shortcut(h)
        return s + t


class DenseLayer(Layer):
    """One dense recurrence step: concat(history) -> bn -> relu -> conv."""

    def __init__(self, in_channels, growth_rate, rng, kernel_size=3):
        self.bn = BatchNorm1d(in_channels)
        self.conv = Conv1d(in_channels, growth_rate, kernel_size, rng, 1, kernel_size // 2)

    def __call__(self, history, training):
        x = history[0] if len(history) == 1 else concat(history, axis=1)
        return self.conv(relu(self.bn(x, training)))


class DenseTransition(Layer):
    """Stage-boundary consolidation: 1x1 conv to the stage width, then
    a stride-2 average pool (pooling skipped after the final stage)."""

    def __init__(self, in_channels, out_channels, rng, pool=True):
        self.bn = BatchNorm1d(in_channels)
        self.conv = Conv1d(in_channels, out_channels, 1, rng, 1, 0)
        self.pool = pool

    def __call__(self, x, training):
        h = self.conv(relu(self.bn(x, training)))
        return avg_pool1d(h, 2) if self.pool else h


class ResidualPath(Layer):
    def __init__(self, in_channels, cfg: ResidualPathConfig, rng):
        k = cfg.kernel_size
        self.stem_conv = Conv1d(in_channels, cfg.stage_widths[0], k, rng, 1, k // 2)
        self.stem_bn = BatchNorm1d(cfg.stage_widths[0])
        self.stages = []
        width = cfg.stage_widths[0]
        for s in range(NUM_STAGES):
            blocks = []
            for b in range(cfg.blocks_per_stage[s]):
                stride = cfg.stage_strides[s] if b == 0 else 1
                blocks.append(ResidualBlock(width, cfg.stage_widths[s], rng, stride, k))
                width = cfg.stage_widths[s]
            self.stages.append(blocks)

    def __call__(self, x, training):
        h = relu(self.stem_bn(self.stem_conv(x), training))
        taps = []
        for blocks in self.stages:
            for block in blocks:
                h = block(h, training)
            taps.append(h)
        return taps


class DensePath(Layer):
    def __init__(self, in_channels, cfg: DensePathConfig, rng):
        k = cfg.kernel_size
        self.stem_conv = Conv1d(in_channels, cfg.stem_channels, k, rng, 1, k // 2)
        self.stem_bn = BatchNorm1d(cfg.stem_channels)
        self.stages = []
        self.transitions = []
        width = cfg.stem_channels
        for s in range(NUM_STAGES):
            layers = []
            for _ in range(cfg.layers_per_stage[s]):
                layers.append(DenseLayer(width, cfg.growth_rate, rng, k))
                width += cfg.growth_rate
            self.stages.append(layers)
            self.transitions.append(
                DenseTransition(width, cfg.stage_widths[s], rng, pool=s < NUM_STAGES - 1)
            )
            width = cfg.stage_widths[s]

    def __call__(self, x, training):
        h = relu(self.stem_bn(self.stem_conv(x), training))
        taps = []
        for layers, transition in zip(self.stages, self.transitions):
            history = [h]
            for layer in layers:
                history.append(layer(history, training))
            h = transition(concat(history, axis=1), training)
            taps.append(h)
        return taps


class ProjectionHead(Layer):
    """GAP over time, then a 2-layer MLP into the shared embedding space."""

    def __init__(self, in_channels, out_dim, rng):
        self.fc1 = Linear(in_channels, out_dim, rng)
        self.fc2 = Linear(out_dim, out_dim, rng)

    def __call__(self, feature_map):
        return self.fc2(relu(self.fc1(global_avg_pool(feature_map))))


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

@dataclass
class ForwardOutputs:
    """Everything a training step needs from one forward pass."""

    stage_projections: list          # L pairs (z_res, z_dense), each [N, d_proj]
    pooled: tuple                    # (h_res [N,d_res], h_dense [N,d_dense])
    logits: tuple                    # (res, dense, fusion), each [N,C]
    aligned_pooled: tuple = None     # pooled pair with the adapter applied, equal dims


def partition_input(x, partition: ChannelPartition):
    """Split [N,T,F] into the two modality tensors by channel index."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim != 3:
        raise ShapeError(f"partition_input: expected [N,T,F], got {data.shape}")
    if data.shape[2] != partition.total_channels:
        raise ShapeError(
            f"partition_input: input has {data.shape[2]} channels, "
            f"partition covers {partition.total_channels}"
        )
    x1 = Tensor(data[:, :, list(partition.index_set_1)])
    x2 = Tensor(data[:, :, list(partition.index_set_2)])
    return x1, x2


def merge_partition(x1, x2, partition: ChannelPartition):
    """Inverse of :func:`partition_input` (for round-trip checks)."""
    d1 = x1.data if isinstance(x1, Tensor) else np.asarray(x1)
    d2 = x2.data if isinstance(x2, Tensor) else np.asarray(x2)
    n, t = d1.shape[0], d1.shape[1]
    out = np.empty((n, t, partition.total_channels))
    out[:, :, list(partition.index_set_1)] = d1
    out[:, :, list(partition.index_set_2)] = d2
    return Tensor(out)


class DualPathNetwork(Layer):
    def __init__(self, partition, res_config=None, dense_config=None,
                 num_classes=2, d_proj=32, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.partition = partition
        self.res_config = res_config or ResidualPathConfig()
        self.dense_config = dense_config or DensePathConfig()
        self.num_classes = num_classes
        self.d_proj = d_proj

        f1 = len(partition.index_set_1)
        f2 = len(partition.index_set_2)
        self.res_path = ResidualPath(f1, self.res_config, rng)
        self.dense_path = DensePath(f2, self.dense_config, rng)
        self.res_heads = [
            ProjectionHead(self.res_config.stage_widths[s], d_proj, rng)
            for s in range(NUM_STAGES)
        ]
        self.dense_heads = [
            ProjectionHead(self.dense_config.stage_widths[s], d_proj, rng)
            for s in range(NUM_STAGES)
        ]
        d_res = self.res_config.out_dim
        d_dense = self.dense_config.out_dim
        self.res_classifier = Linear(d_res, num_classes, rng)
        self.dense_classifier = Linear(d_dense, num_classes, rng)
        self.fusion_classifier = Linear(d_res + d_dense, num_classes, rng)
        # Fallback adapter so the alignment loss stays well-defined when
        # the configured final widths differ.
        self.align_adapter = Linear(d_dense, d_res, rng) if d_res != d_dense else None
        finalize_parameter_ids(self)

    def forward(self, x, training=True):
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        if training and data.shape[0] < 2:
            raise DegenerateBatchError(
                f"forward: train mode needs a batch of >= 2 windows, got {data.shape[0]}"
            )
        x1, x2 = partition_input(x, self.partition)
        res_taps = self.res_path(transpose(x1, (0, 2, 1)), training)
        dense_taps = self.dense_path(transpose(x2, (0, 2, 1)), training)

        projections = [
            (self.res_heads[s](res_taps[s]), self.dense_heads[s](dense_taps[s]))
            for s in range(NUM_STAGES)
        ]
        h_res = global_avg_pool(res_taps[-1])
        h_dense = global_avg_pool(dense_taps[-1])
        logits = (
            self.res_classifier(h_res),
            self.dense_classifier(h_dense),
            self.fusion_classifier(concat([h_res, h_dense], axis=1)),
        )
        aligned = (h_res, h_dense if self.align_adapter is None else self.align_adapter(h_dense))
        return ForwardOutputs(projections, (h_res, h_dense), logits, aligned)

    def classifier_parameters(self):
        """Per-branch classifier parameter groups (modulation targets)."""
        return self.res_classifier.parameters(), self.dense_classifier.parameters()

    def backbone_parameters(self):
        """Per-branch backbone groups (optional extended modulation scope)."""
        return self.res_path.parameters(), self.dense_path.parameters()


class ResidualBaselineNetwork(Layer):
    """Single residual pathway over all channels; one classifier."""

    def __init__(self, num_channels, res_config=None, num_classes=2, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.num_channels = num_channels
        self.res_config = res_config or ResidualPathConfig()
        self.num_classes = num_classes
        self.res_path = ResidualPath(num_channels, self.res_config, rng)
        self.classifier = Linear(self.res_config.out_dim, num_classes, rng)
        finalize_parameter_ids(self)

    def forward(self, x, training=True):
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        if training and data.shape[0] < 2:
            raise DegenerateBatchError(
                f"forward: train mode needs a batch of >= 2 windows, got {data.shape[0]}"
            )
        x = x if isinstance(x, Tensor) else Tensor(x)
        taps = self.res_path(transpose(x, (0, 2, 1)), training)
        return self.classifier(global_avg_pool(taps[-1]))


def finalize_parameter_ids(net):
    """Assign dotted-path ids to every parameter; ids must be unique."""
    seen = set()
    for name, p in net.named_parameters():
        p.id = name
        if name in seen:
            raise ContractError(f"duplicate parameter id {name}")
        seen.add(name)
