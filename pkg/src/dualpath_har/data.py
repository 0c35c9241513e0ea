"""Sensor data ingestion, windowing, normalization, splitting, caching,
and a synthetic multimodal generator with a dominance knob.

Canonical CSV layout: one UTF-8 header row naming F channel columns
followed by one label column, comma separated, dot decimal. Labels are
integer activity ids (or strings resolved through the schema's
``label_map``).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParseError, SchemaError
from .model import ChannelPartition

CACHE_FORMAT = "dualpath-har-dataset"
CACHE_VERSION = 1


@dataclass
class SensorRecording:
    samples: np.ndarray        # [T_total, F]
    labels: np.ndarray         # [T_total] int
    channel_names: list
    sample_rate_hz: float = 1.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2:
            raise ContractError(f"samples must be [T,F], got {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise ContractError(
                f"labels length {self.labels.shape} does not match T={self.samples.shape[0]}"
            )


@dataclass
class CsvSchema:
    label_column: str = "label"
    label_map: dict | None = None
    sample_rate_hz: float = 1.0


@dataclass
class ChannelStats:
    mean: np.ndarray  # [F]
    std: np.ndarray   # [F], floored at 1e-8


@dataclass
class WindowedDataset:
    windows: np.ndarray                  # [M, W, F]
    labels: np.ndarray                   # [M]
    window_len: int
    stride: int
    normalization: ChannelStats | None = None
    partition: ChannelPartition | None = None

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.windows.ndim != 3:
            raise ContractError(f"windows must be [M,W,F], got {self.windows.shape}")
        if self.labels.shape != (self.windows.shape[0],):
            raise ContractError("labels length does not match window count")

    def __len__(self):
        return self.windows.shape[0]

    @property
    def num_channels(self):
        return self.windows.shape[2]

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, indices):
        return WindowedDataset(
            self.windows[indices], self.labels[indices], self.window_len,
            self.stride, self.normalization, self.partition,
        )


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def load_csv(path, schema=None):
    """Parse the canonical CSV layout into a SensorRecording."""
    schema = schema or CsvSchema()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty, expected a header row") from None
        header = [h.strip() for h in header]
        if schema.label_column not in header:
            raise SchemaError(
                f"{path}: header {header} is missing label column {schema.label_column!r}"
            )
        label_idx = header.index(schema.label_column)
        channel_names = [h for i, h in enumerate(header) if i != label_idx]
        channel_idx = [i for i in range(len(header)) if i != label_idx]

        samples = []
        labels = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: line {line_no}: expected {len(header)} cells, got {len(row)}",
                    line_number=line_no,
                )
            try:
                samples.append([float(row[i]) for i in channel_idx])
            except ValueError:
                raise ParseError(
                    f"{path}: line {line_no}: non-numeric sensor value in {row}",
                    line_number=line_no,
                ) from None
            labels.append(_parse_label(row[label_idx].strip(), schema, path, line_no))

    samples = np.asarray(samples, dtype=np.float64).reshape(len(samples), len(channel_names))
    return SensorRecording(samples, np.asarray(labels, dtype=np.int64),
                           channel_names, schema.sample_rate_hz)


def _parse_label(cell, schema, path, line_no):
    if schema.label_map is not None:
        if cell in schema.label_map:
            return int(schema.label_map[cell])
        raise SchemaError(f"{path}: line {line_no}: unknown label {cell!r}")
    try:
        return int(cell)
    except ValueError:
        raise SchemaError(
            f"{path}: line {line_no}: label {cell!r} is not an integer and no "
            "label_map was provided"
        ) from None


# ---------------------------------------------------------------------------
# windowing / normalization / splitting
# ---------------------------------------------------------------------------

def sliding_windows(recording, window_len, stride):
    """Segment a recording into fixed windows with majority-vote labels.

    Window count is floor((T - W)/stride) + 1. Label ties are broken
    toward the tied label occurring latest in the window.
    """
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    t_total = recording.samples.shape[0]
    if window_len > t_total:
        warnings.warn(
            f"window length {window_len} exceeds recording length {t_total}; "
            "produced 0 windows"
        )
        f = recording.samples.shape[1]
        return WindowedDataset(
            np.zeros((0, window_len, f)), np.zeros(0, dtype=np.int64),
            window_len, stride,
        )
    count = (t_total - window_len) // stride + 1
    windows = np.empty((count, window_len, recording.samples.shape[1]))
    labels = np.empty(count, dtype=np.int64)
    for m in range(count):
        lo = m * stride
        seg_labels = recording.labels[lo:lo + window_len]
        windows[m] = recording.samples[lo:lo + window_len]
        labels[m] = _majority_label(seg_labels)
    return WindowedDataset(windows, labels, window_len, stride)


def _majority_label(seg_labels):
    counts = np.bincount(seg_labels)
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    if len(tied) == 1:
        return int(tied[0])
    # tie: prefer the tied label whose last occurrence is latest
    last_seen = {int(lab): idx for idx, lab in enumerate(seg_labels)}
    return int(max(tied, key=lambda lab: last_seen[int(lab)]))


def merge_windowed(fragments):
    """Concatenate per-recording window sets in recording order."""
    fragments = [f for f in fragments if len(f)]
    if not fragments:
        raise ContractError("merge_windowed: no non-empty fragments")
    first = fragments[0]
    for f in fragments[1:]:
        if f.windows.shape[1:] != first.windows.shape[1:]:
            raise ContractError(
                f"merge_windowed: window shapes differ: {first.windows.shape} vs {f.windows.shape}"
            )
    return WindowedDataset(
        np.concatenate([f.windows for f in fragments]),
        np.concatenate([f.labels for f in fragments]),
        first.window_len, first.stride, first.normalization, first.partition,
    )


def fit_normalizer(train_windows):
    """Per-channel mean and population std over all training values."""
    windows = np.asarray(train_windows, dtype=np.float64)
    flat = windows.reshape(-1, windows.shape[2])
    if flat.shape[0] < 2:
        raise ContractError(
            f"fit_normalizer: need at least 2 values per channel, got {flat.shape[0]}"
        )
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), 1e-8)
    return ChannelStats(mean, std)


def apply_normalizer(windows, stats):
    return (np.asarray(windows, dtype=np.float64) - stats.mean) / stats.std


def normalize_dataset(train, test=None):
    """Fit stats on the training split only, apply to both splits."""
    stats = fit_normalizer(train.windows)
    train_norm = WindowedDataset(
        apply_normalizer(train.windows, stats), train.labels, train.window_len,
        train.stride, stats, train.partition,
    )
    if test is None:
        return train_norm
    test_norm = WindowedDataset(
        apply_normalizer(test.windows, stats), test.labels, test.window_len,
        test.stride, stats, test.partition,
    )
    return train_norm, test_norm


def stratified_split(dataset, test_fraction, seed):
    """Split per class, preserving proportions within one window."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx = []
    test_idx = []
    for cls in np.unique(dataset.labels):
        members = np.flatnonzero(dataset.labels == cls)
        if members.size < 2:
            raise ContractError(
                f"stratified_split: class {int(cls)} has only {members.size} window(s)"
            )
        order = rng.permutation(members)
        n_test = int(round(test_fraction * members.size))
        n_test = min(max(n_test, 1), members.size - 1)
        test_idx.append(order[:n_test])
        train_idx.append(order[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return dataset.subset(train_idx), dataset.subset(test_idx)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    classes: int = 4
    channels_modality_1: int = 3
    channels_modality_2: int = 3
    window_len: int = 64
    samples_per_class: int = 16
    dominance: float = 0.5    # fraction of discriminative amplitude on modality 1
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dominance <= 1.0:
            raise ContractError(f"dominance must be in [0, 1], got {self.dominance}")
        for name in ("classes", "channels_modality_1", "channels_modality_2",
                     "window_len", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")


def synth_templates(cfg):
    """Class-specific sinusoid templates, one per (class, channel).

    Frequencies are distinct per class and drift slightly per channel;
    phases are drawn once from the config seed. Amplitudes are applied
    by the generator (dominance on modality 1, complement on 2).
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    f = cfg.channels_modality_1 + cfg.channels_modality_2
    t = np.arange(cfg.window_len) / cfg.window_len
    templates = np.empty((cfg.classes, f, cfg.window_len))
    for cls in range(cfg.classes):
        for ch in range(f):
            freq = 1.0 + cls + 0.37 * ch
            phase = rng.uniform(0.0, 2.0 * np.pi)
            templates[cls, ch] = np.sin(2.0 * np.pi * freq * t + phase)
    return templates


def synth_amplitudes(cfg):
    """Per-channel template amplitude: dominance on modality 1 channels,
    (1 - dominance) on modality 2 channels."""
    amp = np.empty(cfg.channels_modality_1 + cfg.channels_modality_2)
    amp[:cfg.channels_modality_1] = cfg.dominance
    amp[cfg.channels_modality_1:] = 1.0 - cfg.dominance
    return amp


def synth_generate(cfg):
    """Deterministic synthetic multimodal dataset (pure function of cfg)."""
    templates = synth_templates(cfg)
    amp = synth_amplitudes(cfg)
    f = amp.size
    m = cfg.classes * cfg.samples_per_class

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    windows = np.empty((m, cfg.window_len, f))
    labels = np.repeat(np.arange(cfg.classes), cfg.samples_per_class)
    for i in range(m):
        clean = (amp[:, None] * templates[labels[i]]).T  # [W,F]
        noise = rng.normal(0.0, cfg.noise_std, size=(cfg.window_len, f)) if cfg.noise_std > 0 else 0.0
        windows[i] = clean + noise
    order = rng.permutation(m)
    partition = ChannelPartition.contiguous(cfg.channels_modality_1, cfg.channels_modality_2)
    return WindowedDataset(windows[order], labels[order], cfg.window_len,
                           cfg.window_len, partition=partition)


# ---------------------------------------------------------------------------
# dataset cache
# ---------------------------------------------------------------------------

def save_dataset(dataset, path):
    """Write a WindowedDataset to a versioned npz container (bit-exact)."""
    meta = {
        "format": CACHE_FORMAT,
        "version": CACHE_VERSION,
        "window_len": dataset.window_len,
        "stride": dataset.stride,
        "has_normalization": dataset.normalization is not None,
        "partition": None if dataset.partition is None else {
            "index_set_1": list(dataset.partition.index_set_1),
            "index_set_2": list(dataset.partition.index_set_2),
            "total_channels": dataset.partition.total_channels,
        },
    }
    arrays = {"windows": dataset.windows, "labels": dataset.labels}
    if dataset.normalization is not None:
        arrays["norm_mean"] = dataset.normalization.mean
        arrays["norm_std"] = dataset.normalization.std
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_dataset(path):
    with np.load(path) as bundle:
        try:
            meta = json.loads(bundle["__meta__"].tobytes().decode())
        except KeyError:
            raise SchemaError(f"{path}: not a dataset cache (missing metadata)") from None
        if meta.get("format") != CACHE_FORMAT:
            raise SchemaError(f"{path}: unexpected cache format {meta.get('format')!r}")
        if meta.get("version") != CACHE_VERSION:
            raise SchemaError(f"{path}: unsupported cache version {meta.get('version')}")
        normalization = None
        if meta["has_normalization"]:
            normalization = ChannelStats(bundle["norm_mean"], bundle["norm_std"])
        partition = None
        if meta["partition"] is not None:
            p = meta["partition"]
            partition = ChannelPartition(
                tuple(p["index_set_1"]), tuple(p["index_set_2"]), p["total_channels"]
            )
        return WindowedDataset(
            bundle["windows"], bundle["labels"], meta["window_len"],
            meta["stride"], normalization, partition,
        )
