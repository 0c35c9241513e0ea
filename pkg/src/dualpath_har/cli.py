"""Command-line interface.

Subcommands: ``synth`` (generate a dataset cache), ``train``, ``eval``,
``ablate``, ``gradcheck``, ``report``. Training options can come from a
YAML config file; explicit command-line flags override file values.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import kernels
from .autodiff import Tensor, cross_entropy
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    CsvSchema,
    SynthConfig,
    load_csv,
    load_dataset,
    normalize_dataset,
    save_dataset,
    sliding_windows,
    stratified_split,
    synth_generate,
)
from .errors import (
    ContractError,
    DataError,
    LabelError,
    NonFiniteLossError,
    ShapeError,
    UsageError,
)
from .gradcheck import finite_diff_check
from .metrics import format_report
from .model import (
    ChannelPartition,
    DensePathConfig,
    DualPathNetwork,
    ResidualPathConfig,
)
from .trainer import (
    TrainConfig,
    evaluate,
    fit,
    format_ablation,
    head_accuracies,
    run_ablation,
    total_loss,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="dualpath-har",
                     description="Dual-path HAR training engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset cache")
    p_synth.add_argument("--classes", type=int, default=4)
    p_synth.add_argument("--channels1", type=int, default=3)
    p_synth.add_argument("--channels2", type=int, default=3)
    p_synth.add_argument("--window-len", type=int, default=64)
    p_synth.add_argument("--per-class", type=int, default=16)
    p_synth.add_argument("--dominance", type=float, default=0.5)
    p_synth.add_argument("--noise-std", type=float, default=0.1)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--out", required=True)

    p_train = sub.add_parser("train", help="train on a dataset cache or CSV")
    _add_data_args(p_train)
    _add_config_args(p_train)
    p_train.add_argument("--seed", type=int, required=True)
    p_train.add_argument("--out-dir", required=True)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    _add_data_args(p_eval)
    p_eval.add_argument("--out-dir", default=None)

    p_abl = sub.add_parser("ablate", help="train component-removal variants")
    _add_data_args(p_abl)
    _add_config_args(p_abl)
    p_abl.add_argument("--seed", type=int, required=True,
                       help="base seed; per-run seeds are seed, seed+1, seed+2")
    p_abl.add_argument("--num-seeds", type=int, default=3)
    p_abl.add_argument("--grid", default="full,-cl,-cgm",
                       help="comma-separated variants (full,-cl,-cgm,-da,baseline); empty for none")
    p_abl.add_argument("--test-fraction", type=float, default=0.5)
    p_abl.add_argument("--out-dir", default=None)

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of a miniature network")
    p_grad.add_argument("--batch", type=int, default=4)
    p_grad.add_argument("--time-steps", type=int, default=16)
    p_grad.add_argument("--channels", type=int, default=4)
    p_grad.add_argument("--classes", type=int, default=3)
    p_grad.add_argument("--perturbation", type=float, default=1e-5)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.add_argument("--seed", type=int, default=0)

    p_rep = sub.add_parser("report", help="summarize a training log or ablation output")
    p_rep.add_argument("--log", default=None, help="per-batch JSONL training log")
    p_rep.add_argument("--ablation", default=None, help="ablation report JSON")
    p_rep.add_argument("--metrics", default=None, help="metrics report JSON")

    return parser


def _add_data_args(p):
    p.add_argument("--data", default=None, help="dataset cache (.npz)")
    p.add_argument("--csv", default=None, help="raw recording in the canonical CSV layout")
    p.add_argument("--label-column", default="label")
    p.add_argument("--window-len", type=int, default=64)
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--partition", default=None,
                   help="explicit channel split, e.g. '0,1,2|3,4,5' (CSV default: acc-name heuristic)")


def _add_config_args(p):
    # Defaults are None so the YAML file can be distinguished from
    # explicit flags; unset values fall back to TrainConfig defaults.
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lambda-align", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--optimizer", choices=["adamw", "momentum"], default=None)
    p.add_argument("--momentum-beta", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--d-proj", type=int, default=None)
    for switch in ("dpfe", "cl", "cgm", "da"):
        p.add_argument(f"--{switch}", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--cgm-scope", choices=["classifiers", "classifiers+backbone"],
                   default=None)


_CONFIG_FLAGS = (
    "epochs", "batch_size", "lr", "lambda_align", "temperature", "alpha",
    "optimizer", "momentum_beta", "weight_decay", "d_proj",
    "dpfe", "cl", "cgm", "da", "cgm_scope",
)


def _build_train_config(args, seed):
    raw = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise DataError(f"{path}: config file must contain a mapping")
        raw.update(loaded)
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    raw["seed"] = seed
    return TrainConfig.from_dict(raw)


def _parse_partition(spec, total):
    left, _, right = spec.partition("|")
    i1 = tuple(int(v) for v in left.split(",") if v.strip() != "")
    i2 = tuple(int(v) for v in right.split(",") if v.strip() != "")
    return ChannelPartition(i1, i2, total)


def _load_data(args):
    if bool(args.data) == bool(args.csv):
        raise UsageError("provide exactly one of --data or --csv")
    if args.data:
        dataset = load_dataset(args.data)
    else:
        recording = load_csv(args.csv, CsvSchema(label_column=args.label_column))
        dataset = sliding_windows(recording, args.window_len, args.stride)
        if args.partition is None:
            dataset.partition = ChannelPartition.from_channel_names(recording.channel_names)
    if args.partition is not None:
        dataset.partition = _parse_partition(args.partition, dataset.num_channels)
    if dataset.partition is None:
        raise DataError("dataset has no channel partition; pass --partition")
    return dataset


def _write_metrics(out_dir, cm, report, heads):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(
        json.dumps({"metrics": report.as_dict(), "head_accuracies": heads}, indent=2) + "\n"
    )
    (out_dir / "confusion_matrix.csv").write_text(cm.to_csv())
    (out_dir / "metrics.txt").write_text(format_report(report) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    cfg = SynthConfig(
        classes=args.classes,
        channels_modality_1=args.channels1,
        channels_modality_2=args.channels2,
        window_len=args.window_len,
        samples_per_class=args.per_class,
        dominance=args.dominance,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    dataset = synth_generate(cfg)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} windows "
          f"({cfg.classes} classes, dominance {cfg.dominance}) to {args.out}")
    return EXIT_OK


def cmd_train(args):
    dataset = _load_data(args)
    dataset = normalize_dataset(dataset)
    config = _build_train_config(args, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    result = fit(dataset, config)
    save_checkpoint(result.net, out_dir / "checkpoint.npz")
    with open(out_dir / "train_log.jsonl", "w") as fh:
        for record in result.batch_records:
            fh.write(json.dumps(record) + "\n")
    (out_dir / "epochs.json").write_text(json.dumps(result.epoch_records, indent=2) + "\n")
    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")

    cm, report = evaluate(result.net, dataset)
    heads = head_accuracies(result.net, dataset)
    _write_metrics(out_dir, cm, report, heads)
    print(f"[kernels:{kernels.BACKEND}] trained {config.epochs} epochs; "
          f"train accuracy {report.accuracy:.4f}")
    print(format_report(report))
    return EXIT_OK


def cmd_eval(args):
    net = load_checkpoint(args.checkpoint)
    dataset = _load_data(args)
    if dataset.normalization is None:
        dataset = normalize_dataset(dataset)
    cm, report = evaluate(net, dataset)
    heads = head_accuracies(net, dataset)
    if args.out_dir:
        _write_metrics(Path(args.out_dir), cm, report, heads)
    print(format_report(report))
    print("head accuracies: " + ", ".join(f"{k}={v:.4f}" for k, v in heads.items()))
    return EXIT_OK


def cmd_ablate(args):
    dataset = _load_data(args)
    train, test = stratified_split(dataset, args.test_fraction, seed=args.seed)
    train, test = normalize_dataset(train, test)
    config = _build_train_config(args, args.seed)
    variants = [v for v in (s.strip() for s in args.grid.split(",")) if v]
    seeds = tuple(args.seed + k for k in range(args.num_seeds))

    report = run_ablation(train, test, config, variants, seeds)
    text = format_ablation(report)
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n")
        (out_dir / "ablation.txt").write_text(text + "\n")
    print(text if report.rows else "empty grid: nothing to run")
    return EXIT_OK


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    half = max(args.channels // 2, 1)
    partition = ChannelPartition.contiguous(half, args.channels - half)
    net = DualPathNetwork(
        partition,
        ResidualPathConfig(blocks_per_stage=(1, 1, 1, 1), stage_widths=(4, 4, 4, 4)),
        DensePathConfig(layers_per_stage=(1, 1, 1, 1), growth_rate=4,
                        stem_channels=4, stage_widths=(4, 4, 4, 4)),
        num_classes=args.classes,
        d_proj=4,
        rng=rng,
    )
    x = Tensor(rng.normal(size=(args.batch, args.time_steps, args.channels)))
    labels = rng.integers(0, args.classes, size=args.batch)

    from .contrastive import (alignment_loss, cosine_similarity_matrix,
                              multi_stage_loss, stage_contrastive_loss)

    def loss_fn():
        out = net.forward(x, training=True)
        contrast = multi_stage_loss([
            stage_contrastive_loss(cosine_similarity_matrix(za, zb), 0.5)
            for za, zb in out.stage_projections
        ])
        align = alignment_loss(*out.aligned_pooled)
        return total_loss(
            cross_entropy(out.logits[0], labels),
            cross_entropy(out.logits[1], labels),
            cross_entropy(out.logits[2], labels),
            contrast, align, 0.7,
        )

    report = finite_diff_check(loss_fn, net.parameters(),
                               perturbation=args.perturbation,
                               tolerance=args.tolerance)
    for line in report.summary_lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def cmd_report(args):
    if not (args.log or args.ablation or args.metrics):
        raise UsageError("report needs --log, --ablation, or --metrics")
    if args.log:
        records = []
        with open(args.log) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        if not records:
            raise DataError(f"{args.log}: empty training log")
        losses = [r["loss_total"] for r in records]
        print(f"{len(records)} steps over {records[-1]['epoch'] + 1} epochs")
        print(f"loss_total first/min/last: {losses[0]:.4f} / {min(losses):.4f} / {losses[-1]:.4f}")
        ratios = [r["r_res"] for r in records if r.get("r_res") is not None]
        if ratios:
            applied = [r for r in records if r.get("m_res") is not None]
            suppressed = sum(
                1 for r in applied if min(r["m_res"], r["m_dense"]) < 1.0
            )
            print(f"median dominance ratio r_res: {float(np.median(ratios)):.4f}")
            if applied:
                print(f"modulated batches: {suppressed}/{len(applied)}")
    if args.ablation:
        raw = json.loads(Path(args.ablation).read_text())
        print(f"{'variant':>10}  {'ACC':>8}  {'Precision':>9}  {'Recall':>8}  {'F1':>8}")
        for variant, med in raw["medians"].items():
            print(f"{variant:>10}  {med['accuracy']:8.4f}  {med['precision_macro']:9.4f}"
                  f"  {med['recall_macro']:8.4f}  {med['f1_macro']:8.4f}")
    if args.metrics:
        raw = json.loads(Path(args.metrics).read_text())
        for key, value in raw.get("metrics", raw).items():
            print(f"{key}: {value}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, FileNotFoundError, ContractError, ShapeError, LabelError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
