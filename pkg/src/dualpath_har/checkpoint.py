"""Versioned model checkpoints.

An npz container holding every parameter and batch-norm buffer keyed by
its dotted id, plus a JSON header with the architecture (path configs,
partition, d_proj, class count). Loading rebuilds the network from the
header and restores values bit-exactly.
"""

import json
from dataclasses import asdict

import numpy as np

from .errors import SchemaError
from .model import (
    ChannelPartition,
    DensePathConfig,
    DualPathNetwork,
    ResidualBaselineNetwork,
    ResidualPathConfig,
)

CHECKPOINT_FORMAT = "dualpath-har-checkpoint"
CHECKPOINT_VERSION = 1


def _header(net):
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "num_classes": net.num_classes,
        "res_config": asdict(net.res_config),
    }
    if isinstance(net, DualPathNetwork):
        header["kind"] = "dual_path"
        header["dense_config"] = asdict(net.dense_config)
        header["d_proj"] = net.d_proj
        header["partition"] = {
            "index_set_1": list(net.partition.index_set_1),
            "index_set_2": list(net.partition.index_set_2),
            "total_channels": net.partition.total_channels,
        }
    elif isinstance(net, ResidualBaselineNetwork):
        header["kind"] = "residual_baseline"
        header["num_channels"] = net.num_channels
    else:
        raise SchemaError(f"cannot checkpoint a {type(net).__name__}")
    return header


def save_checkpoint(net, path):
    arrays = {}
    for name, p in net.named_parameters():
        arrays[f"param/{name}"] = p.data
    for name, buf in net.named_buffers():
        arrays[f"buffer/{name}"] = buf
    meta = np.frombuffer(json.dumps(_header(net)).encode(), dtype=np.uint8)
    np.savez(path, __meta__=meta, **arrays)


def load_checkpoint(path):
    with np.load(path) as bundle:
        try:
            header = json.loads(bundle["__meta__"].tobytes().decode())
        except KeyError:
            raise SchemaError(f"{path}: not a checkpoint (missing metadata)") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise SchemaError(f"{path}: unexpected checkpoint format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise SchemaError(f"{path}: unsupported checkpoint version {header.get('version')}")

        res_config = ResidualPathConfig(**header["res_config"])
        if header["kind"] == "dual_path":
            p = header["partition"]
            net = DualPathNetwork(
                ChannelPartition(tuple(p["index_set_1"]), tuple(p["index_set_2"]),
                                 p["total_channels"]),
                res_config,
                DensePathConfig(**header["dense_config"]),
                num_classes=header["num_classes"],
                d_proj=header["d_proj"],
                rng=np.random.default_rng(0),
            )
        elif header["kind"] == "residual_baseline":
            net = ResidualBaselineNetwork(
                header["num_channels"], res_config,
                num_classes=header["num_classes"], rng=np.random.default_rng(0),
            )
        else:
            raise SchemaError(f"{path}: unknown network kind {header['kind']!r}")

        for name, p in net.named_parameters():
            key = f"param/{name}"
            if key not in bundle:
                raise SchemaError(f"{path}: missing parameter {name}")
            p.data[...] = bundle[key]
        for name, buf in net.named_buffers():
            key = f"buffer/{name}"
            if key not in bundle:
                raise SchemaError(f"{path}: missing buffer {name}")
            buf[...] = bundle[key]
    return net
