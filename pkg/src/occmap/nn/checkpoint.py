"""SNET checkpoint files: weights, optimizer state and run metadata."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .. import _binio
from ..errors import FormatError
from .layers import BatchNorm2d, Conv2d, ConvTranspose2d
from .network import Network, build_network
from .train import Adam

NET_MAGIC = b"SNET"
NET_VERSION = 1
KIND_CODES = {"conv": 1, "conv_transpose": 2, "batchnorm": 3}
INIT_SCHEME = "kaiming_uniform_fan_in; batchnorm gamma=1 beta=0"


@dataclass
class Checkpoint:
    network: Network
    metadata: dict = field(default_factory=dict)
    optimizer_t: int = 0
    optimizer_lr: float = 0.0
    optimizer_m: list | None = None
    optimizer_v: list | None = None


def _stateful_layers(net: Network):
    return [l for l in net.leaf_layers() if isinstance(l, (Conv2d, ConvTranspose2d, BatchNorm2d))]


def _blocks(layer):
    if isinstance(layer, BatchNorm2d):
        return [layer.gamma.value, layer.beta.value, layer.running_mean, layer.running_var]
    out = [layer.weight.value]
    if layer.bias is not None:
        out.append(layer.bias.value)
    return out


def _dims(layer):
    if isinstance(layer, BatchNorm2d):
        return (layer.channels, 0, 0, 0)
    return layer.weight.value.shape


def save_checkpoint(path, net: Network, metadata: dict | None = None, optimizer: Adam | None = None) -> None:
    meta = {
        "input_side": net.input_side,
        "seed": net.seed,
        "init": INIT_SCHEME,
        "total_params": net.total_params,
        "layer_params": [r["params"] for r in net.layer_table()],
    }
    meta.update(metadata or {})
    with open(path, "wb") as f:
        f.write(NET_MAGIC)
        _binio.write_u32(f, NET_VERSION)
        _binio.write_u32(f, net.input_side)
        layers = _stateful_layers(net)
        _binio.write_u32(f, len(layers))
        for layer in layers:
            _binio.write_u8(f, KIND_CODES[layer.kind])
            for d in _dims(layer):
                _binio.write_u32(f, d)
            has_bias = not isinstance(layer, BatchNorm2d) and layer.bias is not None
            _binio.write_u8(f, int(has_bias))
            for block in _blocks(layer):
                _binio.write_array(f, block.reshape(-1), "f4")
        if optimizer is None:
            _binio.write_u8(f, 0)
        else:
            _binio.write_u8(f, 1)
            _binio.write_u64(f, optimizer.t)
            _binio.write_f64(f, optimizer.lr)
            for arr in (*optimizer.m, *optimizer.v):
                _binio.write_array(f, arr.reshape(-1), "f4")
        _binio.write_bytes(f, json.dumps(meta, sort_keys=True).encode())


def load_checkpoint(path, dtype=np.float32) -> Checkpoint:
    with open(path, "rb") as f:
        _binio.expect_magic(f, NET_MAGIC)
        version = _binio.read_u32(f)
        if version != NET_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        side = _binio.read_u32(f)
        net = build_network(side, seed=0, dtype=dtype)
        layers = _stateful_layers(net)
        n = _binio.read_u32(f)
        if n != len(layers):
            raise FormatError(f"checkpoint has {n} layer records, architecture needs {len(layers)}")
        for i, layer in enumerate(layers):
            kind = _binio.read_u8(f)
            dims = tuple(_binio.read_u32(f) for _ in range(4))
            has_bias = _binio.read_u8(f)
            if kind != KIND_CODES[layer.kind] or dims != tuple(_dims(layer)):
                raise FormatError(f"layer record {i} does not match the architecture")
            if not isinstance(layer, BatchNorm2d) and has_bias != (layer.bias is not None):
                raise FormatError(f"layer record {i} bias flag mismatch")
            for block in _blocks(layer):
                block[...] = _binio.read_array(f, "f4", block.size).reshape(block.shape)
        ckpt = Checkpoint(net)
        if _binio.read_u8(f):
            ckpt.optimizer_t = _binio.read_u64(f)
            ckpt.optimizer_lr = _binio.read_f64(f)
            params = net.parameters()
            ckpt.optimizer_m = [_binio.read_array(f, "f4", p.size).reshape(p.value.shape) for p in params]
            ckpt.optimizer_v = [_binio.read_array(f, "f4", p.size).reshape(p.value.shape) for p in params]
        try:
            ckpt.metadata = json.loads(_binio.read_bytes(f))
        except ValueError as exc:
            raise FormatError(f"corrupt metadata block: {exc}") from None
        net.seed = ckpt.metadata.get("seed", 0)
        return ckpt
