"""Dense encoder-decoder that maps an LLR image to per-sub-region logits."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_expit

from ..errors import DimensionError, ParameterError, ShapeError, StateError
from .layers import BatchNorm2d, Conv2d, ConvBlock, ConvTranspose2d, DenseBlock, iter_layers

STEM_CHANNELS = 6
GROWTH = 16
N_TRANSITIONS = 3


class Network:
    """Encoder-decoder with one-layer dense blocks and stride-2 transitions.

    Layout for an input of side S (spatial side in brackets)::

        stem   BN -> conv k21 s2 p10, 1 -> 6                     [S/2]
        3 x    dense(+16) -> BN-ReLU-conv k1 (c -> c//2)
                          -> BN-ReLU-conv k3 s2 p1               [halves]
        dense(+16)
        3 x    BN-ReLU-conv k1 (c -> c//2)
               -> BN-ReLU-convT k3 s2 p1 op1 -> dense(+16)       [doubles]
        head   BN-ReLU-convT k3 s2 p1 op1, c -> 1, with bias     [S]

    Every convolution is preceded by a batch norm over its input
    channels.  The stem omits the ReLU so negative LLRs survive.
    """

    def __init__(self, input_side: int, seed: int = 0, dtype=np.float32):
        divisor = 2 ** (N_TRANSITIONS + 1)
        if input_side < divisor or input_side % divisor:
            raise DimensionError(f"input side must be a positive multiple of {divisor}, got {input_side}")
        self.input_side = input_side
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        mods = [ConvBlock(1, STEM_CHANNELS, 21, 2, 10, relu=False, rng=rng, dtype=dtype)]
        c = STEM_CHANNELS
        for _ in range(N_TRANSITIONS):
            mods.append(DenseBlock(c, GROWTH, rng, dtype))
            c += GROWTH
            mods.append(ConvBlock(c, c // 2, 1, 1, 0, rng=rng, dtype=dtype))
            c //= 2
            mods.append(ConvBlock(c, c, 3, 2, 1, rng=rng, dtype=dtype))
        mods.append(DenseBlock(c, GROWTH, rng, dtype))
        c += GROWTH
        for _ in range(N_TRANSITIONS):
            mods.append(ConvBlock(c, c // 2, 1, 1, 0, rng=rng, dtype=dtype))
            c //= 2
            mods.append(ConvBlock(c, c, 3, 2, 1, transpose=True, output_padding=1, rng=rng, dtype=dtype))
            mods.append(DenseBlock(c, GROWTH, rng, dtype))
            c += GROWTH
        mods.append(ConvBlock(c, 1, 3, 2, 1, transpose=True, output_padding=1, bias=True, rng=rng, dtype=dtype))
        self.modules = mods
        self._inputs = None

    # -- structure -----------------------------------------------------------

    def parameters(self):
        return [p for m in self.modules for p in m.parameters()]

    def leaf_layers(self):
        return [leaf for m in self.modules for leaf in iter_layers(m)]

    def batchnorms(self):
        return [l for l in self.leaf_layers() if isinstance(l, BatchNorm2d)]

    def conv_layers(self):
        return [l for l in self.leaf_layers() if isinstance(l, (Conv2d, ConvTranspose2d))]

    @property
    def head(self) -> ConvTranspose2d:
        return self.modules[-1].conv

    def layer_table(self):
        """One row per convolution with its share of the parameter-count formula."""
        rows = []
        side = self.input_side
        for i, conv in enumerate(self.conv_layers()):
            side = conv.output_side(side)
            k = conv.kernel
            rows.append({
                "index": i + 1,
                "kind": conv.kind,
                "kernel": k,
                "stride": conv.stride,
                "padding": conv.padding,
                "n_in": conv.n_in,
                "n_out": conv.n_out,
                "out_side": side,
                "params": k * k * conv.n_in * conv.n_out + 2 * conv.n_in,
            })
        return rows

    @property
    def total_params(self) -> int:
        """Sum over convolutions of ``k^2 n_in n_out + 2 n_in``."""
        return sum(r["params"] for r in self.layer_table())

    @property
    def n_trainable(self) -> int:
        return sum(p.size for p in self.parameters())

    def set_track_running_stats(self, flag: bool):
        for bn in self.batchnorms():
            bn.track_running_stats = flag

    # -- computation ---------------------------------------------------------

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (self.input_side, self.input_side):
            raise ShapeError(f"expected (B, 1, {self.input_side}, {self.input_side}) input, got {x.shape}")
        self._inputs = []
        for m in self.modules:
            self._inputs.append(x)
            x = m.forward(x, training)
        return x

    def forward_from(self, index, training=False):
        """Re-run the modules from ``index`` on the input cached by the last forward."""
        if self._inputs is None:
            raise StateError("forward_from needs a previous forward pass")
        x = self._inputs[index]
        for m in self.modules[index:]:
            x = m.forward(x, training)
        return x

    def backward(self, dlogits):
        if self._inputs is None:
            raise StateError("backward called before forward")
        d = np.asarray(dlogits, dtype=self.dtype)
        for m in reversed(self.modules):
            d = m.backward(d)
        return d

    def module_of_params(self):
        """Index of the top-level module owning each parameter, in parameter order."""
        return [i for i, m in enumerate(self.modules) for _ in m.parameters()]


def build_network(input_side: int, seed: int = 0, dtype=np.float32) -> Network:
    return Network(input_side, seed, dtype)


def sigmoid(x):
    return expit(x)


def decide(logits, theta=0.5):
    """Binary decisions ``sigmoid(O) > theta`` (strict)."""
    if not 0.0 < theta < 1.0:
        raise ParameterError(f"theta must lie in (0, 1), got {theta}")
    return (expit(np.asarray(logits, dtype=np.float64)) > theta).astype(np.uint8)


def weighted_bce(logits, targets, alpha=1.0):
    """Mean weighted binary cross entropy in log-sigmoid form."""
    o = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if o.shape != t.shape:
        raise ShapeError(f"logits {o.shape} and targets {t.shape} differ")
    if alpha <= 0:
        raise ParameterError("alpha must be > 0")
    return float(np.mean(-alpha * t * log_expit(o) - (1.0 - t) * log_expit(-o)))


def weighted_bce_grad(logits, targets, alpha=1.0):
    o = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if o.shape != t.shape:
        raise ShapeError(f"logits {o.shape} and targets {t.shape} differ")
    s = expit(o)
    return (alpha * t * (s - 1.0) + (1.0 - t) * s) / o.size
