"""Numpy layers with hand-written backward passes.

Feature maps are ``(batch, channels, height, width)`` arrays.  Every layer
caches what its backward pass needs during ``forward`` and writes
parameter gradients into ``Param.grad`` (overwriting, not accumulating).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ShapeError, StateError


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def size(self):
        return self.value.size


def _windows(xp, k, stride, ho, wo):
    """View of shape (B, C, ho, wo, k, k) over a padded input."""
    sb, sc, sh, sw = xp.strides
    return as_strided(xp, (xp.shape[0], xp.shape[1], ho, wo, k, k), (sb, sc, sh * stride, sw * stride, sh, sw),
                      writeable=False)


def _pad(x, p):
    if not p:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, :, p : p + h, p : p + w] = x
    return out


def _im2col(xp, k, stride, ho, wo):
    b, c = xp.shape[:2]
    win = _windows(xp, k, stride, ho, wo)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)


def _col2im(cols, out, k, stride, ho, wo):
    """Scatter-add (B*ho*wo, C*k*k) columns into ``out`` of shape (B, C, Hp, Wp)."""
    b, c = out.shape[:2]
    cols = cols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, :, :, i, j]
    return out


def kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


class Layer:
    kind = "layer"

    def parameters(self):
        return []

    def _cached(self):
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return cache


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, n_in, n_out, kernel, stride=1, padding=0, bias=False, rng=None, dtype=np.float32):
        self.n_in, self.n_out, self.kernel, self.stride, self.padding = n_in, n_out, kernel, stride, padding
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Param(kaiming_uniform(rng, (n_out, n_in, kernel, kernel), n_in * kernel * kernel, dtype))
        self.bias = Param(np.zeros(n_out, dtype=dtype)) if bias else None
        self._cache = None

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def output_side(self, side):
        return (side + 2 * self.padding - self.kernel) // self.stride + 1

    def forward(self, x, training=True):
        b, c, h, w = x.shape
        if c != self.n_in:
            raise ShapeError(f"conv expects {self.n_in} channels, got {c}")
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = self.output_side(h), self.output_side(w)
        xp = _pad(np.ascontiguousarray(x), p)
        cols = _im2col(xp, k, s, ho, wo)
        out = cols @ self.weight.value.reshape(self.n_out, -1).T
        if self.bias is not None:
            out += self.bias.value
        self._cache = (x.shape, xp.shape, cols, ho, wo)
        return np.ascontiguousarray(out.reshape(b, ho, wo, self.n_out).transpose(0, 3, 1, 2))

    def backward(self, dout):
        xshape, xpshape, cols, ho, wo = self._cached()
        k, s, p = self.kernel, self.stride, self.padding
        dmat = dout.transpose(0, 2, 3, 1).reshape(-1, self.n_out)
        wmat = self.weight.value.reshape(self.n_out, -1)
        self.weight.grad[...] = (dmat.T @ cols).reshape(self.weight.value.shape)
        if self.bias is not None:
            self.bias.grad[...] = dmat.sum(axis=0)
        dxp = _col2im(dmat @ wmat, np.zeros(xpshape, dtype=dout.dtype), k, s, ho, wo)
        h, w = xshape[2:]
        return dxp[:, :, p : p + h, p : p + w] if p else dxp


class ConvTranspose2d(Layer):
    """Transposed convolution; weight layout is (n_in, n_out, k, k)."""

    kind = "conv_transpose"

    def __init__(self, n_in, n_out, kernel, stride=1, padding=0, output_padding=0, bias=False, rng=None,
                 dtype=np.float32):
        self.n_in, self.n_out, self.kernel, self.stride = n_in, n_out, kernel, stride
        self.padding, self.output_padding = padding, output_padding
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Param(kaiming_uniform(rng, (n_in, n_out, kernel, kernel), n_in * kernel * kernel, dtype))
        self.bias = Param(np.zeros(n_out, dtype=dtype)) if bias else None
        self._cache = None

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def output_side(self, side):
        return (side - 1) * self.stride - 2 * self.padding + self.kernel + self.output_padding

    def _full_side(self, side):
        return max((side - 1) * self.stride + self.kernel, self.output_side(side) + self.padding)

    def forward(self, x, training=True):
        b, c, h, w = x.shape
        if c != self.n_in:
            raise ShapeError(f"conv_transpose expects {self.n_in} channels, got {c}")
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = self.output_side(h), self.output_side(w)
        xmat = x.transpose(0, 2, 3, 1).reshape(-1, self.n_in)
        cols = xmat @ self.weight.value.reshape(self.n_in, -1)
        full = np.zeros((b, self.n_out, self._full_side(h), self._full_side(w)), dtype=x.dtype)
        _col2im(cols, full, k, s, h, w)
        out = full[:, :, p : p + ho, p : p + wo]
        if self.bias is not None:
            out = out + self.bias.value[None, :, None, None]
        self._cache = (x.shape, xmat, full.shape)
        return np.ascontiguousarray(out)

    def backward(self, dout):
        xshape, xmat, fullshape = self._cached()
        b, _, h, w = xshape
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = dout.shape[2:]
        dfull = np.zeros(fullshape, dtype=dout.dtype)
        dfull[:, :, p : p + ho, p : p + wo] = dout
        dcols = _im2col(dfull, k, s, h, w)
        wmat = self.weight.value.reshape(self.n_in, -1)
        self.weight.grad[...] = (xmat.T @ dcols).reshape(self.weight.value.shape)
        if self.bias is not None:
            self.bias.grad[...] = dout.sum(axis=(0, 2, 3))
        return np.ascontiguousarray((dcols @ wmat.T).reshape(b, h, w, self.n_in).transpose(0, 3, 1, 2))


class BatchNorm2d(Layer):
    kind = "batchnorm"

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.track_running_stats = True
        self.stat_sink = None
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x, training=True):
        if x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {x.shape[1]}")
        if training:
            n = x.size // self.channels
            mean = x.sum(axis=(0, 2, 3)) / n
            centred = x - mean[None, :, None, None]
            var = np.einsum("bchw,bchw->c", centred, centred) / n
            if self.stat_sink is not None:
                self.stat_sink.append((n, mean.astype(np.float64), var.astype(np.float64)))
            if self.track_running_stats:
                unbiased = var * (n / (n - 1)) if n > 1 else var
                self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mean
                self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, training)
        return self.gamma.value[None, :, None, None] * xhat + self.beta.value[None, :, None, None]

    def backward(self, dout):
        xhat, inv_std, training = self._cached()
        self.gamma.grad[...] = (dout * xhat).sum(axis=(0, 2, 3))
        self.beta.grad[...] = dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.gamma.value[None, :, None, None]
        if not training:
            return dxhat * inv_std[None, :, None, None]
        n = dout.size // self.channels
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv_std[None, :, None, None] / n) * (n * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._cache = None

    def forward(self, x, training=True):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._cached()


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x, training=True):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class ConvBlock(Sequential):
    """BatchNorm, optional ReLU, then a (transposed) convolution."""

    def __init__(self, n_in, n_out, kernel, stride, padding, transpose=False, output_padding=0, relu=True,
                 bias=False, rng=None, dtype=np.float32):
        self.bn = BatchNorm2d(n_in, dtype=dtype)
        if transpose:
            self.conv = ConvTranspose2d(n_in, n_out, kernel, stride, padding, output_padding, bias, rng, dtype)
        else:
            self.conv = Conv2d(n_in, n_out, kernel, stride, padding, bias, rng, dtype)
        super().__init__([self.bn] + ([ReLU()] if relu else []) + [self.conv])


class DenseBlock(Layer):
    """One-layer dense block: output is ``concat(x, conv_block(x))``."""

    kind = "dense"

    def __init__(self, n_in, growth, rng=None, dtype=np.float32):
        self.n_in, self.growth = n_in, growth
        self.block = ConvBlock(n_in, growth, 3, 1, 1, rng=rng, dtype=dtype)
        self._cache = None

    @property
    def n_out(self):
        return self.n_in + self.growth

    def parameters(self):
        return self.block.parameters()

    def forward(self, x, training=True):
        self._cache = True
        return np.concatenate([x, self.block.forward(x, training)], axis=1)

    def backward(self, dout):
        self._cached()
        return dout[:, : self.n_in] + self.block.backward(np.ascontiguousarray(dout[:, self.n_in :]))


def iter_layers(layer):
    """Depth-first walk over leaf layers."""
    if isinstance(layer, Sequential):
        for sub in layer.layers:
            yield from iter_layers(sub)
    elif isinstance(layer, DenseBlock):
        yield from iter_layers(layer.block)
    else:
        yield layer
