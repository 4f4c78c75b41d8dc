"""Mini-batch training with weighted BCE, Adam and a plateau LR schedule."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ParameterError
from .network import Network, build_network, weighted_bce, weighted_bce_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 5e-5
    plateau_patience_epochs: int = 10
    plateau_factor: float = 0.1
    plateau_threshold: float = 1e-4
    epochs: int = 500
    alpha: float = 1.0
    theta: float = 0.5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    recalibrate_bn: bool = True

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "plateau_patience_epochs", "plateau_factor", "epochs", "alpha"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if not 0.0 < self.theta < 1.0:
            raise ParameterError("theta must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.value.dtype)


class PlateauScheduler:
    """Multiply the LR by ``factor`` after ``patience`` epochs without relative improvement."""

    def __init__(self, lr, patience=10, factor=0.1, threshold=1e-4):
        self.lr, self.patience, self.factor, self.threshold = lr, patience, factor, threshold
        self.best = np.inf
        self.bad_epochs = 0
        self.n_reductions = 0

    def step(self, loss):
        if loss < self.best * (1.0 - self.threshold):
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
                self.n_reductions += 1
        return self.lr


@dataclass
class TrainResult:
    network: Network
    optimizer: Adam
    epoch_losses: list = field(default_factory=list)
    epoch_lrs: list = field(default_factory=list)


def train(inputs, targets, config: TrainConfig, network: Network | None = None, callback=None) -> TrainResult:
    """Fit a network to ``inputs`` (M, n, n) LLR images and 0/1 ``targets``.

    Shuffling uses ``config.seed``, as does weight init when no network is
    given, so two calls with equal arguments give bit-identical weights.
    """
    x = np.asarray(inputs)
    t = np.asarray(targets)
    if x.ndim == 3:
        x = x[:, None]
    if t.ndim == 3:
        t = t[:, None]
    if len(x) == 0:
        raise ParameterError("empty training set")
    if x.shape != t.shape:
        raise ParameterError(f"inputs {x.shape} and targets {t.shape} differ")
    net = network if network is not None else build_network(x.shape[-1], seed=config.seed)
    x = x.astype(net.dtype)
    t = t.astype(np.float64)
    opt = Adam(net.parameters(), config.learning_rate, config.beta1, config.beta2, config.eps)
    sched = PlateauScheduler(config.learning_rate, config.plateau_patience_epochs, config.plateau_factor,
                             config.plateau_threshold)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    result = TrainResult(net, opt)
    m = len(x)
    for epoch in range(config.epochs):
        order = rng.permutation(m)
        total = 0.0
        for lo in range(0, m, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            logits = net.forward(x[idx], training=True)
            total += weighted_bce(logits, t[idx], config.alpha) * len(idx)
            net.backward(weighted_bce_grad(logits, t[idx], config.alpha))
            opt.step()
        epoch_loss = total / m
        result.epoch_losses.append(epoch_loss)
        result.epoch_lrs.append(opt.lr)
        opt.lr = sched.step(epoch_loss)
        log.debug("epoch %d loss %.6f lr %.3g", epoch + 1, epoch_loss, result.epoch_lrs[-1])
        if callback is not None:
            callback(epoch + 1, epoch_loss, result.epoch_lrs[-1])
    if config.recalibrate_bn:
        recalibrate_batchnorm(net, x, config.batch_size)
    return result


def recalibrate_batchnorm(net: Network, inputs, batch_size=32):
    """Replace running statistics by population statistics of the final weights.

    Each batch norm's mean and biased variance are pooled over training-mode
    passes on ``inputs``, so eval mode reproduces training-mode outputs when
    the data is a single batch.  The momentum averages otherwise lag the
    last updates.
    """
    x = np.asarray(inputs, dtype=net.dtype)
    if x.ndim == 3:
        x = x[:, None]
    bns = net.batchnorms()
    sinks = [[] for _ in bns]
    net.set_track_running_stats(False)
    try:
        for bn, sink in zip(bns, sinks):
            bn.stat_sink = sink
        for lo in range(0, len(x), batch_size):
            net.forward(x[lo:lo + batch_size], training=True)
    finally:
        for bn in bns:
            bn.stat_sink = None
        net.set_track_running_stats(True)
    for bn, sink in zip(bns, sinks):
        n = np.array([s[0] for s in sink], dtype=np.float64)[:, None]
        means = np.stack([s[1] for s in sink])
        second = np.stack([s[2] for s in sink]) + means**2
        mean = (n * means).sum(0) / n.sum()
        var = (n * second).sum(0) / n.sum() - mean**2
        bn.running_mean[...] = mean
        bn.running_var[...] = np.maximum(var, 0.0)


def predict_logits(net: Network, inputs, batch_size=64):
    """Eval-mode logits (M, n, n) in float64."""
    x = np.asarray(inputs)
    if x.ndim == 3:
        x = x[:, None]
    out = [net.forward(x[lo:lo + batch_size], training=False) for lo in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)[:, 0].astype(np.float64)
