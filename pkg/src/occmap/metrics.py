"""Error rate, detection and false-alarm rates, ROC sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class Counts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def _pair(truth, pred):
    t = np.asarray(truth)
    p = np.asarray(pred)
    if t.shape != p.shape:
        raise ShapeError(f"truth {t.shape} and prediction {p.shape} differ")
    return t.astype(bool), p.astype(bool)


def confusion(truth, pred) -> Counts:
    t, p = _pair(truth, pred)
    tp = int(np.count_nonzero(t & p))
    fp = int(np.count_nonzero(~t & p))
    fn = int(np.count_nonzero(t & ~p))
    return Counts(tp, fp, t.size - tp - fp - fn, fn)


def error_rate(truth, pred) -> float:
    t, p = _pair(truth, pred)
    if t.size == 0:
        raise ShapeError("empty batch")
    return float(np.count_nonzero(t != p)) / t.size


def rates(c: Counts):
    """(p_d, p_f, p_d_defined, p_f_defined) from pooled counts."""
    pd_ok = c.positives > 0
    pf_ok = c.negatives > 0
    p_d = c.tp / c.positives if pd_ok else math.nan
    p_f = c.fp / c.negatives if pf_ok else math.nan
    return p_d, p_f, pd_ok, pf_ok


def pd_pf(truth, pred):
    """Detection and false-alarm rates; NaN marks an empty class."""
    p_d, p_f, _, _ = rates(confusion(truth, pred))
    return p_d, p_f


def tnr_db(tau_dbm: float, noise_w: float | None) -> float:
    """Threshold-to-noise ratio in dB, +inf when there is no noise."""
    if noise_w is None or noise_w == 0:
        return math.inf
    return tau_dbm - (10.0 * math.log10(noise_w) + 30.0)


def noise_for_tnr(tau_dbm: float, eta_db: float) -> float:
    """Noise power in Watts that gives threshold-to-noise ratio ``eta_db``."""
    return 10.0 ** ((tau_dbm - eta_db - 30.0) / 10.0)


@dataclass(frozen=True)
class EvalReport:
    kappa: float
    p_d: float
    p_f: float
    p_d_defined: bool
    p_f_defined: bool
    theta: float
    tau_dbm: float
    tnr_db: float
    counts: Counts

    @classmethod
    def from_counts(cls, counts: Counts, theta, tau_dbm, tnr=math.inf) -> "EvalReport":
        if counts.total == 0:
            raise ShapeError("empty batch")
        p_d, p_f, pd_ok, pf_ok = rates(counts)
        kappa = (counts.fp + counts.fn) / counts.total
        return cls(kappa, p_d, p_f, pd_ok, pf_ok, theta, tau_dbm, tnr, counts)

    @classmethod
    def evaluate(cls, truth, pred, theta=0.5, tau_dbm=math.nan, tnr=math.inf) -> "EvalReport":
        return cls.from_counts(confusion(truth, pred), theta, tau_dbm, tnr)

    def row(self) -> dict:
        c = self.counts
        return {
            "theta": self.theta, "tau_dbm": self.tau_dbm, "tnr_db": self.tnr_db, "kappa": self.kappa,
            "p_d": self.p_d, "p_f": self.p_f, "p_d_defined": int(self.p_d_defined),
            "p_f_defined": int(self.p_f_defined), "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn,
        }


def _check_thetas(thetas):
    th = np.asarray(thetas, dtype=np.float64).reshape(-1)
    if th.size == 0:
        raise ParameterError("theta list is empty")
    if np.any((th <= 0) | (th >= 1)):
        raise ParameterError("every theta must lie in (0, 1)")
    if np.any(np.diff(th) <= 0):
        raise ParameterError("thetas must be strictly increasing")
    return th


def roc_from_logits(logits, truth, thetas, tau_dbm=math.nan, tnr=math.inf) -> list[EvalReport]:
    """One report per threshold, reusing a single set of logits."""
    th = _check_thetas(thetas)
    prob = expit(np.asarray(logits, dtype=np.float64))
    return [EvalReport.evaluate(truth, prob > t, float(t), tau_dbm, tnr) for t in th]


def roc_sweep(net, inputs, truth, thetas, tau_dbm=math.nan, tnr=math.inf) -> list[EvalReport]:
    from .nn.train import predict_logits
    th = _check_thetas(thetas)
    return roc_from_logits(predict_logits(net, inputs), truth, th, tau_dbm, tnr)


def all_zeros_kappa(truth) -> float:
    t = np.asarray(truth)
    return error_rate(t, np.zeros_like(t))
