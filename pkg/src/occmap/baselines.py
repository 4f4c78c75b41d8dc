"""Classical spatial interpolators used as reference detectors.

All methods work on readings converted to dBm and predict at the centre
of every sub-region.  Thresholding the prediction gives a decision map
comparable with the network's.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import least_squares
from scipy.spatial.distance import cdist, pdist

from .errors import ParameterError, SolverError
from .llr import DBM_FLOOR
from .occupancy import GridSpec
from .sensing import SensorReadings
from .terrain import watts_to_dbm

METHODS = ("idw", "knn", "rbf", "kriging")
VARIOGRAM_BINS = 15
MAX_CONDITION = 1e13


@dataclass(frozen=True)
class InterpolatorConfig:
    method: str = "idw"
    idw_exponent: float = 2.0
    knn_k: int = 1
    rbf_reg: float = 0.01
    rbf_bias: bool = True
    kernel: str = "thin_plate_spline"
    variogram: str = "exponential"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}")
        if self.idw_exponent <= 0 or self.rbf_reg < 0:
            raise ParameterError("idw_exponent must be > 0 and rbf_reg >= 0")
        if self.knn_k < 1:
            raise ParameterError("knn_k must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Variogram:
    """Exponential model ``nugget + psill * (1 - exp(-h / range))`` for h > 0."""

    nugget: float
    psill: float
    range_m: float

    def __call__(self, h):
        h = np.asarray(h, dtype=np.float64)
        g = self.nugget + self.psill * (1.0 - np.exp(-h / self.range_m))
        return np.where(h > 0, g, 0.0)


def readings_dbm(readings: SensorReadings) -> np.ndarray:
    return np.maximum(watts_to_dbm(np.maximum(readings.measured_w, 0.0)), DBM_FLOOR)


def _idw(src, values, query, exponent, hit_radius):
    d = cdist(query, src)
    out = np.empty(len(query))
    hit = d < hit_radius
    exact = hit.any(axis=1)
    out[exact] = values[np.argmax(hit[exact], axis=1)]
    w = d[~exact] ** -exponent
    out[~exact] = (w @ values) / w.sum(axis=1)
    return out


def _knn(src, values, query, k):
    d = cdist(query, src)
    k = min(k, len(src))
    # stable sort keeps the lower sensor index first among equal distances
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    return values[nearest].mean(axis=1)


def _tps(r):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, r * r * np.log(r), 0.0)


def _solve(a, b, what):
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SolverError(f"{what} system is singular", condition=cond)
    try:
        return scipy.linalg.solve(a, b, assume_a="sym")
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"{what} solve failed: {exc}", condition=cond) from None


def _rbf(src, values, query, reg, bias):
    n = len(src)
    # work in units of the source spread so r^2 log r stays well scaled
    scale = max(float(np.ptp(src, axis=0).max()), 1.0)
    s, q = src / scale, query / scale
    a = _tps(cdist(s, s)) + reg * np.eye(n)
    b = values.astype(np.float64)
    if bias:
        a = np.block([[a, np.ones((n, 1))], [np.ones((1, n)), np.zeros((1, 1))]])
        b = np.append(b, 0.0)
    coef = _solve(a, b, "rbf")
    phi = _tps(cdist(q, s))
    out = phi @ coef[:n]
    return out + coef[n] if bias else out


def empirical_variogram(src, values, n_bins=VARIOGRAM_BINS):
    """Bin centres, semivariances and pair counts up to half the largest lag."""
    lags = pdist(src)
    sq = 0.5 * pdist(values[:, None], "sqeuclidean")
    edges = np.linspace(0.0, lags.max() / 2.0, n_bins + 1)
    idx = np.clip(np.digitize(lags, edges) - 1, 0, None)
    keep = (idx < n_bins) & (lags > 0)
    counts = np.bincount(idx[keep], minlength=n_bins)
    sums = np.bincount(idx[keep], weights=sq[keep], minlength=n_bins)
    centres = 0.5 * (edges[:-1] + edges[1:])
    ok = counts > 0
    return centres[ok], sums[ok] / counts[ok], counts[ok]


def fit_variogram(src, values, n_bins=VARIOGRAM_BINS) -> Variogram:
    """Least-squares fit of the exponential model to the binned semivariogram.

    A flat or empty semivariogram falls back to a pure unit nugget, which
    makes ordinary kriging return the sample mean.
    """
    if len(src) < 2 or np.ptp(values) == 0:
        return Variogram(1.0, 0.0, 1.0)
    h, g, _ = empirical_variogram(src, values, n_bins)
    if len(h) < 2 or g.max() <= 0:
        return Variogram(max(float(np.var(values)), 1.0), 0.0, 1.0)
    g_max = float(g.max())
    h_max = float(h.max())

    def resid(p):
        return Variogram(p[0], p[1], p[2])(h) - g

    p0 = [0.1 * g_max, g_max, h_max / 3.0]
    fit = least_squares(resid, p0, bounds=([0.0, 0.0, 1e-6 * h_max], [np.inf, np.inf, np.inf]))
    nugget, psill, rng = (float(v) for v in fit.x)
    if nugget + psill <= 0:
        return Variogram(1.0, 0.0, 1.0)
    return Variogram(nugget, psill, rng)


def _merge_duplicates(src, values):
    uniq, inv = np.unique(src, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    means = np.bincount(inv, weights=values) / np.bincount(inv)
    return uniq, means


def _kriging(src, values, query):
    if len(src) < 10:
        raise ParameterError("kriging needs at least 10 readings")
    src, values = _merge_duplicates(src, values)
    n = len(src)
    if n == 1:
        return np.full(len(query), values[0])
    vg = fit_variogram(src, values)
    a = np.ones((n + 1, n + 1))
    a[:n, :n] = vg(cdist(src, src))
    a[n, n] = 0.0
    b = np.ones((n + 1, len(query)))
    b[:n] = vg(cdist(src, query))
    w = _solve(a, b, "kriging")
    return values @ w[:n]


def interpolate_at(readings: SensorReadings, query, config: InterpolatorConfig, hit_radius=1e-9):
    """Predicted dBm at arbitrary ``query`` points of shape (q, 2)."""
    if len(readings) == 0:
        raise ParameterError("interpolation needs at least one reading")
    src = np.asarray(readings.locations, dtype=np.float64)
    values = readings_dbm(readings)
    query = np.asarray(query, dtype=np.float64).reshape(-1, 2)
    if config.method == "idw":
        return _idw(src, values, query, config.idw_exponent, hit_radius)
    if config.method == "knn":
        return _knn(src, values, query, config.knn_k)
    if config.method == "rbf":
        return _rbf(src, values, query, config.rbf_reg, config.rbf_bias)
    return _kriging(src, values, query)


def interpolate(readings: SensorReadings, grid: GridSpec, config: InterpolatorConfig) -> np.ndarray:
    """Predicted power in dBm at every sub-region centre, shape (n, n)."""
    pred = interpolate_at(readings, grid.subregion_centers(), config, hit_radius=grid.cell_size_m / 1e6)
    return pred.reshape(grid.n_side, grid.n_side)


def baseline_decide(predicted_dbm, tau_dbm: float) -> np.ndarray:
    return (np.asarray(predicted_dbm) >= tau_dbm).astype(np.uint8)
