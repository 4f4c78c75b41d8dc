"""Per-sensor log-likelihood ratios and the aggregated network input image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _binio
from .errors import ModeError, ParameterError
from .occupancy import GridSpec
from .sensing import SensorReadings
from .terrain import dbm_to_watts, watts_to_dbm

LLR_MAGIC = b"SLLR"
DOMAINS = ("linear_watts", "dbm")
MODES = ("soft", "soft_noisy", "hard")
# measurements below this are clamped before conversion to dBm
DBM_FLOOR = -300.0


def glrt_llr(m, tau, zeta_sq):
    """Exact GLRT statistic for a Gaussian measurement of the sub-region mean."""
    if np.any(np.asarray(zeta_sq) <= 0):
        raise ParameterError("zeta_sq must be > 0")
    d = np.asarray(m, dtype=np.float64) - tau
    return d * np.abs(d) / (2.0 * zeta_sq)


def approx_llr(m, tau):
    return np.asarray(m, dtype=np.float64) - tau


def noisy_glrt_llr(m, tau, noise_w, n_samples, zeta_sq):
    """GLRT statistic when the measurement carries a known additive noise power."""
    if np.any(np.asarray(noise_w) < 0):
        raise ParameterError("noise power must be >= 0")
    if np.any(np.asarray(n_samples) < 1):
        raise ParameterError("n_samples must be >= 1")
    if np.any(np.asarray(zeta_sq) <= 0):
        raise ParameterError("zeta_sq must be > 0")
    m = np.asarray(m, dtype=np.float64)
    denom = 2.0 * (np.square(noise_w) / n_samples + zeta_sq)
    d = m - noise_w - tau
    return np.where(m >= noise_w, np.abs(d) * d / denom, tau * (2.0 * m - 2.0 * noise_w - tau) / denom)


def approx_llr_noisy(m, tau, noise_w):
    if np.any(np.asarray(noise_w) < 0):
        raise ParameterError("noise power must be >= 0")
    m = np.asarray(m, dtype=np.float64)
    return np.where(m >= noise_w, m - noise_w - tau, 2.0 * m - 2.0 * noise_w - tau)


@dataclass(eq=False)
class LlrImage:
    n_side: int
    values: np.ndarray
    normalizer: float
    domain: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(self.n_side, self.n_side)
        if self.domain not in DOMAINS:
            raise ModeError(f"unknown domain {self.domain!r}")

    def write(self, f):
        f.write(LLR_MAGIC)
        _binio.write_u32(f, self.n_side)
        _binio.write_u8(f, DOMAINS.index(self.domain))
        _binio.write_f64(f, self.normalizer)
        _binio.write_array(f, self.values, "f8")

    @classmethod
    def read(cls, f):
        _binio.expect_magic(f, LLR_MAGIC)
        n = _binio.read_u32(f)
        code = _binio.read_u8(f)
        if code >= len(DOMAINS):
            raise ModeError(f"unknown domain code {code}")
        z = _binio.read_f64(f)
        return cls(n, _binio.read_array(f, "f8", n * n), z, DOMAINS[code])


def sensor_llrs(readings: SensorReadings, tau_dbm: float, mode: str = "soft", domain: str | None = None):
    """Per-sensor approximate LLR ``i(s)`` and the domain it was computed in."""
    if mode not in MODES:
        raise ModeError(f"unknown mode {mode!r}")
    if domain is None:
        domain = "dbm" if mode in ("soft", "hard") else "linear_watts"
    if domain not in DOMAINS:
        raise ModeError(f"unknown domain {domain!r}")
    if mode == "hard":
        if readings.one_bit is None:
            raise ModeError("hard mode needs one-bit readings")
        return readings.one_bit.astype(np.float64), domain
    if mode == "soft_noisy":
        if domain != "linear_watts":
            raise ModeError("soft_noisy mode is defined on linear Watts")
        if np.any(np.isnan(readings.noise_w)):
            raise ModeError("soft_noisy mode needs the noise power on every reading")
        return approx_llr_noisy(readings.measured_w, dbm_to_watts(tau_dbm), readings.noise_w), domain
    if domain == "dbm":
        m = np.maximum(watts_to_dbm(np.maximum(readings.measured_w, 0.0)), DBM_FLOOR)
        return approx_llr(m, tau_dbm), domain
    return approx_llr(readings.measured_w, dbm_to_watts(tau_dbm)), domain


def pool(values: np.ndarray, locations: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Mean of per-sensor values in each sub-region; zero where no sensor lies."""
    k = grid.subregion_of(locations[:, 0], locations[:, 1])
    total = np.bincount(k, weights=values, minlength=grid.n_cells)
    count = np.bincount(k, minlength=grid.n_cells)
    out = np.zeros(grid.n_cells)
    hit = count > 0
    out[hit] = total[hit] / count[hit]
    return out.reshape(grid.n_side, grid.n_side)


def unit_variance_normalizer(image: np.ndarray) -> float:
    std = float(np.std(image))
    return std if std > 0 else 1.0


def aggregate(readings: SensorReadings, grid: GridSpec, tau_dbm: float, mode: str = "soft",
              domain: str | None = None, normalize: bool = True) -> LlrImage:
    """Pool sensor LLRs into a fixed-size image with unit population variance."""
    llrs, domain = sensor_llrs(readings, tau_dbm, mode, domain)
    raw = pool(llrs, readings.locations, grid)
    z = unit_variance_normalizer(raw) if normalize else 1.0
    return LlrImage(grid.n_side, raw / z, z, domain)
