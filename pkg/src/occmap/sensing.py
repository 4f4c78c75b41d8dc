"""Sensor placement and ideal, noisy and one-bit power measurements."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, PlacementError
from .occupancy import GridSpec
from .terrain import FieldMap, dbm_to_watts

READINGS_HEADER = ("x_m", "y_m", "measured_w", "noise_w", "n_samples", "one_bit")


@dataclass(eq=False)
class SensorSet:
    locations: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64).reshape(-1, 2)

    @property
    def count(self) -> int:
        return len(self.locations)


@dataclass(eq=False)
class SensorReadings:
    """Columnar batch of sensor readings.

    ``noise_w`` is NaN when the noise power is unknown, ``n_samples`` is
    ``inf`` for ideal (noise-free) sensors, and ``one_bit`` is None unless
    the batch was passed through :func:`one_bit_readings`.
    """

    locations: np.ndarray
    measured_w: np.ndarray
    noise_w: np.ndarray
    n_samples: np.ndarray
    one_bit: np.ndarray | None = None

    def __len__(self):
        return len(self.measured_w)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(READINGS_HEADER)
            for j in range(len(self)):
                bit = "" if self.one_bit is None else int(self.one_bit[j])
                w.writerow([repr(float(self.locations[j, 0])), repr(float(self.locations[j, 1])),
                            repr(float(self.measured_w[j])), repr(float(self.noise_w[j])),
                            repr(float(self.n_samples[j])), bit])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        bits = [r["one_bit"] for r in rows]
        return cls(
            np.array([[float(r["x_m"]), float(r["y_m"])] for r in rows]).reshape(-1, 2),
            np.array([float(r["measured_w"]) for r in rows]),
            np.array([float(r["noise_w"]) for r in rows]),
            np.array([float(r["n_samples"]) for r in rows]),
            None if any(b == "" for b in bits) else np.array([int(b) for b in bits], dtype=np.int8),
        )


def place_sensors(grid: GridSpec, n_sensors: int, seed: int) -> SensorSet:
    """Independent uniform draws over the fine-raster cell centres."""
    if n_sensors < 1:
        raise PlacementError("at least one sensor is required")
    rng = np.random.default_rng(seed)
    cols = rng.integers(0, grid.width, n_sensors)
    rows = rng.integers(0, grid.height, n_sensors)
    locs = np.column_stack([(cols + 0.5) * grid.cell_size_m, (rows + 0.5) * grid.cell_size_m])
    return SensorSet(locs, seed)


def _field_at(field: FieldMap, grid: GridSpec, sensors: SensorSet) -> np.ndarray:
    x, y = sensors.locations[:, 0], sensors.locations[:, 1]
    w, h = grid.width * grid.cell_size_m, grid.height * grid.cell_size_m
    if np.any((x < 0) | (x >= w) | (y < 0) | (y >= h)):
        raise PlacementError("sensor outside region")
    col = np.floor(x / grid.cell_size_m).astype(np.int64)
    row = np.floor(y / grid.cell_size_m).astype(np.int64)
    return field.values_w[row, col]


def measure_ideal(field: FieldMap, grid: GridSpec, sensors: SensorSet) -> SensorReadings:
    """Read the field at each sensor's raster cell (no thermal noise)."""
    n = sensors.count
    return SensorReadings(
        sensors.locations.copy(), _field_at(field, grid, sensors).copy(), np.zeros(n), np.full(n, np.inf)
    )


def sensor_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def measure_noisy(field: FieldMap, grid: GridSpec, sensors: SensorSet, noise_w: float, n_samples: int,
                  seed: int) -> SensorReadings:
    """Mean-square of ``n_samples`` complex baseband samples per sensor.

    The received signal is one circular complex Gaussian of variance equal
    to the local field (the sum of the independent per-emitter signals has
    exactly that law) plus circular complex Gaussian noise of variance
    ``noise_w``.  The signal-noise cross term is kept.
    """
    if noise_w < 0:
        raise ParameterError("noise power must be >= 0")
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    f = _field_at(field, grid, sensors)
    out = np.empty(sensors.count)
    sig_scale = np.sqrt(f / 2.0)
    noise_scale = np.sqrt(noise_w / 2.0)
    for j in range(sensors.count):
        z = sensor_rng(seed, j).standard_normal((4, n_samples))
        re = sig_scale[j] * z[0] + noise_scale * z[2]
        im = sig_scale[j] * z[1] + noise_scale * z[3]
        out[j] = np.mean(re * re + im * im)
    n = sensors.count
    return SensorReadings(sensors.locations.copy(), out, np.full(n, float(noise_w)), np.full(n, float(n_samples)))


def one_bit_readings(readings: SensorReadings, tau_dbm: float) -> SensorReadings:
    """Hard decisions sgn(m - tau) with sgn(0) = 0."""
    bits = np.sign(readings.measured_w - dbm_to_watts(tau_dbm)).astype(np.int8)
    return replace(readings, one_bit=bits)
