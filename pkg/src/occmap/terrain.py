"""Terrain rasters and the multi-emitter propagation engine.

The engine is a deliberately simple stand-in for a commercial planning
tool: log-distance path loss, a single knife-edge diffraction term from
the dominant terrain obstruction, and optional correlated log-normal
shadowing.  All powers are linear Watts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import _binio
from .errors import DimensionError, FormatError, NonFiniteValueError, ParameterError, PlacementError

SPEED_OF_LIGHT = 299_792_458.0
MAX_RELIEF_M = 600.0
FIELD_MAGIC = b"SFLD"


def free_space_loss_db(frequency_mhz: float, distance_m: float = 1.0) -> float:
    wavelength = SPEED_OF_LIGHT / (frequency_mhz * 1e6)
    return 20.0 * math.log10(4.0 * math.pi * distance_m / wavelength)


@dataclass(eq=False)
class TerrainGrid:
    """Altitude raster, indexed ``altitude[row, col]`` with row along y."""

    width: int
    height: int
    cell_size_m: float
    altitude: np.ndarray
    roughness: float = 0.0

    def __post_init__(self):
        self.altitude = np.asarray(self.altitude, dtype=np.float64).reshape(self.height, self.width)
        if not np.all(np.isfinite(self.altitude)):
            raise NonFiniteValueError("terrain altitude contains non-finite values")

    @property
    def extent_m(self) -> tuple[float, float]:
        return self.width * self.cell_size_m, self.height * self.cell_size_m

    @classmethod
    def flat(cls, width, height, cell_size_m, altitude_m=0.0):
        return cls(width, height, cell_size_m, np.full((height, width), float(altitude_m)))

    def same_as(self, other: "TerrainGrid") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.cell_size_m == other.cell_size_m
            and self.roughness == other.roughness
            and np.array_equal(self.altitude, other.altitude)
        )

    def cell_of(self, x, y):
        """Floor-index (row, col) of a metric position, clipped to the raster."""
        col = np.clip(np.floor(np.asarray(x) / self.cell_size_m).astype(np.int64), 0, self.width - 1)
        row = np.clip(np.floor(np.asarray(y) / self.cell_size_m).astype(np.int64), 0, self.height - 1)
        return row, col

    def cell_centers(self):
        xs = (np.arange(self.width) + 0.5) * self.cell_size_m
        ys = (np.arange(self.height) + 0.5) * self.cell_size_m
        return np.meshgrid(xs, ys)

    def contains(self, x, y) -> bool:
        w, h = self.extent_m
        return 0.0 <= x < w and 0.0 <= y < h


@dataclass
class EmitterConfig:
    locations: np.ndarray
    powers_w: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64).reshape(-1, 2)
        self.powers_w = np.asarray(self.powers_w, dtype=np.float64).reshape(-1)
        if len(self.locations) != len(self.powers_w):
            raise ParameterError("locations and powers_w must have the same length")
        if np.any(self.powers_w <= 0):
            raise ParameterError("emitter powers must be strictly positive")

    @property
    def count(self) -> int:
        return len(self.powers_w)


@dataclass(frozen=True)
class PropagationParams:
    frequency_mhz: float = 2100.0
    tx_height_m: float = 20.0
    rx_height_m: float = 1.5
    path_loss_exponent: float = 3.0
    reference_loss_db: float = field(default_factory=lambda: free_space_loss_db(2100.0))
    reference_distance_m: float = 1.0
    diffraction_enabled: bool = True
    shadowing_sigma_db: float = 0.0
    shadowing_corr_m: float = 200.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("frequency_mhz", "tx_height_m", "rx_height_m", "path_loss_exponent",
                     "reference_distance_m", "shadowing_corr_m"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0")
        if self.shadowing_sigma_db < 0:
            raise ParameterError("shadowing_sigma_db must be >= 0")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / (self.frequency_mhz * 1e6)


@dataclass(eq=False)
class FieldMap:
    width: int
    height: int
    values_w: np.ndarray

    def __post_init__(self):
        self.values_w = np.asarray(self.values_w, dtype=np.float64).reshape(self.height, self.width)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(FIELD_MAGIC)
            _binio.write_u32(f, self.width)
            _binio.write_u32(f, self.height)
            _binio.write_array(f, self.values_w, "f8")

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            _binio.expect_magic(f, FIELD_MAGIC)
            w = _binio.read_u32(f)
            h = _binio.read_u32(f)
            vals = _binio.read_array(f, "f8", w * h)
        return cls(w, h, vals)


# ---------------------------------------------------------------------------
# terrain synthesis and I/O
# ---------------------------------------------------------------------------

def _diamond_square(levels: int, rng: np.random.Generator, persistence: float = 0.55) -> np.ndarray:
    n = 2**levels + 1
    a = np.zeros((n, n))
    a[:: n - 1, :: n - 1] = rng.uniform(-1.0, 1.0, (2, 2))
    step = n - 1
    amp = 1.0
    while step > 1:
        half = step // 2
        # diamond step: square centres from four corners
        corners = a[:-1:step, :-1:step] + a[:-1:step, step::step] + a[step::step, :-1:step] + a[step::step, step::step]
        a[half::step, half::step] = corners / 4.0 + amp * rng.uniform(-1.0, 1.0, corners.shape)
        # square step: edge midpoints from up to four neighbours
        for r0, c0 in ((0, half), (half, 0)):
            rows = np.arange(r0, n, step)
            cols = np.arange(c0, n, step)
            rr, cc = np.meshgrid(rows, cols, indexing="ij")
            total = np.zeros(rr.shape)
            count = np.zeros(rr.shape)
            for dr, dc in ((-half, 0), (half, 0), (0, -half), (0, half)):
                r2, c2 = rr + dr, cc + dc
                ok = (r2 >= 0) & (r2 < n) & (c2 >= 0) & (c2 < n)
                total[ok] += a[r2[ok], c2[ok]]
                count += ok
            a[rr, cc] = total / count + amp * rng.uniform(-1.0, 1.0, rr.shape)
        step = half
        amp *= persistence
    return a


def synthesize_terrain(width: int, height: int, cell_size_m: float, roughness: float, seed: int) -> TerrainGrid:
    """Diamond-square terrain rescaled to a relief of ``roughness * 600`` m.

    The fractal is generated on the next ``2**k + 1`` square and cropped.
    """
    if width < 2 or height < 2:
        raise DimensionError(f"terrain must be at least 2x2, got {width}x{height}")
    if not 0.0 <= roughness <= 1.0:
        raise DimensionError("roughness must lie in [0, 1]")
    if cell_size_m <= 0:
        raise DimensionError("cell_size_m must be > 0")
    levels = max(1, math.ceil(math.log2(max(width, height) - 1)))
    raw = _diamond_square(levels, np.random.default_rng(seed))[:height, :width]
    span = raw.max() - raw.min()
    if roughness == 0.0 or span == 0.0:
        alt = np.zeros((height, width))
    else:
        alt = (raw - raw.min()) / span * (roughness * MAX_RELIEF_M)
    return TerrainGrid(width, height, float(cell_size_m), alt, float(roughness))


_HEADER_KEYS = ("ncols", "nrows", "cellsize")


def save_terrain(terrain: TerrainGrid, path) -> None:
    lines = [
        f"ncols {terrain.width}",
        f"nrows {terrain.height}",
        f"cellsize {terrain.cell_size_m!r}",
        f"roughness {terrain.roughness!r}",
    ]
    for row in terrain.altitude:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_terrain(path) -> TerrainGrid:
    """Read an ASCII grid written by :func:`save_terrain`.

    Header lines are ``ncols``, ``nrows``, ``cellsize`` and an optional
    ``roughness``; every remaining non-blank line is one raster row.
    """
    header: dict[str, float] = {}
    rows: list[list[float]] = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            key = tokens[0].lower()
            if not rows and key in (*_HEADER_KEYS, "roughness"):
                if len(tokens) != 2:
                    raise FormatError(f"malformed header line {line.strip()!r}", lineno)
                try:
                    header[key] = float(tokens[1])
                except ValueError:
                    raise FormatError(f"bad header value {tokens[1]!r}", lineno) from None
                continue
            missing = [k for k in _HEADER_KEYS if k not in header]
            if missing:
                raise FormatError(f"missing header field(s) {', '.join(missing)}", lineno)
            ncols = int(header["ncols"])
            try:
                values = [float(t) for t in tokens]
            except ValueError as exc:
                raise FormatError(str(exc), lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise NonFiniteValueError("non-finite altitude value", lineno)
            if len(values) != ncols:
                raise FormatError(f"expected {ncols} values, found {len(values)}", lineno)
            rows.append(values)
            if len(rows) > int(header["nrows"]):
                raise FormatError(f"more than {int(header['nrows'])} rows", lineno)
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise FormatError(f"missing header field(s) {', '.join(missing)}")
    nrows = int(header["nrows"])
    if len(rows) != nrows:
        raise FormatError(f"expected {nrows} rows, found {len(rows)}")
    if nrows < 1 or int(header["ncols"]) < 1 or header["cellsize"] <= 0:
        raise FormatError("non-positive raster dimensions")
    return TerrainGrid(int(header["ncols"]), nrows, header["cellsize"], np.array(rows),
                       header.get("roughness", 0.0))


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------

def knife_edge_loss_db(v):
    """Single knife-edge loss J(v) in dB, zero for v <= -0.78."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros_like(v)
    hit = v > -0.78
    w = v[hit] - 0.1
    out[hit] = 6.9 + 20.0 * np.log10(np.sqrt(w * w + 1.0) + w)
    return out


def _diffraction_loss_db(terrain, params, ex, ey, xs, ys, dist, chunk_points=1 << 21):
    """Knife-edge loss from the strongest obstruction above each line of sight.

    Only terrain samples that rise above the straight antenna-to-antenna
    line count as obstructions; paths with none get zero loss.
    """
    tr, tc = terrain.cell_of(ex, ey)
    h_tx = terrain.altitude[tr, tc] + params.tx_height_m
    lam = params.wavelength_m

    flat_x, flat_y, flat_d = xs.ravel(), ys.ravel(), dist.ravel()
    rr, rc = terrain.cell_of(flat_x, flat_y)
    h_rx = terrain.altitude[rr, rc] + params.rx_height_m
    v_max = np.full(flat_d.shape, -np.inf)
    # roughly one profile sample per cell traversed, bucketed to powers of two
    need = np.maximum(8, flat_d / terrain.cell_size_m)
    bucket = 2 ** np.ceil(np.log2(need)).astype(np.int64)
    for n_samples in np.unique(bucket):
        frac = np.arange(1, n_samples + 1) / (n_samples + 1.0)
        scale = np.sqrt(2.0 / (lam * frac * (1.0 - frac)))
        idx = np.flatnonzero(bucket == n_samples)
        step = max(1, chunk_points // int(n_samples))
        for lo in range(0, idx.size, step):
            sel = idx[lo:lo + step]
            px = ex + np.outer(flat_x[sel] - ex, frac)
            py = ey + np.outer(flat_y[sel] - ey, frac)
            pr, pc = terrain.cell_of(px, py)
            clearance = terrain.altitude[pr, pc] - (h_tx + np.outer(h_rx[sel] - h_tx, frac))
            d = flat_d[sel]
            with np.errstate(divide="ignore"):
                inv_sqrt_d = 1.0 / np.sqrt(d)
            v = np.where(clearance > 0, clearance * scale * inv_sqrt_d[:, None], -np.inf)
            v[d <= 0] = -np.inf
            v_max[sel] = v.max(axis=1)
    return knife_edge_loss_db(v_max).reshape(dist.shape)


def _shadowing_db(terrain, params, ex, ey):
    bits = np.array([ex, ey], dtype=np.float64).view(np.uint64)
    rng = np.random.default_rng(np.random.SeedSequence([params.rng_seed, int(bits[0]), int(bits[1])]))
    white = rng.standard_normal((terrain.height, terrain.width))
    smooth = ndimage.gaussian_filter(white, sigma=params.shadowing_corr_m / terrain.cell_size_m, mode="reflect")
    std = smooth.std()
    if std > 0:
        smooth /= std
    return params.shadowing_sigma_db * smooth


def unit_power_gain(terrain: TerrainGrid, params: PropagationParams, emitter: Sequence[float]) -> FieldMap:
    ex, ey = float(emitter[0]), float(emitter[1])
    if not terrain.contains(ex, ey):
        raise PlacementError(f"emitter ({ex}, {ey}) outside region {terrain.extent_m}")
    xs, ys = terrain.cell_centers()
    dist = np.hypot(xs - ex, ys - ey)
    er, ec = terrain.cell_of(ex, ey)
    d0 = params.reference_distance_m
    d_eff = np.maximum(dist, d0)
    d_eff[er, ec] = d0
    loss = params.reference_loss_db + 10.0 * params.path_loss_exponent * np.log10(d_eff / d0)
    if params.diffraction_enabled:
        diff = _diffraction_loss_db(terrain, params, ex, ey, xs, ys, dist)
        diff[er, ec] = 0.0
        loss = loss + diff
    if params.shadowing_sigma_db > 0:
        loss = loss + _shadowing_db(terrain, params, ex, ey)
    return FieldMap(terrain.width, terrain.height, 10.0 ** (-loss / 10.0))


def compute_field(terrain: TerrainGrid, params: PropagationParams, emitters: EmitterConfig) -> FieldMap:
    total = np.zeros((terrain.height, terrain.width))
    for loc, p in zip(emitters.locations, emitters.powers_w):
        total += unit_power_gain(terrain, params, loc).values_w * p
    return FieldMap(terrain.width, terrain.height, total)


def watts_to_dbm(w):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(w, dtype=np.float64)) + 30.0


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=np.float64) - 30.0) / 10.0)
