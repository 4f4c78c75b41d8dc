"""Sub-region partition, mean fields and binary occupancy ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _binio
from .errors import GridError
from .terrain import FieldMap, TerrainGrid, dbm_to_watts, watts_to_dbm

OCC_MAGIC = b"SOCC"


@dataclass(frozen=True)
class GridSpec:
    """``n_side x n_side`` partition of a ``width x height`` fine raster."""

    n_side: int
    width: int
    height: int
    cell_size_m: float

    def __post_init__(self):
        if self.n_side < 1:
            raise GridError("n_side must be positive")
        if self.width % self.n_side or self.height % self.n_side:
            raise GridError(f"raster {self.width}x{self.height} is not divisible by n_side={self.n_side}")

    @classmethod
    def for_terrain(cls, terrain: TerrainGrid, n_side: int) -> "GridSpec":
        return cls(n_side, terrain.width, terrain.height, terrain.cell_size_m)

    @property
    def n_cells(self) -> int:
        return self.n_side * self.n_side

    @property
    def block(self) -> tuple[int, int]:
        """Sub-region size in raster cells as (rows, cols)."""
        return self.height // self.n_side, self.width // self.n_side

    @property
    def subregion_size_m(self) -> tuple[float, float]:
        br, bc = self.block
        return bc * self.cell_size_m, br * self.cell_size_m

    def subregion_of(self, x, y):
        """Row-major sub-region index of metric positions (floor rule on boundaries)."""
        sx, sy = self.subregion_size_m
        col = np.clip(np.floor(np.asarray(x, dtype=np.float64) / sx).astype(np.int64), 0, self.n_side - 1)
        row = np.clip(np.floor(np.asarray(y, dtype=np.float64) / sy).astype(np.int64), 0, self.n_side - 1)
        return row * self.n_side + col

    def subregion_centers(self):
        """(x, y) centres of all sub-regions, row-major, shape (n_G, 2)."""
        sx, sy = self.subregion_size_m
        xs = (np.arange(self.n_side) + 0.5) * sx
        ys = (np.arange(self.n_side) + 0.5) * sy
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(eq=False)
class OccupancyMap:
    n_side: int
    bits: np.ndarray
    tau_dbm: float

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8).reshape(self.n_side, self.n_side)

    @property
    def fraction(self) -> float:
        return float(self.bits.mean())

    def write(self, f):
        f.write(OCC_MAGIC)
        _binio.write_u32(f, self.n_side)
        _binio.write_array(f, self.bits, "u1")
        _binio.write_f64(f, self.tau_dbm)

    @classmethod
    def read(cls, f):
        _binio.expect_magic(f, OCC_MAGIC)
        n = _binio.read_u32(f)
        bits = _binio.read_array(f, "u1", n * n)
        if np.any(bits > 1):
            raise GridError("occupancy bits must be 0 or 1")
        return cls(n, bits, _binio.read_f64(f))


def _check(field: FieldMap, grid: GridSpec):
    if (field.width, field.height) != (grid.width, grid.height):
        raise GridError(f"field raster {field.width}x{field.height} does not match grid raster "
                        f"{grid.width}x{grid.height}")


def mean_field(field: FieldMap, grid: GridSpec) -> np.ndarray:
    """Arithmetic mean of linear power over each sub-region, shape (n_side, n_side)."""
    _check(field, grid)
    br, bc = grid.block
    return field.values_w.reshape(grid.n_side, br, grid.n_side, bc).mean(axis=(1, 3))


def compute_occupancy(field: FieldMap, grid: GridSpec, tau_dbm: float) -> OccupancyMap:
    tau_w = dbm_to_watts(tau_dbm)
    return OccupancyMap(grid.n_side, mean_field(field, grid) >= tau_w, float(tau_dbm))


def intra_subregion_spread_db(field: FieldMap, grid: GridSpec) -> float:
    """Mean over sub-regions of the max-min field spread in dB.

    Diagnostic for choosing ``n_side`` so that the field is roughly
    constant inside a sub-region.
    """
    _check(field, grid)
    br, bc = grid.block
    blocks = watts_to_dbm(np.maximum(field.values_w, 1e-300)).reshape(grid.n_side, br, grid.n_side, bc)
    spread = blocks.max(axis=(1, 3)) - blocks.min(axis=(1, 3))
    return float(spread.mean())
