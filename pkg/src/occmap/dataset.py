"""Generation, persistence and loading of (LLR image, occupancy map) pairs."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from . import _binio
from .errors import FormatError, ParameterError
from .llr import DOMAINS, MODES, LlrImage, aggregate
from .occupancy import GridSpec, OccupancyMap, compute_occupancy
from .sensing import SensorReadings, SensorSet, measure_ideal, measure_noisy, one_bit_readings, place_sensors
from .terrain import (EmitterConfig, FieldMap, PropagationParams, TerrainGrid, compute_field, load_terrain,
                      synthesize_terrain)

DATASET_MAGIC = b"SDST"
DATASET_VERSION = 1
SPLITS = {"train": 1, "test": 2}
MIN_POWER_W = 1e-6


@dataclass(frozen=True)
class TerrainSpec:
    """Either a synthetic terrain recipe or a path to an ASCII grid."""

    width: int = 128
    height: int = 128
    cell_size_m: float = 50.0
    roughness: float = 0.13
    seed: int = 7
    path: str | None = None

    def build(self) -> TerrainGrid:
        if self.path is not None:
            return load_terrain(self.path)
        return synthesize_terrain(self.width, self.height, self.cell_size_m, self.roughness, self.seed)


@dataclass(frozen=True)
class DatasetSpec:
    maps_per_count: int = 20
    n_emitters_range: tuple[int, int] = (1, 10)
    power_range_w: tuple[float, float] = (0.0, 2.0)
    tau_dbm: float = -105.0
    n_sensors: int = 50
    n_side: int = 32
    terrain: TerrainSpec = field(default_factory=TerrainSpec)
    propagation: PropagationParams = field(default_factory=PropagationParams)
    noise_w: float | None = None
    n_samples: int = 1024
    mode: str = "soft"
    domain: str | None = None
    seed: int = 0
    split: str = "train"

    def __post_init__(self):
        lo, hi = self.n_emitters_range
        if not 1 <= lo <= hi:
            raise ParameterError("n_emitters_range must satisfy 1 <= lo <= hi")
        if self.maps_per_count < 1 or self.n_sensors < 1 or self.n_samples < 1:
            raise ParameterError("maps_per_count, n_sensors and n_samples must be positive")
        if self.mode not in MODES:
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.domain is not None and self.domain not in DOMAINS:
            raise ParameterError(f"unknown domain {self.domain!r}")
        if self.split not in SPLITS:
            raise ParameterError(f"unknown split {self.split!r}")
        if self.noise_w is not None and self.noise_w < 0:
            raise ParameterError("noise_w must be >= 0")
        p0, p1 = self.power_range_w
        if not 0.0 <= p0 < p1:
            raise ParameterError("power_range_w must satisfy 0 <= lo < hi")

    @property
    def maps_total(self) -> int:
        lo, hi = self.n_emitters_range
        return self.maps_per_count * (hi - lo + 1)

    def n_emitters_of(self, index: int) -> int:
        return self.n_emitters_range[0] + index // self.maps_per_count

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_emitters_range"] = list(self.n_emitters_range)
        d["power_range_w"] = list(self.power_range_w)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        d["terrain"] = TerrainSpec(**d.get("terrain", {}))
        d["propagation"] = PropagationParams(**d.get("propagation", {}))
        if "n_emitters_range" in d:
            d["n_emitters_range"] = tuple(d["n_emitters_range"])
        if "power_range_w" in d:
            d["power_range_w"] = tuple(d["power_range_w"])
        return cls(**d)

    def canonical(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.canonical()).hexdigest()

    def grid_for(self, terrain: TerrainGrid) -> GridSpec:
        return GridSpec.for_terrain(terrain, self.n_side)


@dataclass(eq=False)
class Provenance:
    emitter_seed: int
    sensor_seed: int
    noise_seed: int
    emitters: EmitterConfig
    sensors: SensorSet
    readings: SensorReadings


@dataclass(eq=False)
class Pair:
    image: LlrImage
    occupancy: OccupancyMap
    provenance: Provenance

    @property
    def n_emitters(self) -> int:
        return self.provenance.emitters.count


def pair_seeds(seed: int, split: str, index: int) -> tuple[int, int, int]:
    """Independent (emitter, sensor, noise) seeds for one pair of one split."""
    children = np.random.SeedSequence([seed, SPLITS[split], index]).spawn(3)
    return tuple(int(c.generate_state(1, np.uint64)[0]) for c in children)


def sample_emitters(terrain: TerrainGrid, count: int, power_range_w, seed: int) -> EmitterConfig:
    """Uniform locations over the region, uniform powers with near-zero draws redrawn."""
    rng = np.random.default_rng(seed)
    w, h = terrain.extent_m
    locs = np.column_stack([rng.uniform(0.0, w, count), rng.uniform(0.0, h, count)])
    lo, hi = power_range_w
    powers = rng.uniform(lo, hi, count)
    while np.any(bad := powers < MIN_POWER_W):
        powers[bad] = rng.uniform(lo, hi, int(bad.sum()))
    return EmitterConfig(locs, powers)


class FieldBank:
    """Memoises emitter fields for one terrain and propagation model.

    Fields depend only on the emitter draw, so experiments that vary the
    threshold, sensor count or noise can share them.
    """

    def __init__(self, terrain: TerrainGrid, params: PropagationParams, jobs: int = 1):
        self.terrain, self.params, self.jobs = terrain, params, jobs
        self._fields: dict[tuple, FieldMap] = {}

    def _key(self, emitters: EmitterConfig):
        return (emitters.locations.tobytes(), emitters.powers_w.tobytes())

    def get(self, emitters: EmitterConfig) -> FieldMap:
        key = self._key(emitters)
        if key not in self._fields:
            self._fields[key] = compute_field(self.terrain, self.params, emitters)
        return self._fields[key]

    def prefetch(self, configs):
        missing = [e for e in configs if self._key(e) not in self._fields]
        if self.jobs > 1 and len(missing) > 1:
            with ProcessPoolExecutor(self.jobs) as pool:
                fields = list(pool.map(compute_field, [self.terrain] * len(missing), [self.params] * len(missing),
                                       missing))
            for e, f in zip(missing, fields):
                self._fields[self._key(e)] = f
        else:
            for e in missing:
                self.get(e)


def make_pair(spec: DatasetSpec, terrain: TerrainGrid, field_map: FieldMap, emitters: EmitterConfig,
              seeds: tuple[int, int, int]) -> Pair:
    grid = spec.grid_for(terrain)
    emitter_seed, sensor_seed, noise_seed = seeds
    occ = compute_occupancy(field_map, grid, spec.tau_dbm)
    sensors = place_sensors(grid, spec.n_sensors, sensor_seed)
    if spec.noise_w is None:
        readings = measure_ideal(field_map, grid, sensors)
    else:
        readings = measure_noisy(field_map, grid, sensors, spec.noise_w, spec.n_samples, noise_seed)
    if spec.mode == "hard":
        readings = one_bit_readings(readings, spec.tau_dbm)
    image = aggregate(readings, grid, spec.tau_dbm, spec.mode, spec.domain)
    return Pair(image, occ, Provenance(emitter_seed, sensor_seed, noise_seed, emitters, sensors, readings))


def iter_pairs(spec: DatasetSpec, terrain: TerrainGrid | None = None, bank: FieldBank | None = None
               ) -> Iterator[Pair]:
    terrain = terrain if terrain is not None else spec.terrain.build()
    bank = bank if bank is not None else FieldBank(terrain, spec.propagation)
    drawn = []
    for j in range(spec.maps_total):
        seeds = pair_seeds(spec.seed, spec.split, j)
        drawn.append((seeds, sample_emitters(terrain, spec.n_emitters_of(j), spec.power_range_w, seeds[0])))
    bank.prefetch([e for _, e in drawn])
    for seeds, emitters in drawn:
        yield make_pair(spec, terrain, bank.get(emitters), emitters, seeds)


def generate_pairs(spec: DatasetSpec, terrain: TerrainGrid | None = None, bank: FieldBank | None = None
                   ) -> list[Pair]:
    return list(iter_pairs(spec, terrain, bank))


def regenerate_pair(spec: DatasetSpec, provenance: Provenance, terrain: TerrainGrid | None = None) -> Pair:
    """Rebuild one pair from its stored seeds and emitter list."""
    terrain = terrain if terrain is not None else spec.terrain.build()
    field_map = compute_field(terrain, spec.propagation, provenance.emitters)
    seeds = (provenance.emitter_seed, provenance.sensor_seed, provenance.noise_seed)
    return make_pair(spec, terrain, field_map, provenance.emitters, seeds)


def stack(pairs) -> tuple[np.ndarray, np.ndarray]:
    """Network inputs (M, n, n) and targets (M, n, n)."""
    x = np.stack([p.image.values for p in pairs])
    t = np.stack([p.occupancy.bits for p in pairs]).astype(np.float64)
    return x, t


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------

def _write_provenance(f, prov: Provenance):
    for s in (prov.emitter_seed, prov.sensor_seed, prov.noise_seed):
        _binio.write_u64(f, s)
    e = prov.emitters
    _binio.write_u32(f, e.count)
    _binio.write_array(f, np.column_stack([e.locations, e.powers_w]).reshape(-1), "f8")
    r = prov.readings
    _binio.write_u32(f, len(r))
    _binio.write_array(f, np.column_stack([r.locations, r.measured_w, r.noise_w, r.n_samples]).reshape(-1), "f8")


def _read_provenance(f) -> Provenance:
    seeds = [_binio.read_u64(f) for _ in range(3)]
    n_e = _binio.read_u32(f)
    triples = _binio.read_array(f, "f8", 3 * n_e).reshape(n_e, 3)
    n_s = _binio.read_u32(f)
    cols = _binio.read_array(f, "f8", 5 * n_s).reshape(n_s, 5)
    readings = SensorReadings(cols[:, :2].copy(), cols[:, 2].copy(), cols[:, 3].copy(), cols[:, 4].copy())
    sensors = SensorSet(readings.locations, seeds[1])
    return Provenance(*seeds, EmitterConfig(triples[:, :2], triples[:, 2]), sensors, readings)


def write_dataset(path, spec: DatasetSpec, pairs) -> int:
    count = 0
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        _binio.write_u32(f, DATASET_VERSION)
        _binio.write_bytes(f, spec.canonical())
        _binio.write_u32(f, spec.maps_total)
        for pair in pairs:
            pair.image.write(f)
            pair.occupancy.write(f)
            _write_provenance(f, pair.provenance)
            count += 1
    if count != spec.maps_total:
        raise FormatError(f"wrote {count} pairs but spec declares {spec.maps_total}")
    return count


def generate_dataset(spec: DatasetSpec, path, jobs: int = 1, bank: FieldBank | None = None) -> int:
    terrain = bank.terrain if bank is not None else spec.terrain.build()
    bank = bank if bank is not None else FieldBank(terrain, spec.propagation, jobs)
    return write_dataset(path, spec, iter_pairs(spec, terrain, bank))


def read_spec(path) -> DatasetSpec:
    with open(path, "rb") as f:
        spec, _ = _read_header(f)
    return spec


def _read_header(f):
    _binio.expect_magic(f, DATASET_MAGIC)
    version = _binio.read_u32(f)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    try:
        spec = DatasetSpec.from_dict(json.loads(_binio.read_bytes(f)))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"corrupt dataset spec block: {exc}") from None
    return spec, _binio.read_u32(f)


def load_dataset(path) -> Iterator[Pair]:
    """Stream pairs from a dataset file one record at a time."""
    with open(path, "rb") as f:
        _, count = _read_header(f)
        for _ in range(count):
            image = LlrImage.read(f)
            occ = OccupancyMap.read(f)
            yield Pair(image, occ, _read_provenance(f))


def dataset_stats(path, bins: int = 10) -> dict:
    spec = read_spec(path)
    lo, hi = spec.n_emitters_range
    per_count = {n: 0 for n in range(lo, hi + 1)}
    occ_sum = {n: 0.0 for n in range(lo, hi + 1)}
    fractions = []
    for pair in load_dataset(path):
        n = pair.n_emitters
        per_count[n] = per_count.get(n, 0) + 1
        occ_sum[n] = occ_sum.get(n, 0.0) + pair.occupancy.fraction
        fractions.append(pair.occupancy.fraction)
    hist, edges = np.histogram(fractions, bins=bins, range=(0.0, 1.0))
    return {
        "maps_total": len(fractions),
        "per_count": per_count,
        "mean_occupancy_per_count": {n: occ_sum[n] / per_count[n] for n in per_count if per_count[n]},
        "occupancy_histogram": hist.tolist(),
        "histogram_edges": edges.tolist(),
        "mean_occupancy": float(np.mean(fractions)) if fractions else 0.0,
    }


def with_split(spec: DatasetSpec, split: str, maps_per_count: int | None = None) -> DatasetSpec:
    kw = {"split": split}
    if maps_per_count is not None:
        kw["maps_per_count"] = maps_per_count
    return replace(spec, **kw)


def dataset_path(directory, split) -> Path:
    return Path(directory) / f"{split}.sdst"
