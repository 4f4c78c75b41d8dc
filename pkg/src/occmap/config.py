"""Experiment configuration: a JSON document with every field defaulted."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .baselines import InterpolatorConfig
from .dataset import DatasetSpec, TerrainSpec
from .errors import ParameterError
from .nn.train import TrainConfig
from .terrain import PropagationParams

SWEEP_KINDS = ("tau", "n_sensors", "noise", "tnr", "one_bit")
DEFAULT_SWEEP_VALUES = {
    "tau": [-110.0, -105.0, -100.0, -95.0, -90.0],
    "n_sensors": [25, 50, 100, 200, 400],
    "noise": [0.0, 1e-14, 1e-13, 1e-12],
    "tnr": [-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0],
    "one_bit": [50, 100, 200],
}


@dataclass(frozen=True)
class SweepConfig:
    kind: str = "n_sensors"
    values: tuple | None = None
    seeds: tuple = (0, 1, 2)
    test_maps_per_count: int = 7

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ParameterError(f"unknown sweep kind {self.kind!r}")
        if self.values is not None:
            object.__setattr__(self, "values", tuple(self.values))
            if not self.values:
                raise ParameterError("sweep values are empty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ParameterError("sweep needs at least one seed")

    @property
    def resolved_values(self) -> tuple:
        return self.values if self.values is not None else tuple(DEFAULT_SWEEP_VALUES[self.kind])


@dataclass(frozen=True)
class RocConfig:
    thetas: tuple = tuple(round(0.1 * i, 1) for i in range(1, 10))

    def __post_init__(self):
        object.__setattr__(self, "thetas", tuple(float(t) for t in self.thetas))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50, learning_rate=3e-2))
    test_maps_per_count: int = 7
    sweep: SweepConfig = field(default_factory=SweepConfig)
    baseline: InterpolatorConfig = field(default_factory=InterpolatorConfig)
    roc: RocConfig = field(default_factory=RocConfig)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def train_spec(self) -> DatasetSpec:
        return dataclasses.replace(self.dataset, split="train")

    @property
    def test_spec(self) -> DatasetSpec:
        return dataclasses.replace(self.dataset, split="test", maps_per_count=self.test_maps_per_count)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ParameterError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ParameterError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kw = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        kw[name] = _build(sub, value, f"{where}.{name}") if sub is not None else value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ParameterError(f"{where}: {exc}") from None


_NESTED = {
    (ExperimentConfig, "dataset"): DatasetSpec,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "sweep"): SweepConfig,
    (ExperimentConfig, "baseline"): InterpolatorConfig,
    (ExperimentConfig, "roc"): RocConfig,
    (DatasetSpec, "terrain"): TerrainSpec,
    (DatasetSpec, "propagation"): PropagationParams,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    ds = data.get("dataset")
    if isinstance(ds, dict):
        ds = dict(ds)
        for key in ("n_emitters_range", "power_range_w"):
            if key in ds:
                ds[key] = tuple(ds[key])
        data["dataset"] = ds
    if isinstance(data.get("train"), dict) or "train" not in data:
        # the desk-scale training defaults differ from the bare TrainConfig defaults
        data["train"] = {**_plain(dataclasses.asdict(ExperimentConfig().train)), **data.get("train", {})}
    return _build(ExperimentConfig, data, "config")


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
