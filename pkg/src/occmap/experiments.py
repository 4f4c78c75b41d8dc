"""Train/test robustness sweeps over threshold, sensor count, noise and one-bit sensing."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .baselines import InterpolatorConfig, baseline_decide, interpolate
from .dataset import DatasetSpec, FieldBank, generate_pairs, stack
from .errors import ParameterError
from .metrics import EvalReport, confusion, noise_for_tnr, tnr_db
from .nn.network import Network, decide
from .nn.train import TrainConfig, predict_logits, train

log = logging.getLogger(__name__)

KINDS = ("tau", "n_sensors", "noise", "tnr", "one_bit")


def setting(kind: str, base: DatasetSpec, value) -> DatasetSpec:
    """The dataset spec obtained by moving ``base`` to sweep ``value``."""
    if kind == "tau":
        return replace(base, tau_dbm=float(value))
    if kind == "n_sensors":
        return replace(base, n_sensors=int(value))
    if kind == "noise":
        return replace(base, noise_w=float(value))
    if kind == "tnr":
        return replace(base, noise_w=noise_for_tnr(base.tau_dbm, float(value)))
    if kind == "one_bit":
        return replace(base, n_sensors=int(value), mode="hard", domain=None)
    raise ParameterError(f"unknown sweep kind {kind!r}")


class Workbench:
    """Shares fields and trained networks across the settings of an experiment."""

    def __init__(self, base: DatasetSpec, train_config: TrainConfig, bank: FieldBank | None = None,
                 test_maps_per_count: int = 7, jobs: int = 1):
        self.base = base
        self.train_config = train_config
        if bank is None:
            terrain = base.terrain.build()
            bank = FieldBank(terrain, base.propagation, jobs)
        self.bank = bank
        self.test_maps_per_count = test_maps_per_count
        self._nets: dict[str, Network] = {}

    @property
    def terrain(self):
        return self.bank.terrain

    def pairs(self, spec: DatasetSpec):
        return generate_pairs(spec, self.terrain, self.bank)

    def train_spec(self, spec: DatasetSpec) -> DatasetSpec:
        return replace(spec, split="train")

    def test_spec(self, spec: DatasetSpec, seed: int) -> DatasetSpec:
        return replace(spec, split="test", seed=seed, maps_per_count=self.test_maps_per_count)

    def network(self, spec: DatasetSpec) -> Network:
        spec = self.train_spec(spec)
        key = spec.digest()
        if key not in self._nets:
            x, t = stack(self.pairs(spec))
            log.info("training on %d maps (%s)", len(x), key[:12])
            self._nets[key] = train(x, t, self.train_config).network
        return self._nets[key]

    def adopt(self, spec: DatasetSpec, net: Network):
        self._nets[self.train_spec(spec).digest()] = net

    def evaluate(self, net: Network, spec: DatasetSpec, seed: int, theta: float = 0.5) -> EvalReport:
        test = self.test_spec(spec, seed)
        x, t = stack(self.pairs(test))
        pred = decide(predict_logits(net, x), theta)
        return EvalReport.from_counts(confusion(t, pred), theta, spec.tau_dbm, tnr_db(spec.tau_dbm, spec.noise_w))

    def evaluate_baseline(self, spec: DatasetSpec, seed: int, config: InterpolatorConfig) -> EvalReport:
        test = self.test_spec(spec, seed)
        pairs = self.pairs(test)
        grid = spec.grid_for(self.terrain)
        pred = np.stack([baseline_decide(interpolate(p.provenance.readings, grid, config), spec.tau_dbm)
                         for p in pairs])
        truth = np.stack([p.occupancy.bits for p in pairs])
        return EvalReport.from_counts(confusion(truth, pred), math.nan, spec.tau_dbm,
                                      tnr_db(spec.tau_dbm, spec.noise_w))


@dataclass
class SweepResult:
    kind: str
    columns: tuple
    rows: list

    def as_table(self):
        return [tuple(r[c] for c in self.columns) for r in self.rows]


def _stats(values):
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


def sweep_experiment(kind: str, bench: Workbench, values, seeds=(0, 1, 2), theta: float = 0.5,
                     base_network: Network | None = None) -> SweepResult:
    """Rows of matched and mismatched error rates along one sweep axis.

    Matched means the network was trained at the tested value; mismatched
    means it was trained at the base setting.  One-bit sweeps instead
    compare a one-bit network at each sensor count against the
    full-resolution base network evaluated at the same count.
    """
    if kind not in KINDS:
        raise ParameterError(f"unknown sweep kind {kind!r}")
    values = list(values)
    seeds = list(seeds)
    if not values or not seeds:
        raise ParameterError("sweep needs at least one value and one seed")
    base = bench.base
    if base_network is not None:
        bench.adopt(base, base_network)
    base_net = bench.network(base)
    rows = []
    for value in values:
        spec = setting(kind, base, value)
        matched_net = bench.network(spec)
        if kind == "one_bit":
            compare = replace(base, n_sensors=int(value))
            k_a = [bench.evaluate(matched_net, spec, s, theta).kappa for s in seeds]
            k_b = [bench.evaluate(base_net, compare, s, theta).kappa for s in seeds]
        else:
            k_a = [bench.evaluate(matched_net, spec, s, theta).kappa for s in seeds]
            k_b = [bench.evaluate(base_net, spec, s, theta).kappa for s in seeds]
        (ma, sa), (mb, sb) = _stats(k_a), _stats(k_b)
        row = {"value": float(value), "tnr_db": tnr_db(spec.tau_dbm, spec.noise_w)}
        if kind == "one_bit":
            row.update(kappa_one_bit=ma, kappa_one_bit_std=sa, kappa_full=mb, kappa_full_std=sb)
        else:
            row.update(kappa_matched=ma, kappa_matched_std=sa, kappa_mismatched=mb, kappa_mismatched_std=sb)
        rows.append(row)
        log.info("%s=%s %s", kind, value, row)
    if kind == "one_bit":
        cols = ("value", "tnr_db", "kappa_one_bit", "kappa_one_bit_std", "kappa_full", "kappa_full_std")
    else:
        cols = ("value", "tnr_db", "kappa_matched", "kappa_matched_std", "kappa_mismatched",
                "kappa_mismatched_std")
    return SweepResult(kind, cols, rows)
