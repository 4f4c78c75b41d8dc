import numpy as np
import pytest

from occmap.occupancy import GridSpec
from occmap.sensing import SensorReadings
from occmap.terrain import PropagationParams, TerrainGrid


@pytest.fixture
def flat16():
    return TerrainGrid.flat(16, 16, 50.0)


@pytest.fixture
def grid16_4():
    return GridSpec(4, 16, 16, 50.0)


@pytest.fixture
def no_diffraction():
    return PropagationParams(diffraction_enabled=False)


def make_readings(locations, measured, noise=0.0, n_samples=np.inf):
    locations = np.asarray(locations, dtype=np.float64).reshape(-1, 2)
    measured = np.asarray(measured, dtype=np.float64).reshape(-1)
    n = len(measured)
    return SensorReadings(locations, measured, np.full(n, float(noise)), np.full(n, float(n_samples)))


@pytest.fixture(scope="session")
def desk_bank():
    """Field cache on the default desk-scale terrain, shared by every test module."""
    from occmap.dataset import DatasetSpec, FieldBank

    spec = DatasetSpec()
    return FieldBank(spec.terrain.build(), spec.propagation)


@pytest.fixture(scope="session")
def desk_bench(desk_bank):
    """Desk-scale experiment context; trained networks are cached across tests."""
    from occmap.config import ExperimentConfig
    from occmap.experiments import Workbench

    cfg = ExperimentConfig()
    return Workbench(cfg.dataset, cfg.train, desk_bank, cfg.test_maps_per_count)


@pytest.fixture(scope="session")
def desk_cache():
    return {}


# -- acceptance verdicts -------------------------------------------------------

ACCEPTANCE = {}


class Verdict:
    def __init__(self, key):
        self.key = key
        self.ok = False
        self.detail = ""
        self.lines = []

    def set(self, ok, detail):
        self.ok, self.detail = bool(ok), detail

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and not self.detail:
            self.ok, self.detail = False, f"{exc_type.__name__}: {exc}"
        ACCEPTANCE[self.key] = self
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        v = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if v.ok else 'FAIL'}  {v.detail}")
        for line in v.lines:
            terminalreporter.write_line(f"    {line}")
