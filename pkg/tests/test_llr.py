import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occmap.errors import ModeError, ParameterError
from occmap.llr import (LlrImage, aggregate, approx_llr, approx_llr_noisy, glrt_llr, noisy_glrt_llr, pool,
                        sensor_llrs)
from occmap.occupancy import GridSpec
from occmap.sensing import one_bit_readings
from occmap.terrain import dbm_to_watts

from conftest import make_readings
from oracles import glrt_grid_search


def test_glrt_zero_at_threshold():
    assert glrt_llr(3.0, 3.0, 0.5) == 0.0


def test_glrt_unit_offsets():
    assert glrt_llr(4.0, 3.0, 0.5) == 1.0
    assert glrt_llr(2.0, 3.0, 0.5) == -1.0


def test_glrt_rejects_bad_zeta():
    with pytest.raises(ParameterError):
        glrt_llr(1.0, 0.0, 0.0)


def test_glrt_matches_grid_search():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m, tau = rng.uniform(-5, 5, 2)
        z = rng.uniform(0.2, 2.0)
        assert glrt_llr(m, tau, z) == pytest.approx(glrt_grid_search(m, tau, z), abs=1e-6)


def test_approx_llr_examples():
    assert approx_llr(-90.0, -90.0) == 0.0
    assert approx_llr(-85.0, -90.0) == 5.0


def test_approx_and_glrt_agree_in_sign():
    rng = np.random.default_rng(1)
    m, tau = rng.normal(0, 3, (2, 100_000))
    z = rng.uniform(0.1, 3.0, 100_000)
    assert np.array_equal(np.sign(approx_llr(m, tau)), np.sign(glrt_llr(m, tau, z)))


def test_noisy_glrt_reduces_to_glrt():
    rng = np.random.default_rng(2)
    m = rng.uniform(0, 5, 500)
    tau = rng.uniform(-2, 5, 500)
    assert np.array_equal(noisy_glrt_llr(m, tau, 0.0, 128, 0.5), glrt_llr(m, tau, 0.5))


def test_noisy_glrt_zero_on_first_branch_boundary():
    assert noisy_glrt_llr(1.5 + 2.0, 2.0, 1.5, 64, 0.5) == 0.0


def test_noisy_glrt_branches_meet():
    for nu2, tau, n, z in [(1.0, 2.0, 16, 0.5), (3e-12, 1e-12, 1024, 1e-24), (0.2, 7.0, 1, 3.0)]:
        denom = 2.0 * (nu2 ** 2 / n + z)
        first = abs(nu2 - nu2 - tau) * (nu2 - nu2 - tau) / denom
        second = tau * (2 * nu2 - 2 * nu2 - tau) / denom
        assert first == pytest.approx(second, rel=1e-15)
        assert noisy_glrt_llr(nu2, tau, nu2, n, z) == pytest.approx(-tau * tau / denom, rel=1e-15)
        below = noisy_glrt_llr(np.nextafter(nu2, 0), tau, nu2, n, z)
        assert below == pytest.approx(-tau * tau / denom, rel=1e-9)


def test_noisy_glrt_validation():
    with pytest.raises(ParameterError):
        noisy_glrt_llr(1.0, 1.0, -1.0, 4, 0.5)
    with pytest.raises(ParameterError):
        noisy_glrt_llr(1.0, 1.0, 1.0, 0, 0.5)
    with pytest.raises(ParameterError):
        noisy_glrt_llr(1.0, 1.0, 1.0, 4, 0.0)


def test_noisy_approx_reduces_when_noise_free():
    m = np.random.default_rng(3).uniform(0, 10, 1000)
    assert np.array_equal(approx_llr_noisy(m, 4.0, 0.0), approx_llr(m, 4.0))


def test_noisy_approx_branch_agreement():
    assert approx_llr_noisy(2.5, 4.0, 2.5) == -4.0
    assert approx_llr_noisy(np.nextafter(2.5, 0), 4.0, 2.5) == pytest.approx(-4.0)


def test_noisy_approx_matches_piecewise_oracle():
    rng = np.random.default_rng(4)
    m, tau, nu = rng.uniform(0, 3, (3, 2000))
    got = approx_llr_noisy(m, tau, nu)
    for j in range(2000):
        want = m[j] - nu[j] - tau[j] if m[j] >= nu[j] else 2 * m[j] - 2 * nu[j] - tau[j]
        assert got[j] == want


GRID = GridSpec(4, 16, 16, 10.0)


def test_empty_subregions_are_zero():
    r = make_readings([[5.0, 5.0], [15.0, 25.0]], [1e-9, 1e-11])
    img = aggregate(r, GRID, -90.0)
    assert np.count_nonzero(img.values) == 1 and img.values[0, 0] != 0
    assert np.all(img.values.reshape(-1)[1:] == 0)


def test_two_sensors_pool_to_their_mean():
    tau = -90.0
    # choose readings whose soft LLRs in dBm are exactly 2 and 4
    r = make_readings([[1.0, 1.0], [30.0, 30.0]], dbm_to_watts([tau + 2.0, tau + 4.0]))
    raw = aggregate(r, GRID, tau, normalize=False)
    assert raw.values[0, 0] == pytest.approx(3.0, abs=1e-12)
    assert np.count_nonzero(raw.values) == 1 and raw.normalizer == 1.0


def test_normalized_variance_is_one():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = rng.integers(1, 40)
        r = make_readings(rng.uniform(0, 160, (n, 2)), 10 ** rng.uniform(-14, -8, n))
        img = aggregate(r, GRID, -95.0)
        if np.any(img.values):
            assert img.values.var() == pytest.approx(1.0, abs=1e-9)


def test_all_zero_image_has_unit_normalizer():
    r = make_readings([[5.0, 5.0]], [dbm_to_watts(-90.0)])
    img = aggregate(r, GRID, -90.0)
    assert img.normalizer == 1.0 and not img.values.any()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.sampled_from(["soft", "hard", "soft_noisy"]))
def test_zero_hole_sign_and_range(seed, n, mode):
    rng = np.random.default_rng(seed)
    r = make_readings(rng.uniform(0, 160, (n, 2)), 10 ** rng.uniform(-14, -8, n), noise=1e-13, n_samples=64)
    if mode == "hard":
        r = one_bit_readings(r, -100.0)
    raw = aggregate(r, GRID, -100.0, mode, normalize=False)
    img = aggregate(r, GRID, -100.0, mode)
    occupied = np.zeros(GRID.n_cells, bool)
    occupied[GRID.subregion_of(r.locations[:, 0], r.locations[:, 1])] = True
    assert np.all(img.values.reshape(-1)[~occupied] == 0)
    assert np.array_equal(np.sign(img.values), np.sign(raw.values))
    assert img.normalizer > 0
    if mode == "hard":
        assert np.all(np.abs(raw.values) <= 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-110, -80), st.floats(-110, -80))
def test_threshold_shift(seed, tau_train, tau_test):
    rng = np.random.default_rng(seed)
    n = 30
    r = make_readings(rng.uniform(0, 160, (n, 2)), 10 ** rng.uniform(-14, -8, n))
    a = aggregate(r, GRID, tau_test, normalize=False).values
    b = aggregate(r, GRID, tau_train, normalize=False).values
    occupied = np.zeros(GRID.n_cells, bool)
    occupied[GRID.subregion_of(r.locations[:, 0], r.locations[:, 1])] = True
    occ = occupied.reshape(4, 4)
    assert np.allclose(a[occ], b[occ] + (tau_train - tau_test), rtol=0, atol=1e-9)


def test_hard_mode_uses_only_decisions():
    r = one_bit_readings(make_readings([[5, 5], [6, 6], [50, 50]], [1e-6, 1e-16, 1e-6]), -90.0)
    raw = aggregate(r, GRID, -90.0, "hard", normalize=False)
    assert raw.values[0, 0] == 0.0 and raw.values[1, 1] == 1.0


def test_mode_errors():
    r = make_readings([[5, 5]], [1e-9])
    with pytest.raises(ModeError):
        aggregate(r, GRID, -90.0, "hard")
    r.noise_w[:] = np.nan
    with pytest.raises(ModeError):
        aggregate(r, GRID, -90.0, "soft_noisy")
    with pytest.raises(ModeError):
        aggregate(r, GRID, -90.0, "bogus")
    with pytest.raises(ModeError):
        sensor_llrs(make_readings([[5, 5]], [1e-9]), -90.0, "soft_noisy", "dbm")


def test_domains_default_per_mode():
    r = make_readings([[5, 5]], [1e-9])
    assert sensor_llrs(r, -90.0, "soft")[1] == "dbm"
    assert sensor_llrs(r, -90.0, "soft_noisy")[1] == "linear_watts"
    lin, _ = sensor_llrs(r, -90.0, "soft", "linear_watts")
    assert lin[0] == pytest.approx(1e-9 - 1e-12)


def test_pool_floor_boundary():
    vals = pool(np.array([1.0]), np.array([[40.0, 0.0]]), GRID)
    assert vals[0, 1] == 1.0


def test_llr_file_round_trip():
    img = LlrImage(2, [0.5, -1.0, 0.0, 2.0], 3.25, "dbm")
    buf = io.BytesIO()
    img.write(buf)
    raw = buf.getvalue()
    assert raw[:4] == b"SLLR" and len(raw) == 4 + 4 + 1 + 8 + 32
    back = LlrImage.read(io.BytesIO(raw))
    assert np.array_equal(back.values, img.values)
    assert (back.normalizer, back.domain) == (3.25, "dbm")
