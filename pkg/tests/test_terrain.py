import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occmap.errors import DimensionError, FormatError, NonFiniteValueError, PlacementError
from occmap.terrain import (EmitterConfig, FieldMap, PropagationParams, TerrainGrid, compute_field,
                            free_space_loss_db, knife_edge_loss_db, load_terrain, save_terrain,
                            synthesize_terrain, unit_power_gain)


def test_zero_roughness_is_flat():
    t = synthesize_terrain(64, 64, 50.0, 0.0, seed=1)
    assert np.ptp(t.altitude) == 0.0


def test_full_roughness_spans_600m():
    t = synthesize_terrain(64, 64, 50.0, 1.0, seed=1)
    assert np.ptp(t.altitude) == pytest.approx(600.0, abs=1e-9)


def test_low_roughness_regime():
    t = synthesize_terrain(64, 64, 50.0, 0.13, seed=7)
    assert np.ptp(t.altitude) == pytest.approx(78.0, abs=1e-9)


def test_synthesis_deterministic_and_cropped():
    a = synthesize_terrain(40, 24, 25.0, 0.5, seed=3)
    b = synthesize_terrain(40, 24, 25.0, 0.5, seed=3)
    assert a.altitude.shape == (24, 40)
    assert np.array_equal(a.altitude, b.altitude)
    assert not np.array_equal(a.altitude, synthesize_terrain(40, 24, 25.0, 0.5, seed=4).altitude)


def test_relief_monotone_in_roughness():
    spans = [np.ptp(synthesize_terrain(32, 32, 50.0, r, seed=2).altitude) for r in (0.1, 0.3, 0.6, 0.9)]
    assert all(a < b for a, b in zip(spans, spans[1:]))


@pytest.mark.parametrize("w,h,r", [(1, 64, 0.5), (64, 0, 0.5), (64, 64, -0.1), (64, 64, 1.5)])
def test_synthesis_rejects_bad_arguments(w, h, r):
    with pytest.raises(DimensionError):
        synthesize_terrain(w, h, 50.0, r, seed=0)


def test_terrain_round_trip(tmp_path):
    t = synthesize_terrain(64, 64, 50.0, 0.5, seed=3)
    save_terrain(t, tmp_path / "t.asc")
    back = load_terrain(tmp_path / "t.asc")
    assert back.same_as(t)


def test_terrain_short_file(tmp_path):
    p = tmp_path / "bad.asc"
    p.write_text("ncols 2\nnrows 2\ncellsize 10\n1 2\n3\n")
    with pytest.raises(FormatError) as exc:
        load_terrain(p)
    assert exc.value.lineno is not None


def test_terrain_nan_token(tmp_path):
    p = tmp_path / "nan.asc"
    p.write_text("ncols 2\nnrows 2\ncellsize 10\n1 2\nnan 4\n")
    with pytest.raises(NonFiniteValueError) as exc:
        load_terrain(p)
    assert exc.value.lineno == 5


def test_terrain_garbage_token(tmp_path):
    p = tmp_path / "junk.asc"
    p.write_text("ncols 2\nnrows 1\ncellsize 10\n1 x\n")
    with pytest.raises(FormatError, match="line 4"):
        load_terrain(p)


def test_reference_loss_default_is_free_space_at_one_metre():
    assert PropagationParams().reference_loss_db == pytest.approx(free_space_loss_db(2100.0, 1.0))
    lam = 299_792_458.0 / 2.1e9
    assert free_space_loss_db(2100.0) == pytest.approx(20 * math.log10(4 * math.pi / lam), rel=1e-12)
    assert free_space_loss_db(2100.0) == pytest.approx(38.9, abs=0.05)


def test_flat_terrain_has_no_diffraction_loss(flat16):
    on = unit_power_gain(flat16, PropagationParams(diffraction_enabled=True), (123.0, 401.0))
    off = unit_power_gain(flat16, PropagationParams(diffraction_enabled=False), (123.0, 401.0))
    assert np.array_equal(on.values_w, off.values_w)


def test_flat_large_region_has_no_diffraction_loss():
    big = TerrainGrid.flat(64, 64, 200.0)
    on = unit_power_gain(big, PropagationParams(), (10.0, 10.0))
    off = unit_power_gain(big, PropagationParams(diffraction_enabled=False), (10.0, 10.0))
    assert np.array_equal(on.values_w, off.values_w)


def test_path_loss_formula_at_100m(flat16):
    params = PropagationParams(path_loss_exponent=2.0, reference_loss_db=0.0, reference_distance_m=1.0,
                               diffraction_enabled=True)
    g = unit_power_gain(flat16, params, (25.0, 25.0))
    # cell (0, 2) has its centre at (125, 25), 100 m from the emitter
    assert g.values_w[0, 2] == pytest.approx(1e-4, rel=1e-12)


def test_own_cell_uses_reference_distance(flat16):
    params = PropagationParams(reference_loss_db=30.0, diffraction_enabled=False)
    g = unit_power_gain(flat16, params, (10.0, 40.0))
    assert g.values_w[0, 0] == pytest.approx(1e-3)
    assert g.values_w.max() == g.values_w[0, 0]


def test_ridge_blocks_signal():
    alt = np.zeros((8, 32))
    alt[:, 16] = 60.0
    ridge = TerrainGrid(32, 8, 50.0, alt)
    flat = TerrainGrid.flat(32, 8, 50.0)
    params = PropagationParams()
    e = (5 * 50.0 + 25.0, 4 * 50.0 + 25.0)
    g_ridge = unit_power_gain(ridge, params, e).values_w
    g_flat = unit_power_gain(flat, params, e).values_w
    assert np.all(g_ridge[:, 25:] < g_flat[:, 25:])
    assert np.all(g_ridge[:, :10] == g_flat[:, :10])


def test_knife_edge_threshold():
    assert knife_edge_loss_db(-0.78) == 0.0
    assert knife_edge_loss_db(-0.5) > 0.0
    assert knife_edge_loss_db(0.0) == pytest.approx(6.9 + 20 * math.log10(math.sqrt(1.01) - 0.1))


def test_emitter_outside_region(flat16):
    with pytest.raises(PlacementError):
        unit_power_gain(flat16, PropagationParams(), (800.0, 10.0))
    with pytest.raises(PlacementError):
        compute_field(flat16, PropagationParams(), EmitterConfig([[10.0, -1.0]], [1.0]))


def test_zero_emitters_give_zero_field(flat16):
    f = compute_field(flat16, PropagationParams(), EmitterConfig(np.zeros((0, 2)), np.zeros(0)))
    assert not f.values_w.any()


def test_power_scaling(flat16, no_diffraction):
    g = unit_power_gain(flat16, no_diffraction, (300.0, 300.0))
    f = compute_field(flat16, no_diffraction, EmitterConfig([[300.0, 300.0]], [2.0]))
    assert np.array_equal(f.values_w, 2.0 * g.values_w)


def test_two_emitters_superpose():
    t = synthesize_terrain(16, 16, 50.0, 0.4, seed=5)
    params = PropagationParams(shadowing_sigma_db=4.0)
    locs = [[100.0, 650.0], [700.0, 90.0]]
    both = compute_field(t, params, EmitterConfig(locs, [0.5, 1.5])).values_w
    a = unit_power_gain(t, params, locs[0]).values_w * 0.5
    b = unit_power_gain(t, params, locs[1]).values_w * 1.5
    assert np.array_equal(both, a + b)


def test_flat_radial_symmetry(flat16, no_diffraction):
    g = unit_power_gain(flat16, no_diffraction, (425.0, 425.0)).values_w
    # cells (8, 8) centred on the emitter: offsets (3, 4) and (4, 3) and (0, 5) are all 5 cells away
    ref = g[8 + 3, 8 + 4]
    for r, c in [(8 + 4, 8 + 3), (8 - 3, 8 - 4), (8, 8 + 5), (8 - 5, 8)]:
        assert g[r, c] == pytest.approx(ref, rel=1e-12)


def test_shadowing_seeded():
    t = TerrainGrid.flat(16, 16, 50.0)
    p1 = PropagationParams(shadowing_sigma_db=6.0, rng_seed=1)
    a = unit_power_gain(t, p1, (200.0, 200.0)).values_w
    b = unit_power_gain(t, p1, (200.0, 200.0)).values_w
    c = unit_power_gain(t, PropagationParams(shadowing_sigma_db=6.0, rng_seed=2), (200.0, 200.0)).values_w
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_field_file_round_trip(tmp_path, flat16, no_diffraction):
    f = compute_field(flat16, no_diffraction, EmitterConfig([[10.0, 10.0]], [1.0]))
    f.save(tmp_path / "f.sfld")
    raw = (tmp_path / "f.sfld").read_bytes()
    assert raw[:4] == b"SFLD" and len(raw) == 4 + 8 + 8 * 256
    assert np.array_equal(FieldMap.load(tmp_path / "f.sfld").values_w, f.values_w)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 799.9), st.floats(0, 799.9), st.floats(0.01, 2.0)), min_size=1, max_size=4),
       st.integers(0, 3), st.floats(1.01, 3.0))
def test_superposition_and_power_monotonicity(emitters, which, factor):
    t = synthesize_terrain(16, 16, 50.0, 0.3, seed=11)
    params = PropagationParams()
    locs = [(x, y) for x, y, _ in emitters]
    powers = [p for _, _, p in emitters]
    total = compute_field(t, params, EmitterConfig(locs, powers)).values_w
    acc = np.zeros_like(total)
    for loc, p in zip(locs, powers):
        acc += compute_field(t, params, EmitterConfig([loc], [p])).values_w
    assert np.array_equal(total, acc)
    bumped = list(powers)
    bumped[which % len(bumped)] *= factor
    assert np.all(compute_field(t, params, EmitterConfig(locs, bumped)).values_w >= total)


def test_field_deterministic():
    t = synthesize_terrain(16, 16, 50.0, 0.5, seed=1)
    e = EmitterConfig([[55.0, 610.0], [400.0, 400.0]], [1.0, 0.2])
    a = compute_field(t, PropagationParams(shadowing_sigma_db=3.0), e).values_w
    b = compute_field(t, PropagationParams(shadowing_sigma_db=3.0), e).values_w
    assert a.tobytes() == b.tobytes()
