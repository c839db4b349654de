import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tdcgl.dissipation import (AveragedDissipation, DecaySeries, MeasurementSet,
                               PlaneWaveDissipation, decay_law, g_averaged, g_plane_wave,
                               g_pointwise, plane_wave_series, plane_wave_table,
                               reference_model_without_f)
from tdcgl.forward import EvolutionPlan, ModelSpec, NonlinearFn
from tdcgl.grid import GridSpec


def _exp_series(g0, alpha, dz, n=11, I0=5.0):
    z = np.arange(n) * dz
    return DecaySeries(z, I0 * np.exp(-2 * g0 * z / alpha))


def test_series_validation():
    with pytest.raises(ValueError):
        DecaySeries([0, 1], [1, 1])
    with pytest.raises(ValueError):
        DecaySeries([0, 2, 1], [1, 1, 1])
    with pytest.raises(ValueError):
        DecaySeries([0, 1, 2], [1, 0, 1])
    flat = np.ones((5, 5))
    bumpy = flat.copy()
    bumpy[2, 2] = 1.001
    with pytest.raises(ValueError, match="not uniform"):
        DecaySeries.from_planes([0, 1, 2], [flat, bumpy, flat])


def test_constant_series_gives_zero():
    table = g_plane_wave(DecaySeries([0, 1, 2, 3], [2.0] * 4))
    assert np.all(table.values == 0)


def test_exponential_series_second_order():
    g0, alpha = 3.0, 1.5
    errs = []
    for dz in (2e-3, 1e-3, 5e-4):
        t = g_plane_wave(_exp_series(g0, alpha, dz))
        errs.append(np.abs(t.values / (g0 / alpha) - 1).max())
    assert errs[-1] < 1e-5
    assert 3.4 < errs[0] / errs[1] < 4.6 and 3.4 < errs[1] / errs[2] < 4.6


def test_alpha_scaling():
    s = _exp_series(2.0, 0.5, 1e-4)
    np.testing.assert_allclose(g_plane_wave(s, alpha=0.5).values, 0.5 * g_plane_wave(s).values)


def test_simulated_plane_wave_matches_quadratic_dissipation():
    model = ModelSpec()
    for I0 in (0.5, 3.0, 10.0):
        table = g_plane_wave(plane_wave_series(I0, model))
        np.testing.assert_allclose(table.values, 3 * table.intensity ** 2, rtol=5e-3)


def test_plane_wave_independent_of_eta():
    a = g_plane_wave(plane_wave_series(4.0, ModelSpec(eta=2.0)))
    b = g_plane_wave(plane_wave_series(4.0, ModelSpec(eta=2.7)))
    assert np.array_equal(a.values, b.values) and np.array_equal(a.intensity, b.intensity)


def test_decay_law_constant_dissipation():
    g0 = 40.0
    model = ModelSpec(f=NonlinearFn.zero(), g=NonlinearFn.power(g0, 0))
    series = plane_wave_series(8.0, model)
    predicted = decay_law(series, lambda I: np.full_like(I, g0))
    assert np.abs(predicted / series.intensities - 1).max() < 1e-6


def test_decay_law_roundtrip_through_table():
    model = ModelSpec(f=NonlinearFn.zero(), g=NonlinearFn.power(40.0, 0))
    series = plane_wave_series(8.0, model)
    table = g_plane_wave(series)
    predicted = decay_law(series, lambda I: np.interp(I, table.intensity, table.values))
    assert np.abs(predicted / series.intensities - 1).max() < 1e-6


def test_plane_wave_table_pools_levels():
    table = plane_wave_table([1.0, 2.0, 4.0], ModelSpec(), EvolutionPlan(1e-7, 4, 1))
    assert np.all(np.diff(table.intensity) > 0)
    np.testing.assert_allclose(table(table.intensity), 3 * table.intensity ** 2, rtol=1e-3)
    assert table.as_function()(2.0) == pytest.approx(12.0, rel=1e-3)


def test_reference_model_drops_f_only():
    m = reference_model_without_f(ModelSpec())
    assert m.f.kind == "zero" and m.g == ModelSpec().g and m.eta == 2.0


# -- averaged estimator ---------------------------------------------------------

def test_measurement_set_validation():
    with pytest.raises(ValueError):
        MeasurementSet([], [])
    with pytest.raises(ValueError):
        MeasurementSet([np.ones((5, 5))], [])
    with pytest.raises(ValueError):
        MeasurementSet([np.ones((5, 5))], [np.ones((7, 7))])


def test_uniform_measurements_reduce_to_plane_wave():
    series = _exp_series(3.0, 1.0, 1e-4, n=3)
    pw = g_plane_wave(series)
    planes = [np.full((7, 7), v) for v in series.intensities]
    dz = series.z_values[1]
    ms = MeasurementSet([planes[1]], [(planes[2] - planes[0]) / (2 * dz)])
    avg = g_averaged(ms, eta_over_alpha=2.0)
    assert avg.values[0] == pytest.approx(pw.values[1], rel=1e-14)
    assert avg.intensity[0] == pytest.approx(series.intensities[1], rel=1e-15)


def test_pointwise_matches_symbolic_oracle():
    g = GridSpec(33)
    X, Y = g.mesh()
    s = 1 + X ** 2 + Y ** 2  # discrete Laplacian of sqrt(I) is exactly 4
    I = s * s
    dIdz = np.sin(3 * X) * I
    got = g_pointwise(I, dIdz, 2.0)
    expected = 2.0 * 4 / s - 0.5 * np.sin(3 * X)
    assert np.abs(got - expected).max() < 1e-8


@given(st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_identical_measurements_average_to_single(m, seed):
    rng = np.random.default_rng(seed)
    I = rng.uniform(1, 2, (9, 9))
    d = rng.standard_normal((9, 9))
    single = g_averaged(MeasurementSet([I], [d]), 2.0, n_bins=8)
    many = g_averaged(MeasurementSet([I] * m, [d] * m), 2.0, n_bins=8)
    np.testing.assert_allclose(many.values, single.values, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(many.intensity, single.intensity, rtol=1e-14)
    np.testing.assert_array_equal(many.counts, m * single.counts)


def test_from_snapshots_midplanes():
    planes = [np.full((5, 5), v) for v in (4.0, 3.0, 2.5)]
    ms = MeasurementSet.from_snapshots(planes, 0.5)
    assert len(ms) == 2
    np.testing.assert_allclose(ms.intensities[0], 3.5)
    np.testing.assert_allclose(ms.derivatives[1], -1.0)


def test_estimators():
    from sklearn.base import clone
    series = [_exp_series(3.0, 1.0, 1e-4, I0=v) for v in (1.0, 2.0)]
    pw = PlaneWaveDissipation().fit(series)
    assert pw.predict([1.5]) == pytest.approx(3.0, rel=1e-6)
    assert clone(pw).get_params() == {"alpha": None}
    with pytest.raises(AttributeError):
        PlaneWaveDissipation().predict([1.0])
    I = np.full((5, 5), 2.0)
    av = AveragedDissipation(eta_over_alpha=2.0).fit(MeasurementSet([I], [-2.0 * I]))
    assert av.predict([2.0]) == pytest.approx(1.0)
    with pytest.raises(AttributeError):
        AveragedDissipation().predict([1.0])
