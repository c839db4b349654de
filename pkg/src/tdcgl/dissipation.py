"""Separate measurement of the dissipation g(I)/alpha.

In the continuity equation g(I) acts exactly like an extra phase term, so
it cannot be retrieved together with the phase from a single data set.
Two preparations isolate it instead:

* plane wave: a spatially uniform state has no diffusion or phase
  gradients, so ``g/alpha = -(1/2I) dI/dz`` and ``I(z) = I0 exp(-2 int g dz / alpha)``.
  No eta enters.
* averaging: for weakly fluctuating states, averaging many measurements
  gives ``<g/alpha> ~ (eta/alpha) lap(sqrt I)/sqrt I - (1/2I) dI/dz``.
  Keeping ``|grad phi|`` small is the caller's responsibility.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import check_field, check_positive_field, check_same_shape
from .forward import EvolutionPlan, ModelSpec, NonlinearFn, evolve_snapshots
from .grid import GridSpec
from .phase import sqrt_laplacian_ratio

UNIFORMITY_RTOL = 1e-6


@dataclass
class DecaySeries:
    """Uniform intensity recorded on increasing planes."""

    z_values: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        self.z_values = np.asarray(self.z_values, dtype=float)
        self.intensities = np.asarray(self.intensities, dtype=float)
        if self.z_values.ndim != 1 or self.z_values.shape != self.intensities.shape:
            raise ValueError("z_values and intensities must be 1-D of equal length")
        if self.z_values.size < 3:
            raise ValueError("a decay series needs at least 3 planes")
        if np.any(np.diff(self.z_values) <= 0):
            raise ValueError("z_values must be strictly increasing")
        if np.any(self.intensities <= 0):
            raise ValueError("intensities must be positive")

    @classmethod
    def from_planes(cls, z_values, planes):
        """Build from 2-D planes, rejecting any that are not uniform."""
        means = []
        for k, plane in enumerate(planes):
            plane = check_positive_field(plane, f"plane {k}")
            mean = plane.mean()
            if plane.std() > UNIFORMITY_RTOL * mean:
                raise ValueError(f"plane {k} is not uniform (relative spread "
                                 f"{plane.std() / mean:.2e} > {UNIFORMITY_RTOL:.0e})")
            means.append(mean)
        return cls(z_values, means)


@dataclass
class MeasurementSet:
    """Independent (I, dI/dz) plane pairs."""

    intensities: list
    derivatives: list

    def __post_init__(self):
        if len(self.intensities) == 0:
            raise ValueError("measurement set is empty")
        if len(self.intensities) != len(self.derivatives):
            raise ValueError("need one dI/dz plane per intensity plane")
        self.intensities = [check_positive_field(I, "I") for I in self.intensities]
        self.derivatives = [check_field(d, "dIdz") for d in self.derivatives]
        check_same_shape(*self.intensities, *self.derivatives)

    def __len__(self):
        return len(self.intensities)

    @classmethod
    def from_snapshots(cls, planes, dz_plane):
        """Midplane measurements from consecutive snapshots of one run."""
        planes = [np.asarray(p, dtype=float) for p in planes]
        if len(planes) < 2:
            raise ValueError("need at least two snapshots")
        mids = [0.5 * (a + b) for a, b in zip(planes[:-1], planes[1:])]
        ders = [(b - a) / dz_plane for a, b in zip(planes[:-1], planes[1:])]
        return cls(mids, ders)


@dataclass
class GTable:
    """Tabulated g(I)/alpha (or g(I) when alpha was supplied)."""

    intensity: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def as_function(self):
        return NonlinearFn.tabulated(self.intensity, self.values)

    def __call__(self, intensity):
        return np.interp(intensity, self.intensity, self.values)


def g_plane_wave(series, alpha=None):
    """``g/alpha = -(1/2I) dI/dz`` along a uniform decay series.

    dI/dz uses second-order differences along z. Returns g(I) instead
    when ``alpha`` is given.
    """
    I, z = series.intensities, series.z_values
    dIdz = np.gradient(I, z, edge_order=2)
    g = -0.5 * dIdz / I
    if alpha is not None:
        g = alpha * g
    order = np.argsort(I, kind="stable")
    return GTable(I[order], g[order], np.ones(I.size, dtype=int))


def decay_law(series, g_over_alpha):
    """Intensities predicted by ``I0 exp(-2 int g/alpha dz)`` along the series.

    ``g_over_alpha`` is a callable of intensity; the integral uses the
    trapezoid rule on the recorded planes.
    """
    rate = np.asarray(g_over_alpha(series.intensities), dtype=float)
    integral = cumulative_trapezoid(rate, series.z_values, initial=0.0)
    return series.intensities[0] * np.exp(-2.0 * integral)


def _binned_mean(Iv, gv, n_bins):
    lo, hi = Iv.min(), Iv.max()
    if hi == lo:
        return GTable(np.array([lo]), np.array([gv.mean()]), np.array([gv.size]))
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.digitize(Iv, edges) - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sum_g = np.bincount(idx, weights=gv, minlength=n_bins)
    sum_I = np.bincount(idx, weights=Iv, minlength=n_bins)
    keep = counts > 0
    return GTable(sum_I[keep] / counts[keep], sum_g[keep] / counts[keep], counts[keep])


def g_pointwise(I, dIdz, eta_over_alpha, h=None):
    """Single-measurement ``(eta/alpha) lap(sqrt I)/sqrt I - (1/2I) dI/dz`` at every node."""
    I = check_positive_field(I, "I")
    dIdz = check_field(dIdz, "dIdz")
    check_same_shape(I, dIdz, names=["I", "dIdz"])
    h = GridSpec(I.shape[0]).h if h is None else h
    return eta_over_alpha * sqrt_laplacian_ratio(I, h) - 0.5 * dIdz / I


def g_averaged(ms, eta_over_alpha, n_bins=64, interior=True):
    """Averaged estimator ``(eta/alpha) lap(sqrt I)/sqrt I - (1/2I) dI/dz``.

    Pointwise values from all measurements are pooled and averaged in
    ``n_bins`` equal-width intensity bins. With ``interior`` the outermost
    grid row and column are left out.
    """
    if len(ms) == 0:
        raise ValueError("measurement set is empty")
    h = GridSpec(ms.intensities[0].shape[0]).h
    cut = slice(1, -1) if interior else slice(None)
    Is, gs = [], []
    for I, dIdz in zip(ms.intensities, ms.derivatives):
        g = g_pointwise(I, dIdz, eta_over_alpha, h)
        Is.append(I[cut, cut].ravel())
        gs.append(g[cut, cut].ravel())
    return _binned_mean(np.concatenate(Is), np.concatenate(gs), n_bins)


def plane_wave_series(I0, model, plan=None, n=5):
    """Evolve a uniform state of intensity ``I0`` and record its decay.

    The first plane is the initial state; one plane per snapshot follows.
    """
    plan = plan or EvolutionPlan(dz=1e-7, n_steps=300, snapshot_every=10)
    psi0 = np.full((n, n), np.sqrt(I0), dtype=complex)
    zs, planes, _, _ = evolve_snapshots(psi0, model, plan)
    return DecaySeries.from_planes([0.0] + zs, [np.abs(psi0) ** 2] + planes)


def plane_wave_table(levels, model, plan=None, alpha=None):
    """Pooled plane-wave table from separate preparations at each level."""
    tables = [g_plane_wave(plane_wave_series(level, model, plan), alpha) for level in levels]
    I = np.concatenate([t.intensity for t in tables])
    g = np.concatenate([t.values for t in tables])
    order = np.argsort(I, kind="stable")
    I, g = I[order], g[order]
    keep = np.concatenate([[True], np.diff(I) > 0])
    return GTable(I[keep], g[keep], np.ones(int(keep.sum()), dtype=int))


class PlaneWaveDissipation(BaseEstimator, RegressorMixin):
    """Fit g/alpha from a :class:`DecaySeries`; predict it at any intensity.

    Several series can be passed as a list (separate preparations).
    """

    def __init__(self, alpha=None):
        self.alpha = alpha

    def fit(self, X, y=None):
        series = X if isinstance(X, (list, tuple)) else [X]
        tables = [g_plane_wave(s, self.alpha) for s in series]
        I = np.concatenate([t.intensity for t in tables])
        g = np.concatenate([t.values for t in tables])
        order = np.argsort(I, kind="stable")
        self.table_ = GTable(I[order], g[order], np.ones(I.size, dtype=int))
        return self

    def predict(self, X):
        if not hasattr(self, "table_"):
            raise AttributeError("PlaneWaveDissipation is not fitted")
        return self.table_(np.asarray(X, dtype=float))


class AveragedDissipation(BaseEstimator, RegressorMixin):
    """Fit binned ``<g/alpha>`` from a :class:`MeasurementSet`."""

    def __init__(self, eta_over_alpha=2.0, n_bins=64):
        self.eta_over_alpha = eta_over_alpha
        self.n_bins = n_bins

    def fit(self, X, y=None):
        self.table_ = g_averaged(X, self.eta_over_alpha, self.n_bins)
        return self

    def predict(self, X):
        if not hasattr(self, "table_"):
            raise AttributeError("AveragedDissipation is not fitted")
        return self.table_(np.asarray(X, dtype=float))


def reference_model_without_f(model):
    """Copy of ``model`` with f removed (f only rotates a uniform state)."""
    return ModelSpec(alpha=model.alpha, eta=model.eta, f=NonlinearFn.zero(), g=model.g)
