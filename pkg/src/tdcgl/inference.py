"""Infer eta, alpha, the phase and f(I) from intensities on three planes.

Outline
-------
1. Seed eta/alpha from the continuity equation with the phase set to zero,
   evaluated on pairs of points with equal intensity so g(I) cancels.
2. Diffusion relaxation: retrieve the phase at z1 and z3, estimate alpha
   from the phase equation on iso-intensity pairs at z2 (f(I) cancels),
   measure the boundary flux N of the phase at z1 and adjust eta/alpha
   until N vanishes. The adjustment X follows a secant-like rule that
   halves back across sign changes of N.
3. Repeat from the seed reflected through the first asymptote and average.
4. With eta and alpha fixed, read f(I) off the phase equation pointwise.

Sign convention used for the phase equation, with ``phi = 2 Phi / alpha``::

    K = dphi/dz - (eta/alpha) div(I grad phi)/I + |grad phi|^2 / 2
    D = lap(sqrt I) / sqrt I
    f(I) = (alpha^2 / 2) K - D
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import MIN_POINTS, check_field, check_positive_field, check_same_shape
from .elliptic import EllipticSolver
from .errors import ConvergenceError, PhaseRetrievalDivergence
from .forward import IntensityTriple, NonlinearFn
from .grid import BoundaryContour, GridSpec, boundary_flux, conservative_divergence, gradient
from .phase import PhaseRetrievalConfig, retrieve_phase, sqrt_laplacian_ratio

DENOMINATOR_FLOOR = 1e-10


@dataclass(frozen=True)
class RelaxationConfig:
    """Settings of the outer relaxation loop and its histogram estimates."""

    epsilon: float = 1e-7
    initial_bump: float = 0.01
    max_outer_iters: int = 200
    n_iso_levels: int = 100
    histogram_bin_width: float = 1e-3
    seed_bin_width: float = 1e-3
    inner_max_iters: int = 400
    grad_norm_tol: float = 1e-6
    final_alpha_passes: int = 2
    f_bins: int = 64

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.initial_bump < 1:
            raise ValueError("initial_bump must lie in (0, 1)")
        if self.max_outer_iters < 2:
            raise ValueError("max_outer_iters must be >= 2")
        if self.n_iso_levels < 1:
            raise ValueError("n_iso_levels must be >= 1")


@dataclass
class IsoPairs:
    """Pairs of equal-intensity points, in fractional grid-index coordinates.

    ``p1[i]`` and ``p2[i]`` are ``(ix, iy)`` positions where bilinear
    interpolation along a grid edge gives exactly ``level[i]``.
    """

    p1: np.ndarray
    p2: np.ndarray
    level: np.ndarray

    def __len__(self):
        return len(self.level)

    def sample(self, values):
        """Values of a node field at both points of every pair."""
        a = map_coordinates(values, self.p1.T, order=1, mode="nearest")
        b = map_coordinates(values, self.p2.T, order=1, mode="nearest")
        return a, b


def _level_crossings(I, level):
    pts = []
    for axis in (0, 1):
        a = I[:-1, :] if axis == 0 else I[:, :-1]
        b = I[1:, :] if axis == 0 else I[:, 1:]
        ix, iy = np.nonzero((a - level) * (b - level) < 0)
        t = (level - a[ix, iy]) / (b[ix, iy] - a[ix, iy])
        if axis == 0:
            pts.append(np.column_stack([ix + t, iy]))
        else:
            pts.append(np.column_stack([ix, iy + t]))
    return np.vstack(pts)


def find_iso_pairs(I, n_levels=100):
    """Equally spaced levels strictly inside (min I, max I), paired per level.

    Each level's crossing points are sorted by polar angle about their
    centroid and point ``i`` is paired with ``i + m/2``: on a closed ring
    this joins roughly diametrically opposite points, which keeps the pair
    differences well conditioned.
    """
    I = check_field(I, "I")
    lo, hi = float(I.min()), float(I.max())
    if hi <= lo:
        raise ValueError("intensity is constant; no iso-intensity pairs exist")
    levels = np.linspace(lo, hi, n_levels + 2)[1:-1]
    p1, p2, lv = [], [], []
    for level in levels:
        pts = _level_crossings(I, level)
        m = len(pts) // 2
        if m == 0:
            continue
        c = pts.mean(axis=0)
        order = np.argsort(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]), kind="stable")
        pts = pts[order]
        p1.append(pts[:m])
        p2.append(pts[m:2 * m])
        lv.append(np.full(m, level))
    if not p1:
        return IsoPairs(np.empty((0, 2)), np.empty((0, 2)), np.empty(0))
    return IsoPairs(np.vstack(p1), np.vstack(p2), np.concatenate(lv))


@dataclass
class HistogramEstimate:
    """Mode of a histogram with its full width at half maximum."""

    peak: float
    fwhm: float
    bin_width: float
    counts: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    n_samples: int = 0
    n_skipped: int = 0


def histogram_estimate(values, bin_width, n_skipped=0):
    """Histogram peak and FWHM of ``values``.

    Values outside ``[median/4, 4*median]`` (by magnitude) are dropped
    first; pair ratios have heavy tails that would otherwise stretch the
    bin range without changing the mode. Bin centres sit on multiples of
    ``bin_width`` so the binning does not move with the data, and the mode
    is refined inside its bin by a parabola through the three bins around
    the maximum. Without the refinement a near-tie between two bins makes
    the estimate jump by a whole bin between nearly identical inputs.
    """
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise ValueError("no valid samples for the histogram")
    med = np.median(v)
    lo, hi = sorted((med / 4.0, med * 4.0))
    kept = v[(v >= lo) & (v <= hi)] if med != 0 else v
    if kept.size == 0:
        kept = v
    first = np.floor(kept.min() / bin_width + 0.5)
    n_bins = int(np.floor(kept.max() / bin_width + 0.5) - first) + 1
    edges = (first - 0.5 + np.arange(n_bins + 1)) * bin_width
    counts, _ = np.histogram(kept, edges)
    i = int(np.argmax(counts))
    peak = (first + i) * bin_width
    # bins outside the support count as empty
    padded = np.concatenate([[0], counts, [0]])
    left_c, mid_c, right_c = padded[i], padded[i + 1], padded[i + 2]
    curvature = left_c - 2.0 * mid_c + right_c
    if curvature < 0:
        peak += 0.5 * bin_width * (left_c - right_c) / curvature
    half = counts[i] / 2.0
    left = i
    while left > 0 and counts[left - 1] >= half:
        left -= 1
    right = i
    while right < n_bins - 1 and counts[right + 1] >= half:
        right += 1
    return HistogramEstimate(
        peak=float(peak),
        fwhm=float((right - left + 1) * bin_width),
        bin_width=float(bin_width),
        counts=counts,
        edges=edges,
        n_samples=int(kept.size),
        n_skipped=int(n_skipped + v.size - kept.size),
    )


def _ratio(num, den, scale):
    ok = np.abs(den) > DENOMINATOR_FLOOR * scale
    return num[ok] / den[ok], int(np.count_nonzero(~ok))


def seed_eta_over_alpha(triple, n_levels=100, bin_width=1e-3, pairs=None):
    """Initial eta/alpha from the continuity equation with zero phase.

    On a pair with ``I_1 = I_2`` at plane z1::

        eta/alpha = (dI_1/dz - dI_2/dz) / (2 sqrt(I_1) lap sqrt(I_1) - 2 sqrt(I_2) lap sqrt(I_2))
    """
    I, dIdz = triple.I1, triple.dIdz1
    h = triple.grid.h
    q = I * sqrt_laplacian_ratio(I, h)
    pairs = find_iso_pairs(I, n_levels) if pairs is None else pairs
    if len(pairs) == 0:
        raise ValueError("no iso-intensity pairs found")
    z1, z2 = pairs.sample(dIdz)
    q1, q2 = pairs.sample(q)
    ratios, skipped = _ratio(z1 - z2, 2.0 * (q1 - q2), np.abs(q).max())
    if ratios.size == 0:
        raise ValueError("every iso-intensity pair was degenerate")
    return histogram_estimate(ratios, bin_width, skipped)


def phase_equation_terms(phi_z1, phi_z3, I_z2, eta_over_alpha, dz_plane):
    """``(K, D)`` at plane z2 from the scaled phases on the two midplanes."""
    I = check_positive_field(I_z2, "I_z2")
    check_same_shape(phi_z1, phi_z3, I, names=["phi_z1", "phi_z3", "I_z2"])
    h = GridSpec(I.shape[0]).h
    phi = 0.5 * (phi_z1 + phi_z3)
    phi_z = (phi_z3 - phi_z1) / dz_plane
    gx, gy = gradient(phi, h)
    K = phi_z - eta_over_alpha * conservative_divergence(I, phi, h) / I + 0.5 * (gx * gx + gy * gy)
    return K, sqrt_laplacian_ratio(I, h)


def alpha_from_pairs(pairs, K, D):
    """``alpha = sqrt(2 (D_1 - D_2) / (K_1 - K_2))`` per pair.

    Returns ``(alphas, n_skipped)``; pairs with a vanishing K difference or
    a non-positive ratio are skipped.
    """
    k1, k2 = pairs.sample(K)
    d1, d2 = pairs.sample(D)
    ratio, skipped = _ratio(2.0 * (d1 - d2), k1 - k2, np.abs(K).max())
    positive = ratio > 0
    return np.sqrt(ratio[positive]), skipped + int(np.count_nonzero(~positive))


def alpha_from_pair(p1, p2, phi_tilde, dphi_tilde_dz, I, eta_over_alpha):
    """Single-pair alpha; ``None`` when the pair is degenerate.

    ``phi_tilde`` and ``dphi_tilde_dz`` are the scaled phase and its
    z-derivative at the plane of ``I``; ``p1``/``p2`` are (ix, iy) positions.
    """
    I = check_positive_field(I, "I")
    h = GridSpec(I.shape[0]).h
    gx, gy = gradient(phi_tilde, h)
    K = dphi_tilde_dz - eta_over_alpha * conservative_divergence(I, phi_tilde, h) / I \
        + 0.5 * (gx * gx + gy * gy)
    pairs = IsoPairs(np.atleast_2d(np.asarray(p1, float)), np.atleast_2d(np.asarray(p2, float)),
                     np.zeros(1))
    alphas, _ = alpha_from_pairs(pairs, K, sqrt_laplacian_ratio(I, h))
    return float(alphas[0]) if alphas.size else None


def diffusion_update(N_k, N_k1, X):
    """Next fractional change X' of eta/alpha from successive fluxes.

    * sign change: ``X' = -N_k1 / (N_k1 - N_k) * X`` (interpolate back)
    * growing ``|N|``: ``X' = -(N_k1 / N_k) * X`` (reverse)
    * shrinking ``|N|``: ``X' = (N_k1 / N_k) * X`` (continue)

    ``N_k == 0`` means the previous iterate already balanced the flux;
    the update is then 0.
    """
    if N_k1 * N_k < 0:
        return -N_k1 / (N_k1 - N_k) * X
    if N_k == 0:
        return 0.0
    if abs(N_k1) > abs(N_k):
        return -(N_k1 / N_k) * X
    return (N_k1 / N_k) * X


@dataclass
class RelaxationTrace:
    """Per-iteration records of one relaxation run.

    ``X[k]`` is the fractional update applied after iteration ``k``, so
    ``eta_over_alpha[k+1] = (1 + X[k]) * eta_over_alpha[k]``.
    """

    k: list = field(default_factory=list)
    eta_over_alpha: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    alpha_fwhm: list = field(default_factory=list)
    N: list = field(default_factory=list)
    X: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)
    converged: bool = False

    def append(self, **row):
        for key, value in row.items():
            getattr(self, key).append(value)

    @property
    def asymptote(self):
        return self.eta_over_alpha[-1]

    def rows(self):
        return list(zip(self.k, self.eta_over_alpha, self.eta, self.alpha, self.alpha_fwhm,
                        self.N, self.X, self.inner_iters))


class _Planes:
    """Per-triple data reused across outer iterations."""

    def __init__(self, triple, cfg):
        self.triple = triple
        self.grid = triple.grid
        if self.grid.n < MIN_POINTS:
            raise ValueError("grid too small")
        self.I1, self.I3, self.I2 = triple.I1, triple.I3, triple.I2
        self.dIdz1, self.dIdz3 = triple.dIdz1, triple.dIdz3
        self.solver1 = EllipticSolver(self.I1)
        self.solver3 = EllipticSolver(self.I3)
        self.pairs2 = find_iso_pairs(self.I2, cfg.n_iso_levels)
        self.contour = BoundaryContour.inscribed(self.grid)

    def retrieve(self, eoa, ea, g_over_alpha, cfg, phi1=None, phi3=None):
        pcfg = PhaseRetrievalConfig(eoa, ea, g_over_alpha, cfg.inner_max_iters, cfg.grad_norm_tol)
        r1 = retrieve_phase(self.I1, self.dIdz1, pcfg, phi1, self.solver1)
        r3 = retrieve_phase(self.I3, self.dIdz3, pcfg, phi3, self.solver3)
        return r1, r3

    def alpha(self, phi1, phi3, eoa, cfg):
        K, D = phase_equation_terms(phi1, phi3, self.I2, eoa, self.triple.dz_plane)
        alphas, skipped = alpha_from_pairs(self.pairs2, K, D)
        if alphas.size == 0:
            raise ValueError("no usable iso-intensity pairs for alpha")
        return histogram_estimate(alphas, cfg.histogram_bin_width, skipped)

    def flux(self, phi1, alpha):
        return boundary_flux(0.5 * alpha * phi1, self.contour)


def _check_retrieval(results, trace):
    bad = [r.status for r in results if not r.converged]
    if bad:
        raise PhaseRetrievalDivergence(f"phase retrieval failed inside relaxation ({bad})",
                                       history=trace)


def _relax(planes, g_over_alpha, eoa0, cfg):
    trace = RelaxationTrace()
    eoa, ea = float(eoa0), 0.0
    phi1 = phi3 = None
    X = N_prev = None
    for k in range(1, cfg.max_outer_iters + 1):
        r1, r3 = planes.retrieve(eoa, ea, g_over_alpha, cfg, phi1, phi3)
        _check_retrieval((r1, r3), trace)
        phi1, phi3 = r1.phi_tilde, r3.phi_tilde
        hist = planes.alpha(phi1, phi3, eoa, cfg)
        alpha = hist.peak
        N = planes.flux(phi1, alpha)
        X = cfg.initial_bump if k == 1 else diffusion_update(N_prev, N, X)
        trace.append(k=k, eta_over_alpha=eoa, eta=eoa * alpha, alpha=alpha, alpha_fwhm=hist.fwhm,
                     N=N, X=X, inner_iters=r1.iterations_used + r3.iterations_used)
        if k > 1 and abs(X) < cfg.epsilon:
            trace.converged = True
            break
        N_prev = N
        eoa = eoa * (1.0 + X)
        ea = eoa * alpha * alpha
    return trace, phi1, phi3


def relaxation_run(triple, g_over_alpha, eta_over_alpha_0, cfg=None):
    """One diffusion-relaxation run from ``eta_over_alpha_0``; returns the trace.

    The eta*alpha product in the phase iteration is zero on the first
    iteration and ``(eta/alpha) alpha^2`` with the latest alpha afterwards.
    Each iteration warm-starts the phase iteration from the previous phase.
    """
    cfg = cfg or RelaxationConfig()
    trace, _, _ = _relax(_Planes(triple, cfg), g_over_alpha, eta_over_alpha_0, cfg)
    return trace


@dataclass
class FTable:
    """Tabulated f(I): per-bin medians of intensity and of the pointwise f."""

    intensity: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def as_function(self):
        return NonlinearFn.tabulated(self.intensity, self.values)

    def fit_sine(self):
        """Least-squares ``offset + amplitude sin(pi I)`` and the shape correlation."""
        s = np.sin(np.pi * self.intensity)
        A = np.column_stack([np.ones_like(s), s])
        (offset, amplitude), *_ = np.linalg.lstsq(A, self.values, rcond=None)
        corr = float(np.corrcoef(self.values - offset, s)[0, 1])
        return float(offset), float(amplitude), corr


def extract_f(phi_tilde_z1, phi_tilde_z3, I_z2, eta_hat, alpha_hat, dz_plane, n_bins=64):
    """Pointwise ``f = (alpha^2/2) K - D`` at z2, binned by intensity.

    Only interior points are used. Empty bins are dropped. An additive
    constant in the scaled phases does not change the result; a constant
    offset of f itself (from the phase gauge drifting along z) does.
    """
    K, D = phase_equation_terms(phi_tilde_z1, phi_tilde_z3, I_z2, eta_hat / alpha_hat, dz_plane)
    F = 0.5 * alpha_hat ** 2 * K - D
    Iv = np.asarray(I_z2)[1:-1, 1:-1].ravel()
    Fv = F[1:-1, 1:-1].ravel()
    edges = np.linspace(Iv.min(), Iv.max(), n_bins + 1)
    idx = np.clip(np.digitize(Iv, edges) - 1, 0, n_bins - 1)
    order = np.argsort(idx, kind="stable")
    splits = np.cumsum(np.bincount(idx, minlength=n_bins))[:-1]
    I_groups = np.split(Iv[order], splits)
    F_groups = np.split(Fv[order], splits)
    keep = [i for i in range(n_bins) if I_groups[i].size]
    return FTable(
        intensity=np.array([np.median(I_groups[i]) for i in keep]),
        values=np.array([np.median(F_groups[i]) for i in keep]),
        counts=np.array([I_groups[i].size for i in keep]),
    )


@dataclass
class InferenceResult:
    """Estimates from one inference.

    ``eta_over_alpha_hat`` is the relaxation variable averaged over the two
    runs; ``eta_hat = eta_over_alpha_hat * alpha_hat``. ``phi_z1`` and
    ``phi_z3`` are unscaled phases (``alpha_hat * phi_tilde / 2``) with zero
    mean.
    """

    eta_hat: float
    eta_over_alpha_hat: float
    alpha_hat: float
    alpha_fwhm: float
    alpha_histogram: HistogramEstimate
    seed: HistogramEstimate
    phi_z1: np.ndarray
    phi_z3: np.ndarray
    f_table: FTable
    trace_up: RelaxationTrace
    trace_down: RelaxationTrace
    N_final: float


def _two_runs(planes, g_over_alpha, seed, cfg):
    """Run from ``seed``, then from the seed reflected through the first asymptote.

    The second run starts again from a zero phase.
    """
    traces = []
    try:
        first, _, _ = _relax(planes, g_over_alpha, seed, cfg)
        traces.append(first)
        second, phi1, phi3 = _relax(planes, g_over_alpha, 2.0 * first.asymptote - seed, cfg)
        traces.append(second)
    except ConvergenceError as exc:
        raise ConvergenceError(f"relaxation aborted: {exc}",
                               history={"traces": traces, "failed": exc.history}) from exc
    return first, second, phi1, phi3


def infer(triple, g_over_alpha=None, cfg=None):
    """Full two-run inference from an :class:`IntensityTriple`."""
    cfg = cfg or RelaxationConfig()
    g_over_alpha = g_over_alpha or NonlinearFn.zero()
    planes = _Planes(triple, cfg)
    seed = seed_eta_over_alpha(triple, cfg.n_iso_levels, cfg.seed_bin_width)
    first, second, phi1, phi3 = _two_runs(planes, g_over_alpha, seed.peak, cfg)
    traces = [first, second]
    eoa = 0.5 * (first.asymptote + second.asymptote)
    alpha = 0.5 * (first.alpha[-1] + second.alpha[-1])
    # eta*alpha in the phase iteration depends on alpha itself: fixed-point passes
    for _ in range(cfg.final_alpha_passes):
        r1, r3 = planes.retrieve(eoa, eoa * alpha * alpha, g_over_alpha, cfg, phi1, phi3)
        _check_retrieval((r1, r3), traces)
        phi1, phi3 = r1.phi_tilde, r3.phi_tilde
        hist = planes.alpha(phi1, phi3, eoa, cfg)
        alpha = hist.peak
    eta = eoa * alpha
    return InferenceResult(
        eta_hat=eta,
        eta_over_alpha_hat=eoa,
        alpha_hat=alpha,
        alpha_fwhm=hist.fwhm,
        alpha_histogram=hist,
        seed=seed,
        phi_z1=0.5 * alpha * phi1,
        phi_z3=0.5 * alpha * phi3,
        f_table=extract_f(phi1, phi3, planes.I2, eta, alpha, triple.dz_plane, cfg.f_bins),
        trace_up=first,
        trace_down=second,
        N_final=planes.flux(phi1, alpha),
    )


class TDCGLInference(BaseEstimator, TransformerMixin):
    """Estimator wrapper around :func:`infer`.

    ``fit`` takes an :class:`IntensityTriple` and sets ``eta_``, ``alpha_``,
    ``alpha_fwhm_``, ``eta_over_alpha_``, ``f_table_`` and ``result_``.
    ``transform`` returns the retrieved phases at z1 and z3 stacked as
    ``(2, n, n)``.

    Parameters
    ----------
    g_over_alpha : NonlinearFn, optional
        Separately measured dissipation divided by alpha; zero if omitted.
    epsilon, initial_bump, max_outer_iters, n_iso_levels, histogram_bin_width :
        See :class:`RelaxationConfig`.
    """

    def __init__(self, g_over_alpha=None, epsilon=1e-7, initial_bump=0.01, max_outer_iters=200,
                 n_iso_levels=100, histogram_bin_width=1e-3):
        self.g_over_alpha = g_over_alpha
        self.epsilon = epsilon
        self.initial_bump = initial_bump
        self.max_outer_iters = max_outer_iters
        self.n_iso_levels = n_iso_levels
        self.histogram_bin_width = histogram_bin_width

    def fit(self, X, y=None):
        if not isinstance(X, IntensityTriple):
            raise TypeError("TDCGLInference.fit expects an IntensityTriple")
        cfg = RelaxationConfig(epsilon=self.epsilon, initial_bump=self.initial_bump,
                               max_outer_iters=self.max_outer_iters,
                               n_iso_levels=self.n_iso_levels,
                               histogram_bin_width=self.histogram_bin_width)
        res = infer(X, self.g_over_alpha, cfg)
        self.result_ = res
        self.eta_ = res.eta_hat
        self.alpha_ = res.alpha_hat
        self.alpha_fwhm_ = res.alpha_fwhm
        self.eta_over_alpha_ = res.eta_over_alpha_hat
        self.f_table_ = res.f_table
        return self

    def transform(self, X):
        if not hasattr(self, "result_"):
            raise AttributeError("TDCGLInference is not fitted")
        return np.stack([self.result_.phi_z1, self.result_.phi_z3])
