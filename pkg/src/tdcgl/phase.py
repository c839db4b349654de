"""Iterative phase retrieval from intensity on two neighbouring planes.

The continuity part of the Madelung-split TDCGL equation reads, for the
scaled phase ``phi_t = 2 Phi / alpha``::

    lap(phi_t) + grad(I).grad(phi_t)/I = -G - (eta alpha / 2) |grad phi_t|^2
    G = (dI/dz)/I + 2 g(I)/alpha - 2 (eta/alpha) lap(sqrt I)/sqrt I

The quadratic term is lagged one iteration, so each step is a linear
elliptic solve. Iteration stops when the L2 norm of ``grad phi_t`` changes
by less than ``grad_norm_tol`` between iterations.

The phase is determined only up to an additive constant; results use the
zero-mean gauge. Dissipation g(I) enters exactly like a phase shift and
cannot be separated from it here, so it has to be supplied (see
:mod:`tdcgl.dissipation`).
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_field, check_positive_field, check_same_shape
from .elliptic import EllipticSolver
from .errors import PhaseRetrievalDivergence
from .forward import IntensityTriple, NonlinearFn
from .grid import GridSpec, gradient, laplacian

DIVERGENCE_WINDOW = 20
RUNAWAY_FACTOR = 1e6


@dataclass(frozen=True)
class PhaseRetrievalConfig:
    eta_over_alpha: float
    eta_alpha_product: float = 0.0
    g_over_alpha: NonlinearFn = field(default_factory=NonlinearFn.zero)
    max_iters: int = 400
    grad_norm_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.grad_norm_tol > 0:
            raise ValueError("grad_norm_tol must be positive")


@dataclass
class RetrievedPhase:
    """Scaled phase ``2 Phi / alpha`` with zero mean, plus iteration diagnostics.

    ``status`` is ``"converged"``, ``"max_iters"`` or ``"diverged"``.
    ``shift`` is the last compatibility shift removed from the right-hand
    side by the Neumann solve.
    """

    phi_tilde: np.ndarray
    iterations_used: int
    grad_norm_history: list
    status: str = "converged"
    shift: float = 0.0

    @property
    def converged(self):
        return self.status == "converged"


def sqrt_laplacian_ratio(I, h):
    """``lap(sqrt I) / sqrt I``, the quantum-pressure-like term."""
    s = np.sqrt(I)
    return laplacian(s, h) / s


def grad_norm(phi, h):
    """L2 norm of the gradient over the grid (sum times h^2)."""
    gx, gy = gradient(phi, h)
    return float(np.sqrt(np.sum(gx * gx + gy * gy) * h * h))


def continuity_g(I, dIdz, eta_over_alpha, g_over_alpha, h):
    return dIdz / I + 2.0 * g_over_alpha(I) - 2.0 * eta_over_alpha * sqrt_laplacian_ratio(I, h)


def continuity_rhs(I, dIdz, cfg, phi_prev=None, h=None):
    """Right-hand side ``-G - (eta alpha / 2)|grad phi_prev|^2`` of one iteration."""
    I = check_positive_field(I, "I")
    dIdz = check_field(dIdz, "dIdz")
    check_same_shape(I, dIdz, names=["I", "dIdz"])
    h = GridSpec(I.shape[0]).h if h is None else h
    rhs = -continuity_g(I, dIdz, cfg.eta_over_alpha, cfg.g_over_alpha, h)
    if phi_prev is not None and cfg.eta_alpha_product != 0.0:
        gx, gy = gradient(phi_prev, h)
        rhs -= 0.5 * cfg.eta_alpha_product * (gx * gx + gy * gy)
    return rhs


def retrieve_phase(I_mid, dIdz, cfg, phi_init=None, solver=None):
    """Iterate elliptic solves until the gradient norm settles.

    Parameters
    ----------
    I_mid, dIdz : ndarray
        Intensity and its z-derivative on the retrieval plane.
    cfg : PhaseRetrievalConfig
    phi_init : ndarray, optional
        Starting scaled phase (warm start); zero by default.
    solver : EllipticSolver, optional
        Reused solver for ``I_mid``; building one is the expensive part.

    Returns
    -------
    RetrievedPhase
        Never raises on non-convergence; inspect ``status``.
    """
    I_mid = check_positive_field(I_mid, "I_mid")
    dIdz = check_field(dIdz, "dIdz")
    check_same_shape(I_mid, dIdz, names=["I_mid", "dIdz"])
    h = GridSpec(I_mid.shape[0]).h
    solver = solver or EllipticSolver(I_mid, h)
    base = -continuity_g(I_mid, dIdz, cfg.eta_over_alpha, cfg.g_over_alpha, h)

    phi = np.zeros_like(I_mid) if phi_init is None else check_field(phi_init, "phi_init").copy()
    prev_norm = grad_norm(phi, h)
    history = []
    prev_change = None
    growing = 0
    status = "max_iters"
    shift = 0.0
    for _ in range(cfg.max_iters):
        rhs = base
        if cfg.eta_alpha_product != 0.0:
            gx, gy = gradient(phi, h)
            rhs = base - 0.5 * cfg.eta_alpha_product * (gx * gx + gy * gy)
        if not np.all(np.isfinite(rhs)):
            status = "diverged"
            break
        sol = solver.solve(rhs)
        phi, shift = sol.u, sol.shift
        norm = grad_norm(phi, h)
        history.append(norm)
        change = abs(norm - prev_norm)
        if change < cfg.grad_norm_tol:
            status = "converged"
            break
        if not np.isfinite(norm) or (history[0] > 0 and norm > RUNAWAY_FACTOR * history[0]):
            status = "diverged"
            break
        growing = growing + 1 if prev_change is not None and change > prev_change else 0
        if growing >= DIVERGENCE_WINDOW:
            status = "diverged"
            break
        prev_change, prev_norm = change, norm
    return RetrievedPhase(phi, len(history), history, status, shift)


def _region_mask(shape, region):
    if isinstance(region, str) or region is None:
        if region in (None, "full"):
            return np.ones(shape, dtype=bool)
        if region != "disk":
            raise ValueError(f"unknown region {region!r}")
        X, Y = GridSpec(shape[0]).mesh()
        return np.hypot(X - 0.5, Y - 0.5) <= 0.5
    mask = np.asarray(region, dtype=bool)
    if mask.shape != tuple(shape):
        raise ValueError("mask shape does not match the fields")
    return mask


def rms_phase_gradient_error(phi_exact, phi_retrieved, region="full"):
    """sigma = sqrt( sum (|grad Phi| - |grad Phi_r|)^2 / sum |grad Phi|^2 ).

    ``region`` is ``"full"``, ``"disk"`` (the inscribed circle) or a boolean mask.
    """
    phi_exact = check_field(phi_exact, "phi_exact")
    phi_retrieved = check_field(phi_retrieved, "phi_retrieved")
    check_same_shape(phi_exact, phi_retrieved, names=["phi_exact", "phi_retrieved"])
    h = GridSpec(phi_exact.shape[0]).h
    mask = _region_mask(phi_exact.shape, region)
    a = np.hypot(*gradient(phi_exact, h))[mask]
    b = np.hypot(*gradient(phi_retrieved, h))[mask]
    denom = np.sum(a * a)
    if denom == 0.0:
        raise ZeroDivisionError("exact phase has zero gradient on the region")
    return float(np.sqrt(np.sum((a - b) ** 2) / denom))


def rms_phase_error(phi_exact, phi_retrieved, region="full"):
    """Fractional RMS phase error after removing each field's mean on the region."""
    phi_exact = check_field(phi_exact, "phi_exact")
    phi_retrieved = check_field(phi_retrieved, "phi_retrieved")
    check_same_shape(phi_exact, phi_retrieved, names=["phi_exact", "phi_retrieved"])
    mask = _region_mask(phi_exact.shape, region)
    a = phi_exact[mask] - phi_exact[mask].mean()
    b = phi_retrieved[mask] - phi_retrieved[mask].mean()
    denom = np.sum(a * a)
    if denom == 0.0:
        raise ZeroDivisionError("exact phase is constant on the region")
    return float(np.sqrt(np.sum((a - b) ** 2) / denom))


class PhaseRetriever(BaseEstimator, TransformerMixin):
    """Retrieve the phase on the two midplanes of an :class:`IntensityTriple`.

    ``alpha`` and ``eta`` are taken as known. ``fit`` stores the unscaled
    phases ``Phi = alpha * phi_tilde / 2`` at z1 and z3 in ``phase_``
    (shape ``(2, n, n)``); ``transform`` returns them.

    Parameters
    ----------
    alpha, eta : float
        Model parameters.
    g : NonlinearFn, optional
        Dissipation g(I) (not divided by alpha). Zero if omitted.
    max_iters, grad_norm_tol : see :class:`PhaseRetrievalConfig`.
    strict : bool
        Raise :class:`PhaseRetrievalDivergence` when a plane does not converge.
    """

    def __init__(self, alpha=1.0, eta=2.0, g=None, max_iters=400, grad_norm_tol=1e-6,
                 strict=False):
        self.alpha = alpha
        self.eta = eta
        self.g = g
        self.max_iters = max_iters
        self.grad_norm_tol = grad_norm_tol
        self.strict = strict

    def _config(self):
        g = self.g if self.g is not None else NonlinearFn.zero()
        return PhaseRetrievalConfig(
            eta_over_alpha=self.eta / self.alpha,
            eta_alpha_product=self.eta * self.alpha,
            g_over_alpha=g.scaled(1.0 / self.alpha),
            max_iters=self.max_iters,
            grad_norm_tol=self.grad_norm_tol,
        )

    def fit(self, X, y=None):
        if not isinstance(X, IntensityTriple):
            raise TypeError("PhaseRetriever.fit expects an IntensityTriple")
        cfg = self._config()
        self.results_ = [retrieve_phase(X.I1, X.dIdz1, cfg), retrieve_phase(X.I3, X.dIdz3, cfg)]
        self.converged_ = all(r.converged for r in self.results_)
        self.n_iter_ = [r.iterations_used for r in self.results_]
        if self.strict and not self.converged_:
            raise PhaseRetrievalDivergence(
                f"phase retrieval did not converge ({[r.status for r in self.results_]})",
                history=[r.grad_norm_history for r in self.results_])
        self.phase_ = np.stack([0.5 * self.alpha * r.phi_tilde for r in self.results_])
        return self

    def transform(self, X):
        if not hasattr(self, "phase_"):
            raise AttributeError("PhaseRetriever is not fitted")
        return self.phase_
