"""Variable-coefficient elliptic solver for the continuity equation.

Solves ``lap(u) + grad(I).grad(u)/I = rhs``, written in conservative form as
``(1/I) div(I grad u) = rhs``, with zero-Neumann edges and a zero-mean gauge.

Discretisation: face coefficients ``I_face * w`` (see
:func:`tdcgl.grid.face_coefficients`) give a symmetric negative
semi-definite matrix ``S`` whose null space is the constants. Solvability
requires ``sum(W I rhs) = 0``; the weighted mean of ``rhs`` is removed
first and returned as ``shift``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._validation import check_field, check_positive_field, check_spacing
from .errors import ConvergenceError
from .grid import GridSpec, face_coefficients, node_weights

RESIDUAL_RTOL = 1e-8
RESIDUAL_ATOL = 1e-12


def assemble_operator(coef, h):
    """Sparse matrix of the weighted flux operator ``sum_faces c (u_nb - u) / h^2``."""
    n = coef.shape[0]
    idx = np.arange(n * n).reshape(n, n)
    cx, cy = face_coefficients(coef)
    a = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
    b = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
    c = np.concatenate([cx.ravel(), cy.ravel()]) / (h * h)
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([b, a, a, b])
    vals = np.concatenate([c, c, -c, -c])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n * n, n * n))


@dataclass
class EllipticSolution:
    u: np.ndarray
    residual: float
    shift: float
    iterations: int


class _Multigrid:
    """Galerkin V-cycle on a vertex-centred hierarchy (n = 2^k + 1)."""

    def __init__(self, A, n, omega=0.8, sweeps=2, coarsest=5):
        self.omega = omega
        self.sweeps = sweeps
        self.levels = []
        while True:
            diag = A.diagonal()
            if n <= coarsest:
                self.levels.append((A, diag, None))
                self.coarse_inv = np.linalg.pinv(A.toarray())
                break
            P = self._prolongation(n)
            self.levels.append((A, diag, P))
            A = (P.T @ A @ P).tocsr()
            n = (n + 1) // 2

    @staticmethod
    def _prolongation(n):
        nc = (n + 1) // 2
        p1 = sp.lil_matrix((n, nc))
        for j in range(nc):
            p1[2 * j, j] = 1.0
            if 2 * j + 1 < n:
                p1[2 * j + 1, j] += 0.5
            if 2 * j - 1 >= 0:
                p1[2 * j - 1, j] += 0.5
        p1 = p1.tocsr()
        return sp.kron(p1, p1).tocsr()

    def _smooth(self, A, diag, x, b):
        for _ in range(self.sweeps):
            x = x + self.omega * (b - A @ x) / diag
        return x

    def cycle(self, b, level=0):
        A, diag, P = self.levels[level]
        if P is None:
            return self.coarse_inv @ b
        x = self._smooth(A, diag, np.zeros_like(b), b)
        r = b - A @ x
        x = x + P @ self.cycle(P.T @ r, level + 1)
        return self._smooth(A, diag, x, b)


def _is_dyadic(n):
    return n >= 5 and (n - 1) & (n - 2) == 0


class EllipticSolver:
    """Solver bound to one intensity plane.

    Parameters
    ----------
    I : ndarray
        Strictly positive intensity (the variable coefficient).
    h : float, optional
        Grid spacing; defaults to the unit-square spacing.
    method : {"auto", "multigrid", "direct"}
        ``"multigrid"`` runs conjugate gradients preconditioned by a
        Galerkin V-cycle and needs ``n = 2^k + 1``. ``"direct"`` factorises
        once with SuperLU (slow setup, exact to rounding). ``"auto"`` picks
        multigrid when the grid allows it.
    max_iters : int
        Iteration cap for the multigrid-preconditioned CG.
    """

    def __init__(self, I, h=None, method="auto", max_iters=200):
        self.I = check_positive_field(I, "I")
        n = self.I.shape[0]
        self.h = GridSpec(n).h if h is None else check_spacing(h)
        self.method = method
        self.max_iters = max_iters
        self.n = n
        self.weights = node_weights(n) * self.I
        self.S = assemble_operator(self.I, self.h)
        if method == "auto":
            method = self.method = "multigrid" if _is_dyadic(n) else "direct"
        if method == "direct":
            # border with the constant null vector: [S e; e^T 0] is regular and
            # spreads the rounding-level compatibility defect over all nodes
            e = sp.csr_matrix(np.ones((n * n, 1)))
            bordered = sp.bmat([[self.S, e], [e.T, None]], format="csc")
            self._lu = spla.splu(bordered)
        elif method == "multigrid":
            if not _is_dyadic(n):
                raise ValueError("multigrid needs n = 2^k + 1 points per side")
            self._A = (-self.S).tocsr()
            self._mg = _Multigrid(self._A, n)
        else:
            raise ValueError(f"unknown method {method!r}")

    def project(self, rhs):
        """Remove the weighted mean that makes the Neumann problem unsolvable."""
        shift = float(np.sum(self.weights * rhs) / np.sum(self.weights))
        return rhs - shift, shift

    def residual(self, u, rhs):
        """Relative residual of the assembled system.

        ``max|S u - b| / max|b|`` with ``b = W I rhs``: the equation
        multiplied through by ``W I``. Dividing back by ``I`` would amplify
        rounding by ``1/min(I)``, which is ~1e6 in the dark corners of a
        Gaussian beam.
        """
        b = self.weights * rhs
        Su = (self.S @ u.ravel()).reshape(u.shape)
        return float(np.max(np.abs(Su - b)) / np.max(np.abs(b)))

    def _pcg(self, b):
        A, mg = self._A, self._mg
        x = np.zeros_like(b)
        r = b.copy()
        tol = 1e-2 * RESIDUAL_RTOL * np.abs(b).max()
        z = mg.cycle(r)
        z -= z.mean()
        p = z.copy()
        rz = r @ z
        for it in range(1, self.max_iters + 1):
            Ap = A @ p
            step = rz / (p @ Ap)
            x += step * p
            r -= step * Ap
            if np.abs(r).max() < tol:
                return x, it
            z = mg.cycle(r)
            z -= z.mean()
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        return x, self.max_iters

    def solve(self, rhs):
        rhs = check_field(rhs, "rhs")
        if rhs.shape != self.I.shape:
            raise ValueError(f"rhs shape {rhs.shape} does not match intensity {self.I.shape}")
        projected, shift = self.project(rhs)
        if np.abs(projected).max() <= RESIDUAL_ATOL:
            return EllipticSolution(np.zeros_like(rhs), 0.0, shift, 0)
        b = (self.weights * projected).ravel()
        if self.method == "direct":
            u = self._lu.solve(np.append(b, 0.0))[:-1]
            iterations = 1
        else:
            u, iterations = self._pcg(-b)
        u = u.reshape(rhs.shape)
        u -= u.mean()
        res = self.residual(u, projected)
        if res > RESIDUAL_RTOL:
            raise ConvergenceError(
                f"relative elliptic residual {res:.3e} exceeds {RESIDUAL_RTOL:.0e}",
                history={"residual": res, "iterations": iterations})
        return EllipticSolution(u, res, shift, iterations)


def solve_elliptic(I, rhs, h=None, method="auto"):
    """One-shot solve; see :class:`EllipticSolver` for repeated solves on one plane."""
    return EllipticSolver(I, h=h, method=method).solve(rhs).u
