"""Uniform square grids on the unit square and second-order stencils.

Fields are plain 2-D numpy arrays indexed ``[ix, iy]`` with ``x = ix*h`` and
``y = iy*h``. Interior points use centred differences; the outermost row and
column use one-sided second-order differences so every operator is defined
on the full grid.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from ._validation import MIN_POINTS, check_field, check_same_shape, check_spacing
from .errors import GridError


@dataclass(frozen=True)
class GridSpec:
    """Square grid of ``n x n`` nodes covering [0, 1] x [0, 1]."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < MIN_POINTS:
            raise GridError(f"grid needs an integer n >= {MIN_POINTS}, got {self.n}")

    @property
    def nx(self):
        return self.n

    @property
    def ny(self):
        return self.n

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def h(self):
        return 1.0 / (self.n - 1)

    @classmethod
    def from_field(cls, values):
        return cls(np.shape(check_field(values))[0])

    def coords(self):
        return np.linspace(0.0, 1.0, self.n)

    def mesh(self):
        x = self.coords()
        return np.meshgrid(x, x, indexing="ij")


# Stencils are written as sums of neighbour differences so that constant
# fields give exactly zero, edges included.

def _first_derivative(f, axis, h):
    u = np.moveaxis(f, axis, 0)
    d = u[1:] - u[:-1]
    out = np.empty_like(u)
    out[1:-1] = 0.5 * (d[1:] + d[:-1])
    out[0] = 1.5 * d[0] - 0.5 * d[1]
    out[-1] = 1.5 * d[-1] - 0.5 * d[-2]
    return np.moveaxis(out, 0, axis) / h


def _second_derivative(f, axis, h):
    u = np.moveaxis(f, axis, 0)
    d = u[1:] - u[:-1]
    out = np.empty_like(u)
    out[1:-1] = d[1:] - d[:-1]
    # one-sided (2, -5, 4, -1)
    out[0] = 3.0 * d[1] - 2.0 * d[0] - d[2]
    out[-1] = 2.0 * d[-1] - 3.0 * d[-2] + d[-3]
    return np.moveaxis(out, 0, axis) / (h * h)


def laplacian(f, h):
    """Five-point Laplacian; one-sided (2, -5, 4, -1) second differences at edges.

    Accepts real or complex fields.
    """
    f = check_field(f, "f", allow_complex=True)
    h = check_spacing(h)
    return _second_derivative(f, 0, h) + _second_derivative(f, 1, h)


def gradient(f, h):
    """Central differences inside, second-order one-sided at the edges."""
    f = check_field(f, "f", allow_complex=True)
    h = check_spacing(h)
    return _first_derivative(f, 0, h), _first_derivative(f, 1, h)


def divergence(vx, vy, h):
    """d(vx)/dx + d(vy)/dy using the same stencil as :func:`gradient`."""
    vx = check_field(vx, "vx", allow_complex=True)
    vy = check_field(vy, "vy", allow_complex=True)
    check_same_shape(vx, vy, names=["vx", "vy"])
    h = check_spacing(h)
    return _first_derivative(vx, 0, h) + _first_derivative(vy, 1, h)


def central_dz(f_minus, f_plus, dz):
    """(f_plus - f_minus) / (2 dz): derivative at the plane midway between."""
    if not dz > 0:
        raise ValueError(f"dz must be positive, got {dz}")
    f_minus = check_field(f_minus, "f_minus")
    f_plus = check_field(f_plus, "f_plus")
    check_same_shape(f_minus, f_plus, names=["f_minus", "f_plus"])
    return (f_plus - f_minus) / (2.0 * dz)


def node_weights(n):
    """Trapezoid weights: 1 inside, 1/2 on edges, 1/4 at corners."""
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return np.outer(w, w)


def face_coefficients(coef):
    """Face-centred coefficients for the weighted zero-Neumann operator.

    Returns ``(cx, cy)`` of shapes ``(n-1, n)`` and ``(n, n-1)``: the
    arithmetic mean of ``coef`` across each face times the trapezoid weight
    of the line the face lies on.
    """
    n = coef.shape[0]
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    cx = 0.5 * (coef[1:, :] + coef[:-1, :]) * w[None, :]
    cy = 0.5 * (coef[:, 1:] + coef[:, :-1]) * w[:, None]
    return cx, cy


def apply_faces(cx, cy, u):
    """Sum of face fluxes c*(u_nb - u) into each node (weighted, unscaled)."""
    out = np.zeros_like(u)
    fx = cx * (u[1:, :] - u[:-1, :])
    fy = cy * (u[:, 1:] - u[:, :-1])
    out[:-1, :] += fx
    out[1:, :] -= fx
    out[:, :-1] += fy
    out[:, 1:] -= fy
    return out


def conservative_divergence(coef, u, h):
    """div(coef * grad u) with mirror-ghost zero-Neumann edges.

    This is the operator the elliptic solver inverts (with ``coef = I``), so
    quantities such as ``(1/I) div(I grad phi)`` evaluated with it are
    consistent with retrieved phases.
    """
    coef = check_field(coef, "coef")
    u = check_field(u, "u")
    check_same_shape(coef, u, names=["coef", "u"])
    h = check_spacing(h)
    cx, cy = face_coefficients(coef)
    return apply_faces(cx, cy, u) / (node_weights(coef.shape[0]) * h * h)


@dataclass(frozen=True)
class BoundaryContour:
    """Equally spaced samples on the circle inscribed in the unit square."""

    grid: GridSpec
    theta: np.ndarray = field(repr=False)
    radius: float = 0.5
    center: tuple = (0.5, 0.5)

    @classmethod
    def inscribed(cls, grid, n_points=None, radius=0.5):
        m = 4 * (grid.n - 1) if n_points is None else int(n_points)
        if m < 3:
            raise ValueError("contour needs at least 3 points")
        theta = 2.0 * np.pi * np.arange(m) / m
        return cls(grid, theta, float(radius))

    @property
    def points(self):
        cx, cy = self.center
        return np.column_stack([cx + self.radius * np.cos(self.theta),
                                cy + self.radius * np.sin(self.theta)])

    @property
    def normals(self):
        return np.column_stack([np.cos(self.theta), np.sin(self.theta)])

    @property
    def dl(self):
        return np.full(self.theta.size, 2.0 * np.pi * self.radius / self.theta.size)


def sample_bilinear(values, points, h):
    """Bilinear interpolation of a node field at physical (x, y) points."""
    idx = np.asarray(points, dtype=float).T / h
    n = values.shape[0]
    tol = 1e-9
    if np.any(idx < -tol) or np.any(idx > n - 1 + tol):
        raise GridError("contour exits the grid")
    idx = np.clip(idx, 0.0, n - 1)
    return map_coordinates(values, idx, order=1, mode="nearest")


def boundary_flux(phase, contour):
    """N = closed integral of grad(phase).n dl over the contour (outward normal)."""
    phase = check_field(phase, "phase")
    if phase.shape != contour.grid.shape:
        raise GridError(f"phase shape {phase.shape} does not match contour grid {contour.grid.shape}")
    h = contour.grid.h
    gx, gy = gradient(phase, h)
    pts = contour.points
    normal = contour.normals
    gn = sample_bilinear(gx, pts, h) * normal[:, 0] + sample_bilinear(gy, pts, h) * normal[:, 1]
    return float(np.sum(gn * contour.dl))
