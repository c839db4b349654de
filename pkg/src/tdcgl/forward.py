"""Forward evolution of the TDCGL equation with classical RK4.

    dPsi/dz = (i/alpha) [ (1 - i eta) lap(Psi) + (f(I) + i g(I)) Psi ],  I = |Psi|^2

The initial state is a Gaussian intensity envelope with a weak sinusoidal
modulation and a Gaussian phase bump sharing the same envelope.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_field, check_positive_field, check_same_shape
from .errors import GridError, NumericalBlowupError
from .grid import GridSpec, _second_derivative, central_dz

BLOWUP_FACTOR = 1e6


@dataclass(frozen=True)
class NonlinearFn:
    """Scalar function of intensity used for f(I) and g(I).

    Use the constructors :meth:`sine_scaled`, :meth:`power`,
    :meth:`tabulated` and :meth:`zero` rather than the raw fields.
    Tabulated functions interpolate linearly and hold the end values
    outside the table.
    """

    kind: str = "zero"
    coefficient: float = 0.0
    exponent: float = 1.0
    table_I: tuple = ()
    table_values: tuple = ()

    KINDS = ("sine_scaled", "power", "tabulated", "zero")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "tabulated":
            xs = np.asarray(self.table_I, dtype=float)
            ys = np.asarray(self.table_values, dtype=float)
            if xs.ndim != 1 or xs.size < 2 or xs.shape != ys.shape:
                raise ValueError("tabulated function needs matching 1-D tables of length >= 2")
            if np.any(np.diff(xs) <= 0):
                raise ValueError("tabulated abscissae must be strictly increasing")
            if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
                raise ValueError("tabulated values must be finite")

    @classmethod
    def sine_scaled(cls, amplitude):
        return cls("sine_scaled", coefficient=float(amplitude))

    @classmethod
    def power(cls, coefficient, exponent):
        return cls("power", coefficient=float(coefficient), exponent=float(exponent))

    @classmethod
    def tabulated(cls, intensities, values):
        xs = tuple(float(v) for v in np.asarray(intensities, dtype=float).ravel())
        ys = tuple(float(v) for v in np.asarray(values, dtype=float).ravel())
        return cls("tabulated", table_I=xs, table_values=ys)

    @classmethod
    def zero(cls):
        return cls("zero")

    def __call__(self, intensity):
        I = np.asarray(intensity, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(I)
        if self.kind == "sine_scaled":
            return self.coefficient * np.sin(np.pi * I)
        if self.kind == "power":
            return self.coefficient * I ** self.exponent
        return np.interp(I, self.table_I, self.table_values)

    def scaled(self, factor):
        """Return ``factor * self`` as a new function of the same kind."""
        factor = float(factor)
        if self.kind == "zero":
            return self
        if self.kind == "tabulated":
            return replace(self, table_values=tuple(factor * v for v in self.table_values))
        return replace(self, coefficient=factor * self.coefficient)


@dataclass(frozen=True)
class ModelSpec:
    """Ground-truth parameters of the forward model."""

    alpha: float = 1.0
    eta: float = 2.0
    f: NonlinearFn = field(default_factory=lambda: NonlinearFn.sine_scaled(100.0))
    g: NonlinearFn = field(default_factory=lambda: NonlinearFn.power(3.0, 2.0))

    def __post_init__(self):
        if self.alpha == 0 or not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite and nonzero")
        if not np.isfinite(self.eta):
            raise ValueError("eta must be finite")

    @property
    def g_over_alpha(self):
        return self.g.scaled(1.0 / self.alpha)


@dataclass(frozen=True)
class InitialConditionSpec:
    """Gaussian envelope with sinusoidal modulation and a Gaussian phase.

    The envelope is ``exp(-((r - r0)/W)^2 / 2)`` with ``r`` measured from
    ``(xc, yc)``. The defaults are the desk-scale geometry: an envelope
    centred in the unit square whose width is the printed W = 8 read in
    units of 1/64 of the domain. :meth:`literal` gives the printed values
    taken in domain units with ``r`` measured from the corner.
    """

    A: float = 10.0
    W: float = 0.125
    delta: float = 0.01
    r0: float = 0.5 / 64
    n: int = 10
    x0: float = 0.5
    y0: float = 0.5
    A_phi: float = 0.5
    xc: float = 0.5
    yc: float = 0.5

    def __post_init__(self):
        if not self.A > 0:
            raise ValueError("A must be positive")
        if not self.W > 0:
            raise ValueError("W must be positive")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if int(self.n) != self.n or self.n < 0:
            raise ValueError("n must be a non-negative integer")

    @classmethod
    def literal(cls, **overrides):
        params = dict(A=10.0, W=8.0, delta=0.01, r0=0.5, n=20, x0=0.5, y0=0.5,
                      A_phi=1.0, xc=0.0, yc=0.0)
        params.update(overrides)
        return cls(**params)

    def envelope(self, grid):
        X, Y = grid.mesh()
        r = np.hypot(X - self.xc, Y - self.yc)
        return np.exp(-0.5 * ((r - self.r0) / self.W) ** 2)


@dataclass(frozen=True)
class EvolutionPlan:
    dz: float = 1e-7
    n_steps: int = 300
    snapshot_every: int = 100

    def __post_init__(self):
        if not self.dz > 0:
            raise ValueError("dz must be positive")
        if self.n_steps < 0 or self.snapshot_every < 1:
            raise ValueError("n_steps must be >= 0 and snapshot_every >= 1")
        if self.n_steps % self.snapshot_every:
            raise ValueError("snapshot_every must divide n_steps")

    @property
    def n_snapshots(self):
        return self.n_steps // self.snapshot_every

    @property
    def dz_plane(self):
        return self.snapshot_every * self.dz


@dataclass(frozen=True)
class IntensityTriple:
    """Intensities on three equally spaced planes z0, z2, z4.

    Phase is retrieved on the midplanes z1 and z3, where the intensity is
    the mean of the neighbouring planes and dI/dz their central difference.
    """

    I0: np.ndarray
    I2: np.ndarray
    I4: np.ndarray
    dz_plane: float

    def __post_init__(self):
        for name in ("I0", "I2", "I4"):
            object.__setattr__(self, name, check_positive_field(getattr(self, name), name))
        check_same_shape(self.I0, self.I2, self.I4, names=["I0", "I2", "I4"])
        if not self.dz_plane > 0:
            raise ValueError("dz_plane must be positive")

    @property
    def grid(self):
        return GridSpec(self.I0.shape[0])

    @property
    def I1(self):
        return 0.5 * (self.I0 + self.I2)

    @property
    def I3(self):
        return 0.5 * (self.I2 + self.I4)

    @property
    def dIdz1(self):
        return central_dz(self.I0, self.I2, 0.5 * self.dz_plane)

    @property
    def dIdz3(self):
        return central_dz(self.I2, self.I4, 0.5 * self.dz_plane)


def init_intensity(spec, grid):
    """Initial intensity: modulated Gaussian envelope, strictly positive."""
    env = spec.envelope(grid)
    X, Y = grid.mesh()
    mod_x = 1.0 + spec.delta * env * np.cos(2.0 * np.pi * spec.n * (X - spec.x0))
    mod_y = 1.0 + spec.delta * env * np.sin(2.0 * np.pi * spec.n * (Y - spec.y0))
    I = spec.A * mod_x * mod_y * env
    if np.any(I <= 0):
        raise GridError("initial intensity is not strictly positive; widen W or move the envelope")
    return I


def init_phase(spec, grid):
    return spec.A_phi * spec.envelope(grid)


def initial_field(spec, grid):
    return np.sqrt(init_intensity(spec, grid)) * np.exp(1j * init_phase(spec, grid))


def _rhs(psi, model, h):
    I = psi.real ** 2 + psi.imag ** 2
    lap = _second_derivative(psi, 0, h) + _second_derivative(psi, 1, h)
    return (1j / model.alpha) * ((1.0 - 1j * model.eta) * lap + (model.f(I) + 1j * model.g(I)) * psi)


def tdcgl_rhs(psi, model, h=None):
    """dPsi/dz for a complex field; ``h`` defaults to the unit-square spacing."""
    psi = check_field(psi, "psi", allow_complex=True).astype(complex, copy=False)
    h = GridSpec(psi.shape[0]).h if h is None else h
    out = _rhs(psi, model, h)
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError("non-finite right-hand side")
    return out


def _rk4(psi, model, dz, h):
    k1 = _rhs(psi, model, h)
    k2 = _rhs(psi + 0.5 * dz * k1, model, h)
    k3 = _rhs(psi + 0.5 * dz * k2, model, h)
    k4 = _rhs(psi + dz * k3, model, h)
    return psi + (dz / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_blowup(psi, limit, step):
    amp = np.abs(psi)
    if not np.all(np.isfinite(amp)) or amp.max() > limit:
        raise NumericalBlowupError(f"field blew up at step {step}", step=step)


def rk4_step(psi, model, dz, h=None, initial_max=None):
    """One classical RK4 step.

    Raises NumericalBlowupError when any |Psi| exceeds 1e6 times
    ``initial_max`` (default: the max of the incoming field).
    """
    if not dz > 0:
        raise ValueError("dz must be positive")
    psi = check_field(psi, "psi", allow_complex=True).astype(complex, copy=False)
    h = GridSpec(psi.shape[0]).h if h is None else h
    ref = np.abs(psi).max() if initial_max is None else initial_max
    out = _rk4(psi, model, dz, h)
    _check_blowup(out, BLOWUP_FACTOR * max(ref, np.finfo(float).tiny), 1)
    return out


def evolve_snapshots(psi0, model, plan, phase0=None):
    """Run ``plan`` and return ``(z, intensities, phases, psi_final)``.

    Phases are continuous: the initial phase (``phase0`` or ``angle(psi0)``)
    plus the per-step phase increments, so no 2*pi unwrapping is needed.
    Snapshot ``k`` is taken after ``(k+1)*snapshot_every`` steps.
    """
    psi = check_field(psi0, "psi0", allow_complex=True).astype(complex)
    h = GridSpec(psi.shape[0]).h
    phase = np.angle(psi) if phase0 is None else check_field(phase0, "phase0").copy()
    limit = BLOWUP_FACTOR * max(np.abs(psi).max(), np.finfo(float).tiny)
    zs, intensities, phases = [], [], []
    for step in range(1, plan.n_steps + 1):
        new = _rk4(psi, model, plan.dz, h)
        _check_blowup(new, limit, step)
        phase += np.angle(new * np.conj(psi))
        psi = new
        if step % plan.snapshot_every == 0:
            zs.append(step * plan.dz)
            intensities.append(np.abs(psi) ** 2)
            phases.append(phase.copy())
    return zs, intensities, phases, psi


def evolve(psi0, model, plan, phase0=None):
    """Evolve and package the first three snapshots as an :class:`IntensityTriple`.

    Returns ``(triple, phases)``; the phases are ground truth for
    diagnostics and must not be fed to inference. With ``n_steps == 0`` all
    three planes equal the initial intensity.
    """
    if plan.n_steps == 0:
        I = np.abs(np.asarray(psi0)) ** 2
        ph = np.angle(psi0) if phase0 is None else np.asarray(phase0, dtype=float)
        return IntensityTriple(I, I.copy(), I.copy(), plan.dz_plane), [ph] * 3
    if plan.n_snapshots < 3:
        raise ValueError("plan must produce at least 3 snapshots")
    _, intensities, phases, _ = evolve_snapshots(psi0, model, plan, phase0)
    return IntensityTriple(*intensities[:3], plan.dz_plane), phases[:3]


def simulate(ic=None, model=None, plan=None, n=257):
    """Convenience wrapper: build the initial state on an ``n x n`` grid and evolve."""
    ic = ic or InitialConditionSpec()
    model = model or ModelSpec()
    plan = plan or EvolutionPlan()
    grid = GridSpec(n)
    return evolve(initial_field(ic, grid), model, plan, init_phase(ic, grid))
