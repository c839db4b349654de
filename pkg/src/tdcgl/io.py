"""Snapshot files, run configuration and CSV exports.

Snapshot layout (all little-endian)::

    8 bytes   magic b"TDCGL1\\0\\0"
    u32 nx, u32 ny
    f64 h, f64 z
    u8 kind   0 intensity, 1 phase, 2 complex (re, im interleaved)
    payload   f64, row-major [ix, iy], nx*ny*(1 or 2) values
"""

import csv
import struct
from dataclasses import dataclass, fields
from dataclasses import replace as _replace
from pathlib import Path

import numpy as np

from .errors import SnapshotFormatError
from .forward import EvolutionPlan, InitialConditionSpec, ModelSpec, NonlinearFn
from .grid import GridSpec
from .inference import RelaxationConfig

MAGIC = b"TDCGL1\0\0"
HEADER = struct.Struct("<8sIIddB")
KIND_INTENSITY, KIND_PHASE, KIND_COMPLEX = 0, 1, 2


@dataclass
class Snapshot:
    values: np.ndarray
    h: float
    z: float
    kind: int


def write_snapshot(path, values, z=0.0, kind=KIND_INTENSITY, h=None):
    values = np.asarray(values)
    if values.ndim != 2:
        raise SnapshotFormatError("snapshot values must be 2-D")
    nx, ny = values.shape
    if kind == KIND_COMPLEX:
        payload = np.ascontiguousarray(values, dtype="<c16").tobytes()
    elif kind in (KIND_INTENSITY, KIND_PHASE):
        if np.iscomplexobj(values):
            raise SnapshotFormatError("real snapshot kinds need real values")
        payload = np.ascontiguousarray(values, dtype="<f8").tobytes()
    else:
        raise SnapshotFormatError(f"unknown snapshot kind {kind}")
    h = 1.0 / max(nx - 1, 1) if h is None else float(h)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, nx, ny, h, float(z), kind))
        fh.write(payload)


def read_snapshot(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise SnapshotFormatError(f"{path}: file shorter than the header")
    magic, nx, ny, h, z, kind = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic {magic!r}")
    if kind not in (KIND_INTENSITY, KIND_PHASE, KIND_COMPLEX):
        raise SnapshotFormatError(f"{path}: unknown kind {kind}")
    width = 2 if kind == KIND_COMPLEX else 1
    expected = nx * ny * width * 8
    payload = raw[HEADER.size:]
    if len(payload) != expected:
        raise SnapshotFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    dtype = "<c16" if kind == KIND_COMPLEX else "<f8"
    values = np.frombuffer(payload, dtype=dtype).reshape(nx, ny).astype(
        complex if kind == KIND_COMPLEX else float)
    return Snapshot(values, h, z, kind)


# -- nonlinear functions as text ------------------------------------------------

def format_nonlinear(fn):
    if fn.kind == "zero":
        return "zero"
    if fn.kind == "sine_scaled":
        return f"sine_scaled:{fn.coefficient!r}"
    if fn.kind == "power":
        return f"power:{fn.coefficient!r}:{fn.exponent!r}"
    pairs = ";".join(f"{x!r}/{y!r}" for x, y in zip(fn.table_I, fn.table_values))
    return f"tabulated:{pairs}"


def parse_nonlinear(text):
    kind, _, rest = text.strip().partition(":")
    try:
        if kind == "zero" and not rest:
            return NonlinearFn.zero()
        if kind == "sine_scaled":
            return NonlinearFn.sine_scaled(float(rest))
        if kind == "power":
            c, p = rest.split(":")
            return NonlinearFn.power(float(c), float(p))
        if kind == "tabulated":
            xy = [item.split("/") for item in rest.split(";")]
            return NonlinearFn.tabulated([float(x) for x, _ in xy], [float(y) for _, y in xy])
    except ValueError as exc:
        raise SnapshotFormatError(f"bad function spec {text!r}: {exc}") from exc
    raise SnapshotFormatError(f"bad function spec {text!r}")


# -- run configuration ----------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Every knob of a simulate/infer/roundtrip run as one flat record.

    Text form is ``key = value`` per line; ``#`` starts a comment. Keys not
    present keep their defaults; unknown keys are rejected.
    """

    grid_n: int = 257
    A: float = 10.0
    W: float = 0.125
    delta: float = 0.01
    r0: float = 0.5 / 64
    n: int = 10
    x0: float = 0.5
    y0: float = 0.5
    xc: float = 0.5
    yc: float = 0.5
    A_phi: float = 0.5
    alpha: float = 1.0
    eta: float = 2.0
    f: NonlinearFn = NonlinearFn.sine_scaled(100.0)
    g: NonlinearFn = NonlinearFn.power(3.0, 2.0)
    dz: float = 1e-7
    n_steps: int = 300
    snapshot_every: int = 100
    epsilon: float = 1e-7
    initial_bump: float = 0.01
    max_outer_iters: int = 200
    n_iso_levels: int = 100
    histogram_bin_width: float = 1e-3
    inner_max_iters: int = 400
    grad_norm_tol: float = 1e-6
    g_table_levels: int = 512
    tol_eta: float = 0.005
    tol_alpha: float = 0.05
    tol_sigma: float = 0.02
    tol_f_amplitude: float = 0.03
    min_f_correlation: float = 0.999

    def grid(self):
        return GridSpec(self.grid_n)

    def initial_condition(self):
        return InitialConditionSpec(A=self.A, W=self.W, delta=self.delta, r0=self.r0, n=self.n,
                                    x0=self.x0, y0=self.y0, A_phi=self.A_phi, xc=self.xc,
                                    yc=self.yc)

    def model(self):
        return ModelSpec(alpha=self.alpha, eta=self.eta, f=self.f, g=self.g)

    def plan(self):
        return EvolutionPlan(dz=self.dz, n_steps=self.n_steps, snapshot_every=self.snapshot_every)

    def relaxation(self):
        return RelaxationConfig(epsilon=self.epsilon, initial_bump=self.initial_bump,
                                max_outer_iters=self.max_outer_iters,
                                n_iso_levels=self.n_iso_levels,
                                histogram_bin_width=self.histogram_bin_width,
                                inner_max_iters=self.inner_max_iters,
                                grad_norm_tol=self.grad_norm_tol)

    def validate(self):
        self.grid()
        self.initial_condition()
        self.model()
        self.plan()
        self.relaxation()
        return self

    def serialize(self):
        lines = []
        for fld in fields(self):
            value = getattr(self, fld.name)
            text = format_nonlinear(value) if isinstance(value, NonlinearFn) else repr(value)
            lines.append(f"{fld.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text):
        kinds = {fld.name: fld.type for fld in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = (part.strip() for part in line.partition("="))
            if not sep:
                raise SnapshotFormatError(f"line {lineno}: expected 'key = value'")
            if key not in kinds:
                raise SnapshotFormatError(f"unknown config key {key!r} (line {lineno})")
            kind = kinds[key]
            try:
                if kind is NonlinearFn or kind == "NonlinearFn":
                    values[key] = parse_nonlinear(raw)
                elif kind is int or kind == "int":
                    values[key] = int(raw)
                else:
                    values[key] = float(raw)
            except ValueError as exc:
                raise SnapshotFormatError(f"bad value for {key!r}: {raw!r}") from exc
        try:
            return cls(**values).validate()
        except (ValueError, TypeError) as exc:
            if isinstance(exc, SnapshotFormatError):
                raise
            raise SnapshotFormatError(f"invalid configuration: {exc}") from exc

    @classmethod
    def load(cls, path):
        return cls.parse(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.serialize())

    def replace(self, **changes):
        return _replace(self, **changes).validate()


def write_key_values(path, mapping):
    Path(path).write_text("".join(f"{k} = {v!r}\n" if not isinstance(v, str) else f"{k} = {v}\n"
                                  for k, v in mapping.items()))


def read_key_values(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, _, value = (p.strip() for p in line.partition("="))
            out[key] = value
    return out


# -- CSV exports ----------------------------------------------------------------

TRACE_COLUMNS = ["k", "eta_over_alpha", "eta", "alpha", "alpha_fwhm", "N", "X", "inner_iters"]


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def write_trace_csv(path, trace):
    _write_rows(path, TRACE_COLUMNS, trace.rows())


def write_histogram_csv(path, hist):
    edges = hist.edges
    rows = zip(edges[:-1], edges[1:], 0.5 * (edges[:-1] + edges[1:]), hist.counts.tolist())
    _write_rows(path, ["bin_lo", "bin_hi", "center", "count"], rows)


def write_table_csv(path, intensity, values, counts, value_name):
    _write_rows(path, ["I", value_name, "count"], zip(intensity, values, np.asarray(counts).tolist()))


def read_table_csv(path):
    """Read an ``I, value[, count]`` table as a tabulated NonlinearFn."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise SnapshotFormatError(f"{path}: table needs a header and at least two rows")
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise SnapshotFormatError(f"{path}: malformed table row") from exc
    return NonlinearFn.tabulated(data[:, 0], data[:, 1])
