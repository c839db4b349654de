"""Exception types raised by the toolkit."""


class TDCGLError(Exception):
    """Base class for all toolkit errors."""


class GridError(TDCGLError, ValueError):
    """Field shape or grid size is not usable by the stencils."""


class NumericalBlowupError(TDCGLError, FloatingPointError):
    """The forward integration produced non-finite or runaway values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConvergenceError(TDCGLError, RuntimeError):
    """An iterative scheme failed to converge.

    ``history`` carries whatever diagnostics the failing scheme collected
    (norm history for phase retrieval, relaxation traces for inference).
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class PhaseRetrievalDivergence(ConvergenceError):
    """The phase-gradient norm change kept growing: the iteration diverges."""


class SnapshotFormatError(TDCGLError, ValueError):
    """A snapshot file or run configuration is malformed."""
