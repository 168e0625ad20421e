"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``InferenceError`` subclasses exit with 3,
``NumericalError`` with 4.
"""


class ClgError(Exception):
    """Base class for all package errors."""


class NetworkParseError(ClgError, ValueError):
    """Malformed network/evidence/query document."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class StructureError(ClgError, ValueError):
    """Invalid graph structure (cycles, bad topology, unknown nodes)."""


class InputError(ClgError, ValueError):
    """An argument does not satisfy an operation's precondition."""


class InferenceError(ClgError):
    """Inference-domain failure (exit code 3)."""


class ImpossibleEvidenceError(InferenceError):
    """The evidence has zero probability under the model."""


class CapExceededError(InferenceError):
    """Exact enumeration refused: the hypothesis space is too large."""


class UnsupportedStructureError(InferenceError):
    """The requested computation is only defined for a narrower model class."""


class DegenerateResultError(InferenceError):
    """Every hypothesis weight is zero."""


class GibbsInitError(InferenceError):
    """No positive-probability initial state found for the Gibbs chain."""


class TrackingLostError(InferenceError):
    """All hypotheses became inconsistent with the observations."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message if step is None else f"step {step}: {message}")


class NumericalError(ClgError, ArithmeticError):
    """Numerical failure, e.g. a singular covariance block (exit code 4)."""
