"""Exception hierarchy shared across the library."""


class GreylagError(Exception):
    """Base class for all library errors."""


# --- graph construction and evaluation ---------------------------------


class CycleError(GreylagError):
    """The node set contains a directed cycle."""


class MissingInputError(GreylagError):
    """A node references an input that does not exist."""


class ShapeError(GreylagError):
    """A value does not match the shape declared at graph construction."""


class WeakWriteError(GreylagError):
    """Attempt to write the value of a weak node."""


class EvaluationError(GreylagError):
    """A node failed to evaluate during an update.

    Carries the offending node name in ``node``.
    """

    def __init__(self, node: str, message: str):
        super().__init__(f"node '{node}': {message}")
        self.node = node


class NonDifferentiableError(GreylagError):
    """A gradient was requested through a discrete node or an operation
    without a registered vector-Jacobian product."""


# --- distributions ------------------------------------------------------


class DomainError(GreylagError):
    """A distribution parameter lies outside its domain."""


class UnsupportedTransformError(GreylagError):
    """The requested bijector cannot be applied to this node."""


# --- regression ---------------------------------------------------------


class DegenerateError(GreylagError):
    """An identification constraint annihilates the whole coefficient space."""


class LinkDomainError(GreylagError):
    """An inverse link maps the predictor outside the parameter space."""


# --- kernels ------------------------------------------------------------


class DivergenceError(GreylagError):
    """The Hamiltonian error exceeded the divergence threshold."""


# --- engine -------------------------------------------------------------


class ScheduleError(GreylagError):
    """Invalid epoch schedule (ordering, durations, or thinning)."""


class CoverageError(GreylagError):
    """The kernel position assignments do not partition the parameters."""


class InitError(GreylagError):
    """The initial model state is unusable (e.g. log-probability is -inf)."""


class ExhaustedError(GreylagError):
    """No unconsumed epoch is left in the schedule."""


class EngineError(GreylagError):
    """The engine was used in an invalid order (e.g. results before sampling)."""


# --- diagnostics and CLI -------------------------------------------------


class DiagnosticError(GreylagError):
    """A chain diagnostic cannot be computed (constant, too short, or NaN)."""


class ConfigError(GreylagError):
    """The experiment configuration is invalid."""


class DataError(GreylagError):
    """The input data file is missing columns or contains non-numeric values."""
