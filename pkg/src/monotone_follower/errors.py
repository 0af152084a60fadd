"""Exception hierarchy shared by all modules."""


class MonotoneFollowerError(Exception):
    """Base class for every error raised by the package."""


class TreeError(MonotoneFollowerError, ValueError):
    """Malformed scenario tree or invalid constructor arguments."""


class DimensionError(MonotoneFollowerError, ValueError):
    pass


class EvaluationError(MonotoneFollowerError, ArithmeticError):
    """A user-supplied cost evaluator returned NaN."""

    def __init__(self, what, node):
        super().__init__(f"{what} evaluated to NaN at node {node}")
        self.what = what
        self.node = node


class GradientsRequired(MonotoneFollowerError):
    pass


class InfeasiblePlanError(MonotoneFollowerError, ValueError):
    """A control plan or perturbation leaves the feasible set."""


class ConvexityAuditError(MonotoneFollowerError, ValueError):
    pass


class UncertifiedPlanError(MonotoneFollowerError):
    pass


class MarginalMismatchError(MonotoneFollowerError, ValueError):
    pass


class ConfigError(MonotoneFollowerError, ValueError):
    pass
