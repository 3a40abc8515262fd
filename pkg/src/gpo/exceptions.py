"""Exception hierarchy shared across the package."""


class GPOError(Exception):
    """Base class for all errors raised by :mod:`gpo`."""


class ObservationImpossibleError(GPOError, ValueError):
    """An (action, observation) pair has zero probability under the belief."""


class ModelFormatError(GPOError, ValueError):
    """Base class for errors raised while reading a model file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelSyntaxError(ModelFormatError):
    pass


class UndeclaredNameError(ModelFormatError):
    pass


class DistributionSumError(ModelFormatError):
    pass


class DuplicateDeclarationError(ModelFormatError):
    pass


class InvalidModelError(GPOError, ValueError):
    """A model violates one of the structural invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class RewardAmbiguityError(GPOError, ValueError):
    """Two states sharing an observation disagree on a reward."""


class UnknownSupportError(GPOError, KeyError):
    """A belief support was looked up that the game never enumerated."""


class BoundUnavailableError(GPOError, ValueError):
    pass


class GuardDesyncError(GPOError, RuntimeError):
    """The observed (action, observation) is impossible for the tracked support."""


class InfeasibilityFault(GPOError, RuntimeError):
    """No action is allowed; raised when the threshold cannot be guaranteed."""


class EnumerationBudgetExceeded(GPOError, RuntimeError):
    pass


class PolicyIncompleteError(GPOError, ValueError):
    """A policy tree has no branch for an observation that can occur."""


class InfeasibleThresholdError(GPOError, ValueError):
    """The threshold exceeds what can be guaranteed from the initial belief."""
