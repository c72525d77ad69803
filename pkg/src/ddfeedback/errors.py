"""Exception and warning types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are inconsistent. ``field`` names the offending argument."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class StabilityError(ValueError):
    """The plant matrix A is not Schur stable."""


class StructuralError(ValueError):
    """The system is uncontrollable or unobservable."""


class PersistencyError(ValueError):
    """A training signal is not persistently exciting of the required order."""

    def __init__(self, message, rank=None, required=None):
        self.rank = rank
        self.required = required
        super().__init__(message)


class InfeasibleConstraintsError(ValueError):
    """A stacked linear constraint system has no (numerically) exact solution."""

    def __init__(self, message, block=None, residual=None):
        self.block = block
        self.residual = residual
        super().__init__(message)


class GainInfeasibleError(ValueError):
    """No controller gain satisfies the contraction conditions."""


class MissingGroundTruthError(ValueError):
    """An audit computation was requested without the true system."""


class SignalFormatError(ValueError):
    """A signal/demand CSV file could not be parsed."""


class IllConditionedWarning(RuntimeWarning):
    """A linear solve was performed on a badly conditioned matrix."""
