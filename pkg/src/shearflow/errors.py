"""Exception hierarchy shared by all shearflow modules."""


class ShearflowError(Exception):
    """Base class for every error raised on purpose by this package."""


class DimensionMismatch(ShearflowError, ValueError):
    pass


class IncompatibleJets(ShearflowError, ValueError):
    pass


class SingularJet(ShearflowError, ValueError):
    pass


class NumericalFailure(ShearflowError):
    """Numerical stage could not reach its target (CLI exit code 2)."""


class RankDeficient(NumericalFailure):
    def __init__(self, message, residual=float("nan"), attempts=0):
        super().__init__(message)
        self.residual = residual
        self.attempts = attempts


class IllConditioned(NumericalFailure):
    def __init__(self, message, condition=float("nan")):
        super().__init__(message)
        self.condition = condition


class NonFinite(NumericalFailure):
    pass


class BudgetExhausted(NumericalFailure):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class GuardViolated(NumericalFailure):
    def __init__(self, message, displacement=float("nan"), theta=None):
        super().__init__(message)
        self.displacement = displacement
        self.theta = theta


class DegenerateNormal(NumericalFailure, ValueError):
    pass


class EstimateNotFound(NumericalFailure):
    pass


class ExposednessFailed(ShearflowError):
    """Verification of the exposing map failed (CLI exit code 3)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
