"""Exception hierarchy shared by all modules."""


class GpshError(Exception):
    """Base class for every error raised by the package."""


class RankError(GpshError):
    pass


class DimError(GpshError):
    pass


class FieldEvalError(GpshError):
    pass


class EmptyFiber(GpshError):
    pass


class BudgetExceeded(GpshError):
    pass


class NoWitness(GpshError):
    pass


class ProbeInvalid(GpshError):
    pass


class EmptyBoundary(GpshError):
    pass


class DegenerateDefiningFunction(GpshError):
    pass


class NotStrictlyConvex(GpshError):
    pass


class LambdaSearchFailed(GpshError):
    pass


class DomainError(GpshError):
    pass


class CompositionRuleViolated(GpshError):
    pass


class MetricSingular(GpshError):
    pass


class FrameError(GpshError):
    pass


class RankAmbiguous(GpshError):
    pass


class SurfaceDegenerate(GpshError):
    pass


class StencilResolutionError(GpshError):
    pass


class NotConverged(GpshError):
    def __init__(self, message: str, residual: float = float("nan"), sweeps: int = 0):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


class PreconditionFailed(GpshError):
    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


class ConeViolation(GpshError):
    pass


class MaximumPrincipleAtRisk(UserWarning):
    """Warning: the plane family does not involve every variable."""
