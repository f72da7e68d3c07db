"""Exception hierarchy.

Every error raised by the library derives from :class:`SafeDOGDError`. The
CLI maps :class:`ConfigError` to exit code 2 and :class:`DivergenceDetected`
to exit code 3.
"""


class SafeDOGDError(Exception):
    pass


class ConfigError(SafeDOGDError, ValueError):
    pass


class DimensionMismatch(SafeDOGDError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NonpositiveInput(SafeDOGDError, ValueError):
    pass


# network
class TopologyError(SafeDOGDError, ValueError):
    pass


class NotSymmetric(TopologyError):
    pass


class NotDoublyStochastic(TopologyError):
    pass


class ZeroDiagonal(TopologyError):
    pass


class Disconnected(TopologyError):
    pass


# geometry
class ZeroNormal(SafeDOGDError, ValueError):
    pass


class ProjectionError(SafeDOGDError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class MaxIterationsExceeded(ProjectionError):
    pass


class InfeasibleConstraintSet(ProjectionError):
    pass


class NoConvergence(ProjectionError):
    pass


class EmptyShrunkSet(SafeDOGDError, ValueError):
    pass


# estimation
class DivergenceDetected(SafeDOGDError, RuntimeError):
    pass


class SingularSystem(SafeDOGDError, RuntimeError):
    pass


class EmptyEstimatedSet(SafeDOGDError, RuntimeError):
    pass


# losses
class TargetsOutsideSafeSet(SafeDOGDError, ValueError):
    pass


class DomainNotPositive(SafeDOGDError, ValueError):
    pass


class DomainViolation(SafeDOGDError, ValueError):
    pass


# optimizer / harness
class ScheduleInvalid(SafeDOGDError, ValueError):
    pass


class HorizonMismatch(SafeDOGDError, ValueError):
    pass
