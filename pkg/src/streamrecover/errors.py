"""Exception hierarchy.

Errors fall into three families that the command line maps onto exit codes:
bad input (2), numerical breakdown (3) and an infeasible scenario (4).
"""


class RecoveryError(Exception):
    """Base class for every error raised by this package."""


class InputError(RecoveryError, ValueError):
    """The caller supplied a configuration the pipeline cannot accept."""


class NumericalError(RecoveryError, ArithmeticError):
    """A numerical procedure hit a singularity or failed to converge."""


class InfeasibleError(RecoveryError):
    """The scenario has no safe solution inside the requested bounds."""


# -- input problems ---------------------------------------------------------

class ObstacleTouchesBoundary(InputError):
    pass


class ObstacleUnresolved(InputError):
    pass


class OutOfDomain(InputError):
    pass


class InsideObstacle(InputError):
    pass


class ScenarioError(InputError):
    pass


# -- numerical problems -----------------------------------------------------

class PoleSingularity(NumericalError):
    pass


class SolverDiverged(NumericalError):
    pass


class StagnationPoint(NumericalError):
    pass


class DriftExceeded(NumericalError):
    pass


class FitToleranceExceeded(NumericalError):
    pass


class GimbalLock(NumericalError):
    pass


class ThrustSingular(NumericalError):
    pass


class SingularDecoupling(NumericalError):
    pass


class InfeasibleWrench(NumericalError):
    pass


class BisectionBudgetExceeded(NumericalError):
    pass


# -- infeasible scenarios ---------------------------------------------------

class LowerBoundUnsafe(InfeasibleError):
    pass


class QuadFailure(RecoveryError):
    """Wraps an error raised while simulating one vehicle, naming it."""

    def __init__(self, quad_id, cause):
        super().__init__(f"quad {quad_id!r}: {type(cause).__name__}: {cause}")
        self.quad_id = quad_id
        self.cause = cause
