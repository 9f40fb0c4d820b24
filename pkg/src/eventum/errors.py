"""Exception hierarchy for the simulator."""


class EventumError(Exception):
    """Base class for all simulator errors."""


class ShapeMismatch(EventumError, ValueError):
    pass


class NonHermitianHamiltonian(EventumError, ValueError):
    pass


class DiagonalCoupling(EventumError, ValueError):
    pass


class IndexOutOfRange(EventumError, IndexError):
    pass


class ZeroRate(EventumError, ValueError):
    """Jump probabilities were requested for a dark state."""


class StepRejected(EventumError, ArithmeticError):
    pass


class RetryCapExceeded(EventumError, ArithmeticError):
    pass


class InvalidDistribution(EventumError, ValueError):
    pass


class ZeroPostJumpNorm(EventumError, ArithmeticError):
    pass


class ToleranceBreach(EventumError, ArithmeticError):
    pass


class DimMismatch(EventumError, ValueError):
    pass


class HorizonExceeded(EventumError, ValueError):
    pass


class GridTooCoarse(EventumError, ValueError):
    pass


class NonCommensurateTime(EventumError, ValueError):
    pass


class NotIsometry(EventumError, ValueError):
    pass


# Errors that mean the numerics gave up, as opposed to bad input.
NUMERICAL_ERRORS = (StepRejected, RetryCapExceeded, ZeroPostJumpNorm, ToleranceBreach)
