"""Exception hierarchy shared by every module.

Argument problems raise ``ValueError`` subclasses; numerical trouble raises
``NumericFailure`` subclasses. The CLI maps the first to exit code 1 and the
second to exit code 2.
"""


class AmoError(Exception):
    """Base class for toolkit errors."""


class NumericFailure(AmoError):
    """A computation could not deliver a certified result."""


class ValidationError(AmoError, ValueError):
    """Inputs violate an operation's preconditions."""


# arithmetic
class PrecisionExhausted(NumericFailure):
    pass


class ScaleOutOfRange(ValidationError):
    pass


# cocycle
class QuadratureUnstable(NumericFailure):
    pass


class SingularNode(NumericFailure):
    pass


# rational spectrum
class ThetaDependenceDetected(NumericFailure):
    pass


class RootCountMismatch(NumericFailure):
    pass


# m-function
class LeftHalfConvergence(NumericFailure):
    pass


class DegenerateM(NumericFailure):
    pass


class BranchUnwrapFailure(NumericFailure):
    pass


class SmallDivisorOverflow(NumericFailure):
    """Raised when a retained Fourier mode has a vanishing divisor.

    ``modes`` lists the offending frequencies and ``result`` carries the
    solution computed with those coefficients dropped.
    """

    def __init__(self, modes, result=None):
        super().__init__(f"small divisor at k = {list(modes)}")
        self.modes = list(modes)
        self.result = result


# localization
class InverseIterationStall(NumericFailure):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NearSingularWindow(NumericFailure):
    pass


class NoDecayDetected(NumericFailure):
    def __init__(self, message, slope=None, r2=None):
        super().__init__(message)
        self.slope = slope
        self.r2 = r2


# trig estimates
class DegenerateNode(NumericFailure):
    pass


class PreconditionViolated(ValidationError):
    pass


class CoincidentNodes(NumericFailure):
    pass


# duality
class InsufficientDecay(NumericFailure):
    pass


# cli
class UnknownCommand(ValidationError):
    pass


class ConfigInvalid(ValidationError):
    pass


class CacheCorrupt(AmoError):
    pass
