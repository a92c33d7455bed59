"""Exception hierarchy shared by every module."""


class MVCLError(ValueError):
    """Base class for all library errors."""


class InvalidShape(MVCLError):
    pass


class ZeroRow(MVCLError):
    pass


class NonFinite(MVCLError):
    pass


class NegativeConcentration(MVCLError):
    pass


class BadHeader(MVCLError):
    pass


class ShapeMismatch(MVCLError):
    pass


class OutOfDomain(MVCLError):
    pass


class BadParameter(MVCLError):
    pass


class NotUnitNorm(MVCLError):
    pass


class TooFewInstances(MVCLError):
    pass


class WrongViewCount(MVCLError):
    pass


class UnknownLoss(MVCLError):
    pass


class Diverged(MVCLError, ArithmeticError):
    pass


class ZeroProjection(MVCLError):
    pass


class TooFewRows(MVCLError):
    pass


class TooFewSamples(MVCLError):
    pass


class SvdFailure(MVCLError, ArithmeticError):
    pass


class SizeGuard(MVCLError):
    pass
