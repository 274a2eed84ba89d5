"""Exception hierarchy shared by every module in the package."""


class PrefixStatsError(Exception):
    """Base class for all package errors."""


class OutOfDomain(PrefixStatsError, ValueError):
    pass


class DegenerateInterval(PrefixStatsError, ValueError):
    pass


class InvalidConfig(PrefixStatsError, ValueError):
    pass


class ShapeMismatch(PrefixStatsError, ValueError):
    pass


class NonFiniteGradient(PrefixStatsError, FloatingPointError):
    pass


class NonFiniteLoss(PrefixStatsError, FloatingPointError):
    pass


class NonPositiveLogArgument(PrefixStatsError, ValueError):
    pass


class MissingPredictor(PrefixStatsError, ValueError):
    pass


class StatNetMismatch(PrefixStatsError, ValueError):
    pass


class BracketInvalid(PrefixStatsError, ValueError):
    pass


class EmptyDataset(PrefixStatsError, ValueError):
    pass


class ZeroReference(PrefixStatsError, ZeroDivisionError):
    pass


class CheckpointError(PrefixStatsError, ValueError):
    pass
