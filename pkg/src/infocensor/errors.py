"""Exception hierarchy shared by all modules."""


class InfoCensorError(Exception):
    """Base class for every error raised by this package."""


# distributions -------------------------------------------------------------

class DistributionError(InfoCensorError, ValueError):
    pass


class NonNormalized(DistributionError):
    pass


class NegativeProb(DistributionError):
    pass


class DuplicateLabel(DistributionError):
    pass


class MismatchedSpaces(InfoCensorError, ValueError):
    pass


class ZeroPrior(InfoCensorError, ValueError):
    pass


class ZeroEvidence(InfoCensorError, ValueError):
    pass


class UnknownQuery(InfoCensorError, KeyError):
    pass


# exact enumeration / mechanisms ---------------------------------------------

class EnumerationTooLarge(InfoCensorError):
    def __init__(self, size, cap):
        super().__init__(f"enumeration of {size} histories exceeds cap {cap}")
        self.size = size
        self.cap = cap


class InvalidParams(InfoCensorError, ValueError):
    pass


class SafetySetAssumptionViolated(InfoCensorError):
    pass


class NotAnICM(InfoCensorError):
    pass


class ZeroBaselineUtility(InfoCensorError, ZeroDivisionError):
    pass


# attack / eval ---------------------------------------------------------------

class ParseFailure(InfoCensorError):
    pass


class BackendUnavailable(InfoCensorError):
    pass


class ScriptMiss(InfoCensorError):
    """A scripted backend received a prompt no rule matches."""


class BudgetExceeded(InfoCensorError):
    pass


class NonFiniteLogprob(InfoCensorError, ValueError):
    pass


class EmptyInput(InfoCensorError, ValueError):
    pass


class InsufficientData(InfoCensorError, ValueError):
    pass


class ConfigError(InfoCensorError):
    """Bad or inconsistent configuration; carries file/line context when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line
