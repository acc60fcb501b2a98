"""Exception hierarchy shared by all nearfield modules."""


class NearfieldError(Exception):
    """Base class for all errors raised by this package."""


class DataError(NearfieldError):
    """Input data is malformed or inconsistent (CLI exit code 2)."""


class NumericalError(NearfieldError):
    """A numerical procedure failed or was ill-posed (CLI exit code 3)."""


class FormatError(DataError):
    pass


class NonRectangular(DataError):
    pass


class EmptyMap(DataError):
    pass


class UnknownPreset(DataError):
    pass


class UnknownLevel(DataError):
    pass


class TooCloseToWire(NumericalError):
    pass


class DegenerateGradient(NumericalError):
    pass


class AmbiguousPhase(NumericalError):
    pass


class Underdetermined(NumericalError):
    pass


class IllConditioned(NumericalError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class NoInteriorMinimum(NumericalError):
    pass


class NoSignChange(NumericalError):
    pass


class ResonanceProximity(NumericalError):
    def __init__(self, message, detuning=None, node=None):
        super().__init__(message)
        self.detuning = detuning
        self.node = node


class AmbiguousConnection(NumericalError):
    pass


class NotConverged(NumericalError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class RankDeficient(NumericalError):
    def __init__(self, message, combination=None):
        super().__init__(message)
        self.combination = combination
