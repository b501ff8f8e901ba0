"""Exception types raised by the estimators."""


class HdlmmError(Exception):
    """Base class for package errors."""


class NumericalError(HdlmmError, ArithmeticError):
    """A computation could not produce a meaningful number."""


class ConvergenceError(NumericalError):
    """An iterative routine hit its iteration cap."""


class IdentifiabilityError(NumericalError):
    """The design leaves the target effect unidentifiable (e.g. n_a = 0)."""
