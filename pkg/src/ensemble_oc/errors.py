"""Exception types raised across the package."""


class EnsembleError(Exception):
    """Base class for all package errors."""


class DimensionError(EnsembleError, ValueError):
    """Shapes or grids of two objects do not agree."""


class CapabilityError(EnsembleError, TypeError):
    """The problem lacks a structural property the operation needs (e.g. linearity)."""


class DivergenceError(EnsembleError, ArithmeticError):
    """A trajectory or costate left the finite range.

    Attributes:
        member: index of the offending ensemble member.
        time: integration time at which the blow-up was detected.
    """

    def __init__(self, member, time, what="state", context=""):
        self.member = int(member)
        self.time = float(time)
        self.what = what
        self.context = context
        msg = f"{what} of member {self.member} diverged at t={self.time:.6g}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class ConfigError(EnsembleError, ValueError):
    """Invalid run configuration; carries the offending key and line when known."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = ""
        if line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
