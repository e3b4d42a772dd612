"""Exception hierarchy shared by all modules."""


class ControlSetsError(Exception):
    """Base class for every error raised by this package."""


# expressions

class ExprSyntaxError(ControlSetsError):
    """Malformed expression text.  ``position`` is the 0-based offset of the offending token."""

    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownIdentifier(ControlSetsError):
    def __init__(self, name, position=None):
        where = "" if position is None else f" at position {position}"
        super().__init__(f"unknown identifier {name!r}{where}")
        self.name = name
        self.position = position


class UnboundVariable(ControlSetsError):
    def __init__(self, name):
        super().__init__(f"variable {name!r} is not bound")
        self.name = name


class EvalDomainError(ControlSetsError, ArithmeticError):
    pass


# integration

class StepSizeUnderflow(ControlSetsError):
    pass


class Divergence(ControlSetsError):
    pass


# analysis

class NoConvergence(ControlSetsError):
    pass


class JacobianSingular(ControlSetsError):
    pass


class ContinuationBreak(ControlSetsError):
    pass


class TailNotDecayed(ControlSetsError):
    pass


class NoHyperbolicSplit(ControlSetsError):
    pass


class LeftWindowImmediately(ControlSetsError):
    pass


class NoCrossing(ControlSetsError):
    pass


class NotTransverse(ControlSetsError):
    pass


class NoReturn(ControlSetsError):
    pass


class EmptyInput(ControlSetsError, ValueError):
    pass


# grid computations

class EmptySeeds(ControlSetsError, ValueError):
    pass


class NoControls(ControlSetsError, ValueError):
    pass


class EmptyControlSet(ControlSetsError):
    pass


class NoClosedPath(ControlSetsError):
    pass


class ShootingFailed(ControlSetsError):
    pass


class TubeExceeded(ControlSetsError):
    pass


class GridMismatch(ControlSetsError, ValueError):
    pass


# scenarios / configuration

class UnknownScenario(ControlSetsError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ConfigSyntax(ControlSetsError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigValidation(ControlSetsError):
    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
