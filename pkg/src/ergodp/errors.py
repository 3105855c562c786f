"""Exception types shared across the solver."""


class ErgodpError(Exception):
    """Base class for all library errors."""


class ExprSyntaxError(ErgodpError):
    """Raised when expression source cannot be parsed.

    Carries the byte offset of the failure and the set of token kinds
    that would have been accepted there.
    """

    def __init__(self, message, offset, expected=()):
        super().__init__(f"{message} at offset {offset}" + (f" (expected {', '.join(sorted(expected))})" if expected else ""))
        self.offset = offset
        self.expected = frozenset(expected)


class UnknownIdentifier(ErgodpError):
    def __init__(self, name, offset):
        super().__init__(f"unknown identifier '{name}' at offset {offset}")
        self.name = name
        self.offset = offset


class DomainError(ErgodpError):
    """log/sqrt of a negative argument during expression evaluation."""


class ConfigError(ErgodpError):
    """Malformed or inconsistent problem configuration."""


class InvalidGrid(ErgodpError):
    pass


class OutOfDomain(ErgodpError):
    pass


class AssemblyError(ErgodpError):
    pass


class StepTooLarge(ErgodpError):
    def __init__(self, h, h_max):
        super().__init__(
            f"time step h={h:g} lets the explicit control transport produce "
            f"negative masses; largest admissible step is h={h_max:g}"
        )
        self.h = h
        self.h_max = h_max


class PositivityViolation(ErgodpError):
    pass


class LinearSolveFailure(ErgodpError):
    pass


class NoConvergence(ErgodpError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class InsufficientData(ErgodpError):
    pass


class MissingQ(ErgodpError):
    pass


class PNotPositive(ErgodpError):
    pass


class GridMismatch(ErgodpError):
    pass
