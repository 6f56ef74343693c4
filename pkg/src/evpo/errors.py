"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Arguments violate a documented precondition."""


class UndefinedGainError(ZeroDivisionError):
    """Kalman gain requested for a regime with p_a + p_b = 0."""


class UndefinedEVError(ZeroDivisionError):
    """Population explained variance requested with p_b + r = 0."""


class GenerationError(RuntimeError):
    """No solvable layout could be generated for an environment config."""


class InvalidTransitionError(RuntimeError):
    """A terminal environment state was stepped."""


class ConfigError(ValueError):
    """Malformed configuration document or override.

    ``line`` and ``column`` are 1-based and ``None`` when the error is not
    tied to a position in a file.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
