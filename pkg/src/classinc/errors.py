"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class DegenerateWeightsError(ArithmeticError):
    """Weight norms are zero where a ratio or normalization needs them."""


class InvalidStateError(RuntimeError):
    """An operation was called in a state that does not support it."""


class ProtocolError(RuntimeError):
    """The incremental protocol was violated (e.g. data does not match the schedule)."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown or invalid.

    ``field`` is the dotted key path and ``line`` the 1-based line in the
    source file when it could be located.
    """

    def __init__(self, field, message, line=None):
        self.field = field
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{field}{where}: {message}")
