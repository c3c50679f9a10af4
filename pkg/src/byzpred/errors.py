"""Exception types shared across the simulator."""


class ConfigurationError(ValueError):
    """A scenario or protocol parameter violates a precondition."""


class ProtocolViolation(RuntimeError):
    """An honest process attempted an ill-formed action (internal bug detection)."""


class ScenarioFileError(ValueError):
    """A scenario file failed to parse or expand."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column
