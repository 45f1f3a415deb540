"""Exception hierarchy shared by all dula modules."""


class DulaError(Exception):
    """Base class for every error raised by this package."""


class InvalidTopologyError(DulaError, ValueError):
    pass


class InvalidParameterError(DulaError, ValueError):
    pass


class InvalidScheduleError(DulaError, ValueError):
    pass


class NumericInputError(DulaError, ValueError):
    pass


class ParseError(DulaError, ValueError):
    """Malformed input text. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(DulaError, ValueError):
    pass


class BoundUnavailableError(DulaError):
    """The closed-form consensus bound is undefined for the given schedule."""


class DivergenceError(DulaError, FloatingPointError):
    """A chain produced a non-finite coordinate.

    ``log`` holds whatever was recorded before the failure, so callers can
    still flush partial output.
    """

    def __init__(self, iteration, agent, log=None):
        self.iteration = iteration
        self.agent = agent
        self.log = log
        super().__init__(f"non-finite state at iteration {iteration}, agent {agent}")
