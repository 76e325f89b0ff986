"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class FdnmlError(Exception):
    exit_code = 5


class ConfigError(FdnmlError, ValueError):
    exit_code = 2


class DataError(FdnmlError, ValueError):
    exit_code = 3


class NumericalError(FdnmlError, ArithmeticError):
    exit_code = 4


class StageError(FdnmlError):
    """A pipeline stage failed; ``stage`` names it."""

    exit_code = 5

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
