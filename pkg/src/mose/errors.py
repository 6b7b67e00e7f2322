"""Exception hierarchy shared by all mose modules.

Each class maps to a process exit code so the CLI can report failures
uniformly: usage/state problems exit 1, data/format problems exit 2,
numeric failures exit 3.
"""


class MoseError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(MoseError):
    """Invalid configuration value or inconsistent option combination."""

    exit_code = 1


class StateError(MoseError):
    """Operation invoked in the wrong order (e.g. ensemble not fitted)."""

    exit_code = 1


class ParseError(MoseError):
    """Malformed triple file line."""

    exit_code = 2

    def __init__(self, message, path=None, line_number=None):
        self.path = path
        self.line_number = line_number
        if path is not None and line_number is not None:
            message = f"{path}:{line_number}: {message}"
        super().__init__(message)


class VocabularyError(MoseError):
    """Name not present in a vocabulary operating in strict mode."""

    exit_code = 2


class FormatError(MoseError):
    """Corrupt or inconsistent binary file (feature file, checkpoint)."""

    exit_code = 2


class ValidationError(MoseError):
    """Well-formed input that violates a semantic constraint."""

    exit_code = 2


class NumericError(MoseError):
    """Non-finite loss or parameter encountered during optimization."""

    exit_code = 3
