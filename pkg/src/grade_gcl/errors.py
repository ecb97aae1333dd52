"""Exception types shared across the package.

The CLI maps these onto exit codes: user-fixable problems (bad files, bad
config, bad usage) exit 1, anything else exits 2.
"""


class GradeError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(GradeError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class ValidationError(GradeError):
    """Input data violates a structural requirement."""


class ConfigError(GradeError):
    """A configuration value is out of range or inconsistent."""


class UsageError(GradeError):
    """An API or CLI call is malformed (missing argument, unknown mode)."""


class TrainingDiverged(GradeError):
    """Training produced a non-finite objective; carries the log so far."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log
