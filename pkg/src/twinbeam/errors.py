"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so new error types should
subclass one of the three roots below rather than ValueError directly.
"""


class TwinbeamError(Exception):
    """Base class for all package errors."""


class ParameterError(TwinbeamError):
    """A physical or configuration parameter is out of its valid range."""


class ConfigError(ParameterError):
    """A run configuration file or CLI flag is invalid (exit code 2)."""


class DataFormatError(TwinbeamError):
    """An input data file is missing, truncated or malformed (exit code 3)."""

    def __init__(self, message, path=None, line=None):
        if path is not None:
            where = f"{path}:{line}" if line is not None else str(path)
            message = f"{where}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class NumericalError(TwinbeamError):
    """A numerical routine could not certify its result (exit code 4)."""


class NumericalInstabilityError(NumericalError):
    """The detector-response sum lost all significant digits.

    Carries the (count, photon) pair at which the evaluation failed so the
    caller can switch to a higher-precision path or tighter truncation.
    """

    def __init__(self, c, n, message=""):
        detail = message or "alternating sum could not be certified"
        super().__init__(f"detection response unstable at c={c}, n={n}: {detail}")
        self.c = c
        self.n = n


class TruncationError(NumericalError):
    """A distribution could not be truncated to the requested tail mass.

    ``suggested_n_max`` is the smallest cutoff that would have met the
    tolerance, or None if the search cap was reached.
    """

    def __init__(self, message, suggested_n_max=None):
        if suggested_n_max is not None:
            message = f"{message} (suggested n_max: {suggested_n_max})"
        super().__init__(message)
        self.suggested_n_max = suggested_n_max
