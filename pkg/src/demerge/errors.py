"""Exception types shared across the package."""


class DemergeError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(DemergeError):
    """Malformed or structurally invalid DEMCKPT data."""


class IntegrityError(DemergeError):
    """Checksum mismatch: the file content does not match its declared CRC."""


class IoError(DemergeError):
    """Underlying I/O failure while reading or writing a checkpoint."""


class CompatibilityError(DemergeError):
    """Two checkpoints do not share an identical (name, dtype, shape) set."""

    def __init__(self, message: str, mismatches: list[str] | None = None):
        super().__init__(message)
        self.mismatches = mismatches or []


class ConfigError(DemergeError):
    """Invalid weight configuration, labels, or user-supplied parameters."""


class NumericsError(DemergeError):
    """A non-finite value appeared where a finite result is required."""

    def __init__(self, message: str, tensor_name: str | None = None,
                 flat_index: int | None = None):
        super().__init__(message)
        self.tensor_name = tensor_name
        self.flat_index = flat_index


class DegenerateInput(DemergeError):
    """Input is degenerate for the requested operation (e.g. zero norm)."""


class EvaluatorError(DemergeError):
    """The external evaluator violated its protocol."""

    def __init__(self, message: str, stderr: str | None = None):
        super().__init__(message)
        self.stderr = stderr


class SearchFailed(DemergeError):
    """Every trial of a weight search failed; no result can be reported."""


class WeightRangeWarning(UserWarning):
    """A merge weight is outside the conventional [0, 1] range."""
