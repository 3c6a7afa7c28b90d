"""Exception types shared across the pipeline; the CLI maps them to exit codes."""


class DataError(ValueError):
    """Bad or missing input data (exit code 3)."""


class SizingError(DataError):
    """A split request does not fit the corpus."""


class LengthError(DataError):
    """A sequence exceeds the configured maximum length."""


class VocabMismatchError(DataError):
    """Checkpoint and data were encoded with different vocabularies."""


class NumericError(ArithmeticError):
    """Non-finite values during training or checking (exit code 4)."""
