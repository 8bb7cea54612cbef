"""Exception types shared across the package."""


class RecistError(Exception):
    """Base class for errors raised by this package."""


class InvalidParameterError(RecistError, ValueError):
    """A transform parameter or input tensor is outside its valid domain."""


class DegenerateAnnotationError(RecistError, ValueError):
    """An annotation has coincident endpoints or zero-length diameters."""


class ManifestError(RecistError, ValueError):
    """A manifest file could not be parsed. Carries the offending row."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class CheckpointError(RecistError):
    """A checkpoint archive is unreadable or structurally broken."""


class IncompatibleCheckpointError(CheckpointError):
    """A checkpoint was produced under a different model configuration."""


class NonFiniteLossError(RecistError):
    """Training produced a NaN or infinite loss."""


class ValidationError(RecistError, ValueError):
    """A request input failed validation. Carries the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class NotFittedError(RecistError, RuntimeError):
    """predict() was called before fit() or load()."""
