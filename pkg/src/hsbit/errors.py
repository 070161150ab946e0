"""Exception types shared across the package.

The CLI maps these onto exit codes, so every raise site should pick the
narrowest class that applies.
"""


class HsbitError(Exception):
    """Base class for all package errors."""


class DimensionError(HsbitError, ValueError):
    """Array shapes do not agree with what an operation needs."""


class UsageError(HsbitError, ValueError):
    """An argument is outside its documented domain."""


class ConfigError(HsbitError, ValueError):
    """A model, scene or preset configuration is invalid."""


class GenerationError(HsbitError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class SliceError(HsbitError, ValueError):
    """A scene cannot be split into train/validation/test slices."""


class FormatError(HsbitError, ValueError):
    """A binary or text file does not match its declared format."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        parts = [message]
        if offset is not None:
            parts.append(f"at byte offset {offset}")
        if path is not None:
            parts.append(f"in {path}")
        super().__init__(" ".join(parts))


class PresetError(HsbitError, ValueError):
    """An experiment preset cannot run on the given data."""


class NumericalError(HsbitError, ArithmeticError):
    """Training produced a non-finite loss."""
