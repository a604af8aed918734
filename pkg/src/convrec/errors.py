"""Exception types shared across the package."""


class ConvrecError(Exception):
    """Base class for package errors."""


class ShapeError(ConvrecError, ValueError):
    """Operand shapes are incompatible with an operation's contract."""


class NumericDomainError(ConvrecError, ValueError):
    """A numeric input left its legal domain (non-finite, sigma <= 0, ...)."""


class ConfigError(ConvrecError, ValueError):
    """A configuration value is out of range or inconsistent."""


class IngestError(ConvrecError, ValueError):
    """Raw input files violate the documented formats."""


class CheckpointError(ConvrecError, ValueError):
    """A serialized artifact is corrupt or has an unsupported version."""


class SessionError(ConvrecError, ValueError):
    """A critiquing session operation violates its preconditions."""
