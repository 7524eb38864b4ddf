"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ArgumentError(ValueError):
    """An argument is outside its accepted domain."""


class ContractViolation(ValueError):
    """An input breaks a documented precondition (e.g. unnormalized softmax rows)."""


class ConfigError(ValueError):
    """A model or run configuration is invalid.

    ``field`` carries the dotted path of the offending entry when known.
    """

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class NumericFault(ArithmeticError):
    """A non-finite value appeared; ``layer`` names where it was first seen."""

    def __init__(self, message, layer=None):
        super().__init__(f"{message} (layer: {layer})" if layer else message)
        self.layer = layer


class IngestionError(OSError):
    """Dataset file missing or malformed."""

    def __init__(self, message, path=None, offset=None):
        where = ""
        if path is not None:
            where = f" [{path}" + (f" @ byte {offset}" if offset is not None else "") + "]"
        super().__init__(message + where)
        self.path = path
        self.offset = offset


class CorruptionError(ValueError):
    """Checkpoint failed its integrity check."""


class VersionError(ValueError):
    """Checkpoint container version is not supported."""


class UnsupportedError(NotImplementedError):
    """Feature is deliberately not implemented."""
