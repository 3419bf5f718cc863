"""Exception types shared across the package."""


class TdcError(Exception):
    """Base class for all package errors."""


class DimensionError(TdcError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigurationError(TdcError):
    """A config value is invalid or inconsistent with the model/data."""


class DataError(TdcError):
    """Dataset contents violate an invariant (inconsistent N, bad label, ...)."""


class ParseError(TdcError):
    """A file on disk could not be parsed."""


class CheckpointError(TdcError):
    """A checkpoint file is missing, corrupt, or incompatible."""


class VariantError(TdcError):
    """The model variant does not support the requested operation."""


class NonFiniteError(TdcError):
    """A NaN or Inf appeared in tensor values or gradients."""
