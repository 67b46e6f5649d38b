"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class MaskError(ValueError):
    """A mask is not binary-valued."""


class EmptyMaskError(ValueError):
    """A mask has no foreground pixel where at least one is required."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class FormatError(ValueError):
    """A file does not follow the expected on-disk format."""


class TruncatedFileError(OSError):
    """A file ends before its declared payload does."""


class InvariantError(RuntimeError):
    """An internal consistency check failed (e.g. a kernel disagrees with its oracle)."""
