"""Exception types shared across the package.

Every error raised on a user-facing path carries a message that names the
offending value, so CLI and service layers can surface it verbatim.
"""


class LgmError(Exception):
    """Base class for all package errors."""


class ShapeError(LgmError):
    """An operand shape does not satisfy a kernel or block contract."""


class ConfigError(LgmError):
    """A model configuration is malformed or internally inconsistent."""


class WeightFileError(LgmError):
    """A weight file cannot be read. Base for the specific kinds below."""


class WeightMagicError(WeightFileError):
    """File does not start with the expected magic bytes."""


class WeightVersionError(WeightFileError):
    """File declares an unsupported format version."""


class WeightTruncatedError(WeightFileError):
    """File ends before the declared payload is complete."""


class WeightMismatchError(WeightFileError):
    """Loaded tensors do not line up with the target model's parameters."""


class ImageFormatError(LgmError):
    """An input image file is not in a supported format."""


class TrainingDivergedError(LgmError):
    """A non-finite loss was produced during optimisation."""
