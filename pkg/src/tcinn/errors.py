"""Exception hierarchy shared by every tcinn subpackage."""


class TCINNError(Exception):
    """Base class for all engine errors."""


class ValidationError(TCINNError, ValueError):
    """An argument, configuration value or precondition was rejected."""


class ShapeError(ValidationError):
    """Tensor shapes or channel counts disagree."""


class SingularMatrixError(TCINNError):
    """A 1x1 convolution matrix is (numerically) singular."""


class NumericalError(TCINNError, ArithmeticError):
    """A loss, gradient or layer output stopped being finite."""

    def __init__(self, message, *, epoch=None, batch=None, parameter=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.parameter = parameter


class EmptySupportError(ValidationError):
    """A masked reduction had no element to reduce over."""


class TensorFileError(TCINNError):
    """Base class for container decoding failures."""


class BadMagicError(TensorFileError):
    pass


class UnsupportedVersionError(TensorFileError):
    pass


class ChecksumError(TensorFileError):
    pass


class PayloadMismatchError(TensorFileError):
    pass


class CheckpointError(TCINNError):
    """A checkpoint could not be decoded into engine state."""


class ConfigMismatchError(CheckpointError, ValidationError):
    """A checkpoint's model config disagrees with the requested one."""


class ManifestError(TCINNError):
    """A dataset manifest is malformed or references unusable files."""
