class AffectForgeException(Exception):
    """Base exception for all affectforge errors"""

    exit_code = 1


class UsageError(AffectForgeException):
    """Invalid parameters or arguments supplied by the caller"""

    exit_code = 2


class ParameterError(UsageError, ValueError):
    pass


class BoundsError(ParameterError, IndexError):
    pass


class TractabilityError(ParameterError):
    """Requested computation exceeds a hard enumeration cap"""

    pass


class DataError(AffectForgeException):
    """Problems with input files, manifests or checkpoints"""

    exit_code = 3


class WavFormatError(DataError):
    pass


class UnsupportedAudioError(DataError):
    pass


class WavWriteError(DataError):
    pass


class ManifestError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericError(AffectForgeException):
    """Numeric failures inside signal processing or the network"""

    exit_code = 4


class NormalizationError(NumericError):
    pass


class ShapeError(NumericError, ValueError):
    pass


class ModelStateError(NumericError):
    pass
