class VerificationError(Exception):
    """Base class for every error raised by the trimodal package."""


class ManifestError(VerificationError):
    pass


class ConfigError(VerificationError):
    pass


class CorruptionError(VerificationError):
    pass


class FeatureError(VerificationError):
    pass


class ShapeError(VerificationError):
    pass


class NumericalError(VerificationError):
    """Raised when a forward pass or a loss produces non-finite values."""


class FusionError(VerificationError):
    pass


class TrainingError(VerificationError):
    pass


class CheckpointError(VerificationError):
    pass


class TrialError(VerificationError):
    pass


class MetricError(VerificationError):
    pass
