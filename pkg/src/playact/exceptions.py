"""Exception hierarchy.

Every domain error derives from :class:`PlayactError`, so callers (and the
CLI) can tell domain failures apart from programming errors.
"""


class PlayactError(Exception):
    """Base class for all domain errors raised by this package."""


# datamodel
class ClipTooShort(PlayactError):
    pass


class EpochExhausted(PlayactError):
    pass


class SchemaError(PlayactError, ValueError):
    pass


class FormatError(PlayactError, ValueError):
    pass


# features
class EmptyImage(PlayactError, ValueError):
    pass


class AudioTooShort(PlayactError, ValueError):
    pass


class InsufficientFrames(PlayactError, ValueError):
    pass


# models / supervision / evaluation
class ShapeMismatch(PlayactError, ValueError):
    pass


class ChannelMismatch(ShapeMismatch):
    pass


class WeightShapeMismatch(ShapeMismatch):
    pass


class ThresholdOutOfRange(PlayactError, ValueError):
    pass


class MissingAuxiliary(PlayactError, ValueError):
    pass


class EmptyMap(PlayactError, ValueError):
    pass


class DivergenceDetected(PlayactError, RuntimeError):
    """Training produced a non-finite loss.

    ``last_good`` holds the most recent checkpoint with finite loss, or None
    if divergence happened during the first epoch.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class NoCheckpoints(PlayactError, ValueError):
    pass


class NoValidClips(PlayactError, ValueError):
    pass


class EmptyKeypoints(PlayactError, ValueError):
    pass


class NoBoxes(PlayactError, ValueError):
    pass


class NoPositiveFrames(PlayactError, ValueError):
    pass


class SpecError(PlayactError, ValueError):
    pass


class ConfigError(PlayactError, ValueError):
    pass
