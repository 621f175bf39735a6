"""Exception types shared across the package."""


class RadarLCDError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(RadarLCDError, ValueError):
    """An argument violates a documented precondition."""


class NonFiniteError(InvalidInputError):
    """Input contains NaN or infinite values."""


class DimensionMismatchError(InvalidInputError):
    """Array shapes or header dimensions disagree."""


class BadMagicError(InvalidInputError):
    """A binary file does not start with the expected magic bytes."""


class SingleClassError(InvalidInputError):
    """A labelled set contains only one class where two are required."""


class EmptyMaskError(InvalidInputError):
    """No sample survives a mask."""


class AllPointsFilteredError(InvalidInputError):
    """Keypoint filtering removed every point."""


class DegenerateDescriptorError(InvalidInputError):
    """A descriptor has zero norm and cannot be compared."""


class SplitMismatchError(InvalidInputError):
    """Inputs do not come from the same dataset split."""


class ConfigError(RadarLCDError):
    """Configuration file or value is invalid."""


class MissingArtifactError(RadarLCDError):
    """An upstream pipeline stage has not produced its output."""

    def __init__(self, stage: str, path):
        super().__init__(f"stage '{stage}' output missing: {path}")
        self.stage = stage
        self.path = path


class ConfigHashMismatchError(RadarLCDError):
    """An upstream artifact was produced with a different configuration."""
