"""Exception and warning types shared across the package."""


class BoundsViolationError(ValueError):
    """A joint rotation offset lies outside its configured bounds."""


class BehindCameraError(ValueError):
    """A 3D point sits at or behind the near plane and cannot be projected."""


class LowVisibilityError(RuntimeError):
    """Too few visible joints in a frame to fit the window."""


class DivergenceError(RuntimeError):
    """An optimization produced a non-finite loss."""


class TrackLostError(RuntimeError):
    """A track could not be re-identified within the retry budget."""


class FormatVersionError(ValueError):
    """An input file declares an unsupported schema version."""


class UndefinedMetricError(ValueError):
    """The requested metric is undefined for the given inputs."""


class BoundsClampWarning(UserWarning):
    """Offsets violated their bounds within tolerance and were clamped."""
