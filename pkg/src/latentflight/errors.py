"""Exception types shared across the package.

Plain ``ValueError`` is used for invalid arguments throughout; the classes
here cover failures that callers are expected to route on.
"""


class LatentFlightError(Exception):
    """Base class for package-specific failures."""


class ConfigurationError(LatentFlightError):
    """A backend or service is misconfigured (missing artifact, bad tap id)."""


class DegenerateInputError(ValueError):
    """An input is structurally valid but leaves the operation undefined."""


class PipelineStageError(LatentFlightError):
    """A pipeline stage failed; carries the stage name for error reports."""

    def __init__(self, stage: str, message: str, *, frame_index: int | None = None):
        self.stage = stage
        self.frame_index = frame_index
        prefix = f"[{stage}]" if frame_index is None else f"[frame {frame_index}/{stage}]"
        super().__init__(f"{prefix} {message}")


class TrajectoryError(LatentFlightError):
    """A trajectory run failed part-way; partial frames are attached."""

    def __init__(self, frame_index: int, cause: Exception, frames):
        self.frame_index = frame_index
        self.cause = cause
        self.frames = frames
        super().__init__(f"trajectory failed at frame {frame_index}: {cause}")
