"""
Exception types shared across radarpose.

Every class also derives from the builtin it specialises so callers can keep
catching ValueError / RuntimeError.
"""

from typing import Optional


class RadarPoseError(Exception):
    """Base class for radarpose errors."""


class ConfigError(RadarPoseError, ValueError):
    """Invalid configuration value, unknown key or bad preset."""


class ShapeError(RadarPoseError, ValueError):
    """Array or tensor dimensions do not match what an operation expects."""


class FormatError(RadarPoseError, ValueError):
    """Malformed binary container (bad magic, version or length)."""


class NonFiniteError(RadarPoseError, FloatingPointError):
    """A tensor operation produced NaN or Inf."""


class CheckpointMismatchError(RadarPoseError, ValueError):
    """Checkpoint parameters do not fit the model built from the config."""


class TrainingError(RadarPoseError, RuntimeError):
    """Training aborted; ``step`` is the optimizer step that failed."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step
