"""
Exception hierarchy for the deblur GAN workbench.

Input validation errors also subclass ValueError, so callers can keep catching
ValueError the way the service layer always has.
"""

from typing import Optional, Sequence


class DeblurGanError(Exception):
    """Base class for every error raised by this package."""


class ImageError(DeblurGanError, ValueError):
    """An image violates the pixel or tensor invariants."""


class PatchError(DeblurGanError, ValueError):
    """A patch plan or patch set is inconsistent with its source image."""


class ShapeError(DeblurGanError, ValueError):
    """A tensor handed to a network has the wrong shape."""


class ArchitectureError(DeblurGanError, ValueError):
    """A layer table or architecture spec breaks its invariants."""


class LossError(DeblurGanError, ValueError):
    """Loss inputs are empty, mismatched or out of range."""


class BlurError(DeblurGanError, ValueError):
    """A motion blur kernel cannot be built or applied."""


class MetricError(DeblurGanError, ValueError):
    """Metric inputs are mismatched or too small."""


class DatasetError(DeblurGanError, ValueError):
    """A dataset tree is empty, malformed or has unpaired files."""

    def __init__(self, message: str, orphans: Optional[Sequence[str]] = None):
        super().__init__(message)
        self.orphans = list(orphans or [])


class ConfigError(DeblurGanError, ValueError):
    """A configuration key or value is invalid."""

    def __init__(self, message: str, valid_keys: Optional[Sequence[str]] = None):
        super().__init__(message)
        self.valid_keys = list(valid_keys or [])


class CheckpointError(DeblurGanError):
    """A checkpoint file is unreadable, truncated or corrupt."""


class TrainingAbortedError(DeblurGanError):
    """Training hit a non-finite loss; `report` is the offending step."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
