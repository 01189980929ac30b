"""
errors.py — Exception hierarchy shared by the library and the harness.
"""
from __future__ import annotations


class NetPGDError(Exception):
    """Base class for every error raised on purpose by this package."""


class ShapeError(NetPGDError, ValueError):
    """Operand shapes do not agree."""


class ProjectionDivergedError(NetPGDError):
    """The inner projection loss blew past the divergence threshold."""

    def __init__(self, iteration: int, loss: float, initial_loss: float):
        self.iteration = iteration
        self.loss = loss
        self.initial_loss = initial_loss
        super().__init__(
            f"projection diverged at inner iteration {iteration}: "
            f"loss {loss:.4g} (start {initial_loss:.4g})"
        )


class SolverError(NetPGDError):
    """Non-finite losses or measurement data a solver cannot accept."""


class RecCheckError(NetPGDError, ValueError):
    """Set-REC check requested on a decoder whose range is not a union of subspaces."""


class ImageFormatError(NetPGDError, ValueError):
    """Unsupported or inconsistent image file."""


class ConfigError(NetPGDError, ValueError):
    """Invalid experiment or decoder configuration."""
