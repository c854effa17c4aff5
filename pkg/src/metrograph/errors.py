"""Exception hierarchy shared across metrograph."""

from __future__ import annotations

__all__ = [
    "MetrographError",
    "GraphFormatError",
    "ModelMismatchError",
    "NumericalError",
]


class MetrographError(Exception):
    """Base class for every error raised by this package."""


class GraphFormatError(MetrographError, ValueError):
    """A graph or measure description failed validation.

    The message starts with the location of the offending entry,
    e.g. ``segments[2].length: nonpositive length``.
    """


class ModelMismatchError(MetrographError, ValueError):
    """Two objects that must live on the same model do not."""


class NumericalError(MetrographError, RuntimeError):
    """A numerical postcondition failed (singular system, bad residual, ...)."""
