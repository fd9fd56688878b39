"""Exception types shared across the pipeline."""

from __future__ import annotations


class LayoutLoopError(Exception):
    """Base class for every error raised by this package."""


class LabelError(LayoutLoopError):
    """An object label string does not match the label grammar."""


class GrammarError(LayoutLoopError):
    """A model reply could not be parsed.

    Carries the byte offset into the reply where parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class RangeViolation(LayoutLoopError):
    """A proposed coordinate is far outside the unit square (hallucinating controller)."""


class TransportError(LayoutLoopError):
    """The chat endpoint stayed unreachable after the retry budget."""


class AuthError(LayoutLoopError):
    """The chat endpoint rejected the configured credentials."""


class BackendUnavailable(LayoutLoopError):
    """The generation/detection backend could not be reached."""


class UnknownImage(LayoutLoopError):
    """An image handle does not resolve on the backend."""


class UnmappableQuery(LayoutLoopError):
    """A detection's query string does not map back to any parsed object."""


class BackendFailure(LayoutLoopError):
    """The backend reached but a latent operation failed server-side."""


class EmptyMask(LayoutLoopError):
    """Segmentation returned no cells for an edit region."""


class DegenerateTarget(LayoutLoopError):
    """A reposition target is smaller than one latent cell."""


class ShapeMismatch(LayoutLoopError):
    """Masks or latent grids disagree with the backend's latent dimensions."""


class Unsatisfiable(LayoutLoopError):
    """A task's constraints cannot all hold at once."""


class EmptyTask(LayoutLoopError):
    """An accuracy aggregate was requested for a task type with zero cases."""
