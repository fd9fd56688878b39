"""Normalized box geometry, the object label grammar, and spatial predicates.

All coordinates are fractions of the image size: a box is (x, y, w, h) with
the origin at the top-left corner and x growing rightward, y downward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .errors import LabelError

logger = logging.getLogger(__name__)

# Smallest side a clamped box may have; keeps w > 0 and h > 0 for any raw input.
MIN_SIDE = 1e-3

# Default per-coordinate tolerance for treating two boxes as the same placement.
DEFAULT_EPS = 0.02

RELATIONS = ("left_of", "right_of", "above", "below")
PREDICATE_MODES = ("extent", "center")


@dataclass(frozen=True)
class BoundingBox:
    """An axis-aligned box in normalized [0, 1] coordinates.

    Construction clamps any raw quadruple into the unit square: sides are
    forced into [MIN_SIDE, 1] first, then the position is shifted so the box
    stays inside the frame. Out-of-range inputs are logged, not rejected,
    because detectors routinely emit slightly out-of-frame boxes.
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        x, w = _clamp_axis(self.x, self.w)
        y, h = _clamp_axis(self.y, self.h)
        if (x, y, w, h) != (self.x, self.y, self.w, self.h):
            logger.debug(
                "clamped box (%.4f, %.4f, %.4f, %.4f) -> (%.4f, %.4f, %.4f, %.4f)",
                self.x, self.y, self.w, self.h, x, y, w, h,
            )
            object.__setattr__(self, "x", x)
            object.__setattr__(self, "y", y)
            object.__setattr__(self, "w", w)
            object.__setattr__(self, "h", h)

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def center_x(self) -> float:
        return self.x + self.w / 2

    @property
    def center_y(self) -> float:
        return self.y + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def iou(self, other: "BoundingBox") -> float:
        ix = max(0.0, min(self.right, other.right) - max(self.x, other.x))
        iy = max(0.0, min(self.bottom, other.bottom) - max(self.y, other.y))
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0


def _clamp_axis(pos: float, size: float) -> tuple[float, float]:
    size = min(max(size, MIN_SIDE), 1.0)
    pos = min(max(pos, 0.0), 1.0 - size)
    return pos, size


@dataclass(frozen=True)
class ObjectLabel:
    """Identity of one object instance: "[attribute] [base_name] #id"."""

    base_name: str
    attribute: str | None = None
    instance_id: int = 1

    def __post_init__(self):
        if not self.base_name:
            raise LabelError("base_name must be non-empty")
        if self.instance_id < 1:
            raise LabelError(f"instance_id must be >= 1, got {self.instance_id}")

    @property
    def phrase(self) -> str:
        """Label without the #id suffix, e.g. "pink dolphin"."""
        if self.attribute:
            return f"{self.attribute} {self.base_name}"
        return self.base_name

    @property
    def group(self) -> tuple[str | None, str]:
        """The (attribute, base_name) pair that owns this label's id space."""
        return (self.attribute, self.base_name)


def format_label(label: ObjectLabel) -> str:
    """Render a label canonically, e.g. ("pink", "dolphin", 1) -> "pink dolphin #1"."""
    return f"{label.phrase} #{label.instance_id}"


def parse_label(text: str, vocabulary: list[str]) -> ObjectLabel:
    """Parse "[attribute] [base_name] #id" using the caller's base-name vocabulary.

    The attribute/base split is ambiguous without a vocabulary ("pink dolphin"
    could be a base name); the longest vocabulary entry that matches the tail
    of the phrase wins, and whatever precedes it becomes the attribute.
    """
    head, sep, id_text = text.rpartition("#")
    if not sep:
        raise LabelError(f"label {text!r} has no #id suffix")
    try:
        instance_id = int(id_text.strip())
    except ValueError:
        raise LabelError(f"label {text!r} has a non-integer id {id_text.strip()!r}") from None
    phrase = head.strip()
    base = None
    for name in sorted(set(vocabulary), key=len, reverse=True):
        if phrase == name or phrase.endswith(" " + name):
            base = name
            break
    if base is None:
        raise LabelError(f"label {text!r} has no known base name (vocabulary: {sorted(set(vocabulary))})")
    attribute = phrase[: len(phrase) - len(base)].strip() or None
    return ObjectLabel(base_name=base, attribute=attribute, instance_id=instance_id)


@dataclass(frozen=True)
class Layout:
    """An ordered set of labeled boxes; the layout-level abstraction of an image."""

    entries: tuple[tuple[ObjectLabel, BoundingBox], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for label, _ in self.entries:
            key = format_label(label)
            if key in seen:
                raise LabelError(f"duplicate label {key!r} in layout")
            seen.add(key)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def labels(self) -> list[ObjectLabel]:
        return [label for label, _ in self.entries]

    def get(self, canonical: str) -> BoundingBox | None:
        for label, box in self.entries:
            if format_label(label) == canonical:
                return box
        return None

    def base_names(self) -> list[str]:
        out = []
        for label, _ in self.entries:
            if label.base_name not in out:
                out.append(label.base_name)
        return out


@dataclass(frozen=True)
class ImageRef:
    """Opaque reference to an image owned by exactly one backend."""

    handle: str
    width: int = 1
    height: int = 1

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")


def spatial_relation(a: BoundingBox, rel: str, b: BoundingBox, mode: str = "extent") -> bool:
    """Whether box `a` stands in `rel` to box `b`.

    Extent mode uses the two-sided check: for left_of, `a` must start left of
    `b` AND must not extend past `b`'s right edge. Center mode compares box
    centers on the relevant axis only.
    """
    if rel not in RELATIONS:
        raise ValueError(f"unknown relation {rel!r}")
    if mode not in PREDICATE_MODES:
        raise ValueError(f"unknown predicate mode {mode!r}")
    if mode == "center":
        if rel == "left_of":
            return a.center_x < b.center_x
        if rel == "right_of":
            return a.center_x > b.center_x
        if rel == "above":
            return a.center_y < b.center_y
        return a.center_y > b.center_y
    if rel == "left_of":
        return a.x < b.x and a.right <= b.right
    if rel == "right_of":
        return a.x > b.x and a.right >= b.right
    if rel == "above":
        return a.y < b.y and a.bottom <= b.bottom
    return a.y > b.y and a.bottom >= b.bottom


def boxes_aligned(a: BoundingBox, b: BoundingBox, eps: float = DEFAULT_EPS) -> bool:
    """True when every coordinate of the two boxes agrees within eps."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return (
        abs(a.x - b.x) <= eps
        and abs(a.y - b.y) <= eps
        and abs(a.w - b.w) <= eps
        and abs(a.h - b.h) <= eps
    )
