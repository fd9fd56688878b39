"""Closed-loop layout checking and correction for grounded image generation.

The pipeline detects what an image actually contains as a labeled box
layout, asks a controller for a corrected layout, diffs the two into edit
ops, and executes the ops as latent-space operations, iterating until the
proposal matches the detection.
"""

from .geometry import (
    BoundingBox,
    ImageRef,
    Layout,
    ObjectLabel,
    boxes_aligned,
    format_label,
    parse_label,
    spatial_relation,
)
from .planner import EditOp, EditPlan, diff_layouts, is_terminal
from .loop import SessionBackends, SessionConfig, SessionRecord, run_edit, run_session

__all__ = [
    "BoundingBox",
    "EditOp",
    "EditPlan",
    "ImageRef",
    "Layout",
    "ObjectLabel",
    "SessionBackends",
    "SessionConfig",
    "SessionRecord",
    "boxes_aligned",
    "diff_layouts",
    "format_label",
    "is_terminal",
    "parse_label",
    "run_edit",
    "run_session",
    "spatial_relation",
]
