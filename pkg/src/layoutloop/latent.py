"""Latent-space execution of edit plans.

Every correction round funnels into one recomposition: freed regions are
reset to seeded Gaussian noise, pre-generated or edited object latents are
pasted larger-first, and the forward pass keeps untouched regions pinned to
the original trajectory for the frozen prefix of steps before letting the
whole canvas evolve freely.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTarget, EmptyMask, ShapeMismatch
from .geometry import BoundingBox, ImageRef
from .planner import (
    KIND_ADD,
    KIND_ATTR_CHANGE,
    KIND_DELETE,
    KIND_REPOSITION,
    EditOp,
    EditPlan,
)
from .seeds import rng_for

if typing.TYPE_CHECKING:
    from .backends import GenerationBackend

# Fraction of the forward steps during which non-edited regions follow the
# original trajectory; the tail runs free to blend edits into the scene.
DEFAULT_FREEZE_FRACTION = 0.8


def rasterize_box(box: BoundingBox, height: int, width: int) -> np.ndarray:
    """Boolean (height, width) grid: a cell belongs to the box iff its center does."""
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    rows = (ys >= box.y) & (ys <= box.bottom)
    cols = (xs >= box.x) & (xs <= box.right)
    return rows[:, None] & cols[None, :]


def cell_bounding_box(grid: np.ndarray) -> BoundingBox:
    """The tightest box covering a mask's true cells, in fractions."""
    rows = np.flatnonzero(grid.any(axis=1))
    cols = np.flatnonzero(grid.any(axis=0))
    height, width = grid.shape
    return BoundingBox(
        x=cols[0] / width,
        y=rows[0] / height,
        w=(cols[-1] - cols[0] + 1) / width,
        h=(rows[-1] - rows[0] + 1) / height,
    )


@dataclass(frozen=True)
class RegionMask:
    """A latent-resolution object mask and the box it was derived from."""

    grid: np.ndarray
    source_box: BoundingBox

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        object.__setattr__(self, "grid", grid)
        if grid.ndim != 2:
            raise ShapeMismatch(f"mask grid must be 2-D, got shape {grid.shape}")
        if not grid.any():
            raise EmptyMask(f"mask for box {self.source_box} has no cells")

    @property
    def cells(self) -> int:
        return int(self.grid.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


@dataclass(frozen=True)
class LatentStack:
    """Per-step latent grids, index 0 noisiest, produced by one inversion."""

    steps: np.ndarray
    schedule_id: str
    handle: str | None = None

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.float32)
        object.__setattr__(self, "steps", steps)
        if steps.ndim != 4:
            raise ShapeMismatch(f"latent stack must be (steps, C, H, W), got {steps.shape}")

    @property
    def total_steps(self) -> int:
        return self.steps.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.steps.shape[1:]


@dataclass(frozen=True)
class FreezeSchedule:
    """How many initial forward steps pin non-edited regions to the original."""

    total_steps: int
    frozen_steps: int

    def __post_init__(self):
        if not (0 <= self.frozen_steps <= self.total_steps):
            raise ValueError(
                f"frozen_steps {self.frozen_steps} outside [0, {self.total_steps}]"
            )


@dataclass(frozen=True)
class PasteEntry:
    """One object's latents destined for the canvas, with its id for tie-breaks."""

    mask: RegionMask
    latents: LatentStack
    instance_id: int


@dataclass(frozen=True)
class CompositionPlan:
    """All edits of one round, ready for a single recomposition.

    Pastes are ordered by descending cell count (ties by ascending instance
    id) so later, smaller objects overwrite larger ones where they overlap.
    """

    resets: tuple[RegionMask, ...]
    pastes: tuple[PasteEntry, ...]
    freeze: FreezeSchedule

    def __post_init__(self):
        counts = [p.mask.cells for p in self.pastes]
        if counts != sorted(counts, reverse=True):
            raise ValueError("pastes must be ordered by descending mask area")


@dataclass(frozen=True)
class Override:
    """One forward-pass directive: set values at a step, or freeze a range."""

    step_range: tuple[int, int]
    mask: RegionMask
    values: np.ndarray | None = None
    freeze: bool = False

    def __post_init__(self):
        if (self.values is None) == (not self.freeze):
            raise ValueError("override carries either values or freeze, exactly one")
        if self.values is not None:
            object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float32))


def order_pastes(pastes: list[PasteEntry]) -> tuple[PasteEntry, ...]:
    return tuple(sorted(pastes, key=lambda p: (-p.mask.cells, p.instance_id)))


def aspect_fit(from_box: BoundingBox, to_box: BoundingBox) -> BoundingBox:
    """Largest rectangle with from_box's aspect ratio centered inside to_box."""
    scale = min(to_box.w / from_box.w, to_box.h / from_box.h)
    w = from_box.w * scale
    h = from_box.h * scale
    return BoundingBox(
        x=to_box.x + (to_box.w - w) / 2,
        y=to_box.y + (to_box.h - h) / 2,
        w=w,
        h=h,
    )


def reset_noise(root_seed: int, mask_index: int, channels: int, n_cells: int) -> np.ndarray:
    """The seeded standard-normal draw for one reset mask.

    Stream protocol: generator keyed by (root seed, mask index), drawing a
    float32 (channels, n_cells) block consumed in row-major mask order.
    """
    rng = rng_for(root_seed, mask_index)
    return rng.standard_normal((channels, n_cells), dtype=np.float32)


def build_overrides(
    plan: CompositionPlan,
    seed: int,
    latent_shape: tuple[int, int, int],
) -> list[Override]:
    """Flatten a composition plan into forward-pass overrides.

    Emits reset noise first, then pastes in plan order (the forward pass
    applies value overrides sequentially, so later pastes win overlaps),
    then a single freeze override covering everything untouched.
    """
    channels, height, width = latent_shape
    overrides: list[Override] = []
    edited = np.zeros((height, width), dtype=bool)

    for index, mask in enumerate(plan.resets):
        if mask.shape != (height, width):
            raise ShapeMismatch(f"reset mask {mask.shape} vs latent {(height, width)}")
        grid = np.zeros((channels, height, width), dtype=np.float32)
        grid[:, mask.grid] = reset_noise(seed, index, channels, mask.cells)
        overrides.append(Override(step_range=(0, 1), mask=mask, values=grid))
        edited |= mask.grid

    for paste in plan.pastes:
        if paste.mask.shape != (height, width):
            raise ShapeMismatch(f"paste mask {paste.mask.shape} vs latent {(height, width)}")
        if paste.latents.grid_shape != latent_shape:
            raise ShapeMismatch(
                f"paste latents {paste.latents.grid_shape} vs latent {latent_shape}"
            )
        overrides.append(
            Override(step_range=(0, 1), mask=paste.mask, values=paste.latents.steps[0])
        )
        edited |= paste.mask.grid

    if plan.freeze.frozen_steps > 0 and not edited.all():
        frozen_mask = RegionMask(grid=~edited, source_box=BoundingBox(0, 0, 1, 1))
        overrides.append(
            Override(step_range=(0, plan.freeze.frozen_steps), mask=frozen_mask, freeze=True)
        )
    return overrides


def recompose(
    image: ImageRef,
    plan: CompositionPlan,
    seed: int,
    backend: "GenerationBackend",
) -> ImageRef:
    """Run one recomposition: invert, override, forward, decode."""
    if plan.freeze.total_steps != backend.total_steps:
        raise ShapeMismatch(
            f"plan expects {plan.freeze.total_steps} steps, backend has {backend.total_steps}"
        )
    overrides = build_overrides(plan, seed, backend.latent_shape)
    stack = backend.invert(image)
    return backend.forward(stack, overrides, seed)


def prepare_addition(
    op: EditOp, image: ImageRef, backend: "GenerationBackend"
) -> PasteEntry:
    """Pre-generate the object in its box and invert it into paste latents."""
    if op.kind != KIND_ADD:
        raise ValueError(f"expected an add op, got {op.kind}")
    pregen = backend.pregenerate(op.label.phrase, op.to_box)
    mask = backend.segment(pregen, op.to_box)
    latents = backend.invert(pregen)
    return PasteEntry(mask=mask, latents=latents, instance_id=op.label.instance_id)


def prepare_deletion(op: EditOp, image: ImageRef, backend: "GenerationBackend") -> RegionMask:
    """Segmentation-refined mask of the object to reset to noise."""
    if op.kind != KIND_DELETE:
        raise ValueError(f"expected a delete op, got {op.kind}")
    return backend.segment(image, op.from_box)


def prepare_reposition(
    op: EditOp, image: ImageRef, backend: "GenerationBackend"
) -> tuple[RegionMask, PasteEntry]:
    """Move an object: reset its source region, paste its resized latents.

    The pixel crop is resized in image space to the largest aspect-preserving
    rectangle centered in the target box; resizing latents directly degrades
    quality.
    """
    if op.kind != KIND_REPOSITION:
        raise ValueError(f"expected a reposition op, got {op.kind}")
    _, height, width = backend.latent_shape
    target = aspect_fit(op.from_box, op.to_box)
    if not rasterize_box(target, height, width).any():
        raise DegenerateTarget(f"target {target} covers no latent cell")
    moved = backend.transform(image, op.from_box, target)
    target_mask = backend.segment(moved, target)
    latents = backend.invert(moved)
    source_mask = backend.segment(image, op.from_box)
    return source_mask, PasteEntry(
        mask=target_mask, latents=latents, instance_id=op.label.instance_id
    )


def prepare_attr_change(
    op: EditOp, image: ImageRef, backend: "GenerationBackend"
) -> PasteEntry:
    """Masked attribute edit, inverted into paste latents under the same mask."""
    if op.kind != KIND_ATTR_CHANGE:
        raise ValueError(f"expected an attribute change, got {op.kind}")
    mask = backend.segment(image, op.to_box)
    edited = backend.attribute_edit(image, mask, op.label.phrase)
    latents = backend.invert(edited)
    return PasteEntry(mask=mask, latents=latents, instance_id=op.label.instance_id)


@dataclass(frozen=True)
class ExecutionOutcome:
    """Result of one plan execution, with any ops dropped for empty masks."""

    image: ImageRef
    applied: tuple[EditOp, ...] = field(default_factory=tuple)
    dropped: tuple[EditOp, ...] = field(default_factory=tuple)


def execute_plan(
    image: ImageRef,
    plan: EditPlan,
    seed: int,
    backend: "GenerationBackend",
    freeze_fraction: float = DEFAULT_FREEZE_FRACTION,
) -> ExecutionOutcome:
    """Prepare every op, assemble one composition plan, recompose once.

    Ops whose segmentation comes back empty are dropped and reported rather
    than aborting the round; if everything drops, the image is returned
    untouched.
    """
    if len(plan) == 0:
        raise ValueError("execute_plan requires a non-empty plan")
    resets: list[RegionMask] = []
    pastes: list[PasteEntry] = []
    applied: list[EditOp] = []
    dropped: list[EditOp] = []
    for op in plan:
        try:
            if op.kind == KIND_DELETE:
                resets.append(prepare_deletion(op, image, backend))
            elif op.kind == KIND_REPOSITION:
                source, paste = prepare_reposition(op, image, backend)
                resets.append(source)
                pastes.append(paste)
            elif op.kind == KIND_ADD:
                pastes.append(prepare_addition(op, image, backend))
            else:
                pastes.append(prepare_attr_change(op, image, backend))
        except EmptyMask:
            dropped.append(op)
            continue
        applied.append(op)
    if not applied:
        return ExecutionOutcome(image=image, applied=(), dropped=tuple(dropped))
    total = backend.total_steps
    composition = CompositionPlan(
        resets=tuple(resets),
        pastes=order_pastes(pastes),
        freeze=FreezeSchedule(total_steps=total, frozen_steps=round(freeze_fraction * total)),
    )
    result = recompose(image, composition, seed, backend)
    return ExecutionOutcome(image=result, applied=tuple(applied), dropped=tuple(dropped))
