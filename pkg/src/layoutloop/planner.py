"""Layout diffing: the current/proposed layout pair becomes an edit plan.

Correspondence rides on object IDs: an entry keeps its name and ID across
rounds, so pairing never has to be guessed. Entries with identical canonical
labels pair first; among the leftovers, a shared (base name, id) with a
different attribute is an attribute change; everything else is an add or a
delete.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .geometry import DEFAULT_EPS, BoundingBox, Layout, ObjectLabel, boxes_aligned, format_label

KIND_ADD = "add"
KIND_DELETE = "delete"
KIND_REPOSITION = "reposition"
KIND_ATTR_CHANGE = "attr_change"
OP_KINDS = (KIND_ADD, KIND_DELETE, KIND_REPOSITION, KIND_ATTR_CHANGE)


@dataclass(frozen=True)
class EditOp:
    """One correction step.

    `label` is the post-state identity for adds and attribute changes, the
    pre-state identity for deletes and repositions. Attribute changes carry
    the region they act on in `to_box` and the previous attribute in
    `prior_attribute`.
    """

    kind: str
    label: ObjectLabel
    from_box: BoundingBox | None = None
    to_box: BoundingBox | None = None
    prior_attribute: str | None = None

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {self.kind!r}")
        if self.kind == KIND_ADD and not (self.to_box and self.from_box is None):
            raise ValueError("add ops carry to_box only")
        if self.kind == KIND_DELETE and not (self.from_box and self.to_box is None):
            raise ValueError("delete ops carry from_box only")
        if self.kind == KIND_REPOSITION:
            if self.from_box is None or self.to_box is None:
                raise ValueError("reposition ops carry both boxes")
            if self.from_box == self.to_box:
                raise ValueError("reposition source and target are identical")
        if self.kind == KIND_ATTR_CHANGE:
            if self.to_box is None:
                raise ValueError("attribute changes carry the edit region in to_box")
            if self.prior_attribute == self.label.attribute:
                raise ValueError("attribute change must actually change the attribute")

    @property
    def canonical(self) -> str:
        return format_label(self.label)


@dataclass(frozen=True)
class EditPlan:
    """Ordered edit ops.

    Execution order: deletes first (freed regions reset before pasting), then
    adds and repositions by descending target area (larger regions composite
    first so smaller objects stay visible), then attribute changes.
    """

    ops: tuple[EditOp, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))

    def __iter__(self):
        return iter(self.ops)

    def __len__(self):
        return len(self.ops)

    def kinds(self) -> list[str]:
        return [op.kind for op in self.ops]

    def respects_order(self) -> bool:
        phase = {KIND_DELETE: 0, KIND_REPOSITION: 1, KIND_ADD: 1, KIND_ATTR_CHANGE: 2}
        phases = [phase[op.kind] for op in self.ops]
        if phases != sorted(phases):
            return False
        areas = [op.to_box.area for op in self.ops if phase[op.kind] == 1]
        return all(a >= b - 1e-12 for a, b in zip(areas, areas[1:]))


def _ordered(deletes: list[EditOp], placements: list[EditOp], attr_changes: list[EditOp]) -> EditPlan:
    placements = sorted(placements, key=lambda op: (-op.to_box.area, op.canonical))
    return EditPlan(ops=tuple(deletes + placements + attr_changes))


def diff_layouts(
    b_curr: Layout,
    b_next: Layout,
    eps: float = DEFAULT_EPS,
    iou_gate: float | None = None,
) -> EditPlan:
    """Compute the ops turning b_curr into b_next.

    Pairing priority: identical canonical labels (no-op when aligned within
    eps, reposition otherwise); then leftover pairs sharing (base name, id)
    with a different attribute (attribute change, preceded by a reposition
    when the box also moved); remaining proposal entries are adds, remaining
    current entries deletes.

    `iou_gate`, when set, demotes an attribute-change pair whose boxes
    overlap less than the gate to a delete plus an add; use it with
    controllers whose ID discipline is not trusted.
    """
    curr = {format_label(label): (label, box) for label, box in b_curr}
    nxt = {format_label(label): (label, box) for label, box in b_next}

    deletes: list[EditOp] = []
    placements: list[EditOp] = []
    attr_changes: list[EditOp] = []

    for canonical in list(curr):
        if canonical not in nxt:
            continue
        label_c, box_c = curr.pop(canonical)
        label_n, box_n = nxt.pop(canonical)
        if not boxes_aligned(box_c, box_n, eps):
            placements.append(
                EditOp(kind=KIND_REPOSITION, label=label_c, from_box=box_c, to_box=box_n)
            )

    for canonical_c in sorted(curr):
        label_c, box_c = curr[canonical_c]
        match = None
        for canonical_n in sorted(nxt):
            label_n, _ = nxt[canonical_n]
            if (
                label_n.base_name == label_c.base_name
                and label_n.instance_id == label_c.instance_id
                and label_n.attribute != label_c.attribute
            ):
                match = canonical_n
                break
        if match is None:
            continue
        label_n, box_n = nxt.pop(match)
        del curr[canonical_c]
        if iou_gate is not None and box_c.iou(box_n) < iou_gate:
            deletes.append(EditOp(kind=KIND_DELETE, label=label_c, from_box=box_c))
            placements.append(EditOp(kind=KIND_ADD, label=label_n, to_box=box_n))
            continue
        moved = not boxes_aligned(box_c, box_n, eps)
        if moved:
            placements.append(
                EditOp(kind=KIND_REPOSITION, label=label_c, from_box=box_c, to_box=box_n)
            )
        attr_changes.append(
            EditOp(
                kind=KIND_ATTR_CHANGE,
                label=label_n,
                to_box=box_n if moved else box_c,
                prior_attribute=label_c.attribute,
            )
        )

    for canonical in sorted(nxt):
        label, box = nxt[canonical]
        placements.append(EditOp(kind=KIND_ADD, label=label, to_box=box))
    for canonical in sorted(curr):
        label, box = curr[canonical]
        deletes.append(EditOp(kind=KIND_DELETE, label=label, from_box=box))

    return _ordered(deletes, placements, attr_changes)


def is_terminal(plan: EditPlan) -> bool:
    """The loop stops when the proposal equals the current layout: no ops."""
    return len(plan.ops) == 0
