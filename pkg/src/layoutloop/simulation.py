"""Desk-scale closed-loop experiments.

A stochastic imperfect generator and executor bracket a deterministic
constraint-satisfying controller, reproducing the multi-round improvement
dynamics at layout level: corrupt a satisfying layout, let the controller
propose fixes, apply each op with some success probability, measure accuracy
per round. The oracle controller doubles as the reference fixture for the
chat-reply grammar: its proposals render into "Updated Objects:" text and
round-trip through the real parsers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .benchmark import COLORS
from .errors import Unsatisfiable
from .evaluation import (
    Absent,
    AttributeCount,
    Constraint,
    CountEquals,
    Relation,
    TaskCase,
    evaluate_case,
)
from .geometry import (
    BoundingBox,
    Layout,
    ObjectLabel,
    boxes_aligned,
    format_label,
    spatial_relation,
)
from .planner import (
    KIND_ADD,
    KIND_ATTR_CHANGE,
    KIND_DELETE,
    KIND_REPOSITION,
    EditPlan,
    diff_layouts,
)
from .seeds import rng_for

Entry = tuple[ObjectLabel, BoundingBox]

DEFAULT_OBJECT_SIZE = 0.18
PLACEMENT_PITCH = 0.05
# Safety margin past strict inequality when moving boxes, so cell-quantized
# re-detection cannot flip a fixed relation back to violated.
RELATION_MARGIN = 0.05


@dataclass(frozen=True)
class ErrorProfile:
    """Independent corruption probabilities of the open-loop generator."""

    p_missing: float = 0.0
    p_wrong_attr: float = 0.0
    p_misplaced: float = 0.0
    p_extra: float = 0.0

    def __post_init__(self):
        for name in ("p_missing", "p_wrong_attr", "p_misplaced", "p_extra"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name}={value} outside [0, 1]")


@dataclass(frozen=True)
class TrialResult:
    """Per-round pass flags for one trial; index 0 is the initial image."""

    case_id: str
    passes: tuple[bool, ...]


# -- placement ---------------------------------------------------------------


def scan_free_position(
    existing: list[BoundingBox], w: float = DEFAULT_OBJECT_SIZE, h: float = DEFAULT_OBJECT_SIZE
) -> BoundingBox:
    """The grid position minimizing the worst overlap with existing boxes.

    Scans a fixed-pitch grid in (y, x) order and keeps the first strict
    improvement, so placement is deterministic.
    """
    best = None
    best_overlap = None
    steps = int((1.0 - w) / PLACEMENT_PITCH) + 1
    for yi in range(steps):
        for xi in range(steps):
            box = BoundingBox(x=xi * PLACEMENT_PITCH, y=yi * PLACEMENT_PITCH, w=w, h=h)
            overlap = max((box.iou(other) for other in existing), default=0.0)
            if best_overlap is None or overlap < best_overlap - 1e-12:
                best, best_overlap = box, overlap
                if overlap == 0.0:
                    return best
    return best


def _next_id(entries: list[Entry], attribute: str | None, name: str) -> int:
    used = [
        label.instance_id
        for label, _ in entries
        if label.group == (attribute, name)
    ]
    return max(used, default=0) + 1


def _add_instance(entries: list[Entry], attribute: str | None, name: str) -> Entry:
    box = scan_free_position([b for _, b in entries])
    label = ObjectLabel(base_name=name, attribute=attribute, instance_id=_next_id(entries, attribute, name))
    entry = (label, box)
    entries.append(entry)
    return entry


# -- relation repair ----------------------------------------------------------


def _relation_fixed_box(subject: BoundingBox, rel: str, objects: list[BoundingBox]) -> BoundingBox:
    """Minimal move (then shrink) of the subject so rel holds against every object."""
    horizontal = rel in ("left_of", "right_of")
    original_size = subject.w if horizontal else subject.h
    if rel == "left_of":
        lo, hi = min(o.x for o in objects), min(o.right for o in objects)
    elif rel == "right_of":
        lo, hi = max(o.x for o in objects), max(o.right for o in objects)
    elif rel == "above":
        lo, hi = min(o.y for o in objects), min(o.bottom for o in objects)
    else:
        lo, hi = max(o.y for o in objects), max(o.bottom for o in objects)

    solved = None
    for margin in (RELATION_MARGIN, 1e-6):
        size = original_size
        if rel in ("left_of", "above"):
            # pos < lo and pos + size <= hi, backed off by margin
            pos = min(lo, hi - size) - margin
            if pos < 0:
                size = max(min(size, hi - margin), 0.02)
                pos = min(lo, hi - size) - margin
            if pos >= 0:
                solved = (pos, size)
                break
        else:
            # pos > lo and pos + size >= hi, pushed out by margin
            pos = max(lo, hi - size) + margin
            if pos + size > 1.0:
                size = max(min(size, 1.0 - lo - margin), 0.02)
                pos = max(lo, hi - size) + margin
            if pos + size <= 1.0:
                solved = (pos, size)
                break
    if solved is None:
        raise Unsatisfiable(f"no room to place subject {rel} its objects")
    pos, size = solved
    if horizontal:
        return BoundingBox(x=pos, y=subject.y, w=size, h=subject.h)
    return BoundingBox(x=subject.x, y=pos, w=subject.w, h=size)


_INVERSE_REL = {"left_of": "right_of", "right_of": "left_of", "above": "below", "below": "above"}

# Any repair must displace a box by clearly more than the alignment eps,
# otherwise the resulting plan cannot express the move.
MIN_REPAIR_MOVE = 0.025


def _moved_enough(original: BoundingBox, fixed: BoundingBox) -> bool:
    return not boxes_aligned(original, fixed, MIN_REPAIR_MOVE)


def _holds_with_margin(
    box: BoundingBox, rel: str, others: list[BoundingBox], margin: float, mode: str
) -> bool:
    """The relation holds even if the box drifts `margin` toward the others."""
    dx = {"left_of": margin, "right_of": -margin}.get(rel, 0.0)
    dy = {"above": margin, "below": -margin}.get(rel, 0.0)
    shifted = BoundingBox(x=box.x + dx, y=box.y + dy, w=box.w, h=box.h)
    return all(
        spatial_relation(b, rel, o, mode=mode) for b in (box, shifted) for o in others
    )


def _scan_relation_position(
    original: BoundingBox,
    rel: str,
    others: list[BoundingBox],
    obstacles: list[BoundingBox],
    mode: str,
) -> BoundingBox | None:
    """Grid search for a clearly-displaced position satisfying the relation.

    Prefers staying on the original cross-axis coordinate and moving little
    along the violated axis, then low overlap with the other boxes.
    """
    horizontal = rel in ("left_of", "right_of")
    sizes = ((original.w, original.h), (0.16, 0.16), (0.12, 0.12))
    for margin in (RELATION_MARGIN, 0.0):
        for w, h in sizes:
            best = None
            best_key = None
            steps = int(1.0 / PLACEMENT_PITCH)
            for yi in range(steps):
                for xi in range(steps):
                    # Construction clamps edge placements back into frame.
                    box = BoundingBox(x=xi * PLACEMENT_PITCH, y=yi * PLACEMENT_PITCH, w=w, h=h)
                    if not _moved_enough(original, box):
                        continue
                    if not _holds_with_margin(box, rel, others, margin, mode):
                        continue
                    overlap = max((box.iou(o) for o in obstacles), default=0.0)
                    cross = abs(box.y - original.y) if horizontal else abs(box.x - original.x)
                    along = abs(box.x - original.x) if horizontal else abs(box.y - original.y)
                    key = (round(overlap, 6), round(cross, 6), round(along, 6))
                    if best_key is None or key < best_key:
                        best, best_key = box, key
            if best is not None:
                return best
    return None


def _repair_subject(
    original: BoundingBox,
    rel: str,
    others: list[BoundingBox],
    obstacles: list[BoundingBox],
    mode: str,
) -> BoundingBox | None:
    try:
        fixed = _relation_fixed_box(original, rel, others)
    except Unsatisfiable:
        fixed = None
    if fixed is not None and _moved_enough(original, fixed):
        return fixed
    return _scan_relation_position(original, rel, others, obstacles, mode)


def _fix_relations(entries: list[Entry], constraints: list[Constraint], mode: str) -> list[Entry]:
    for _ in range(3):
        changed = False
        for constraint in constraints:
            if not isinstance(constraint, Relation):
                continue
            objects = [b for label, b in entries if label.base_name == constraint.object]
            if not objects:
                continue
            for i, (label, box) in enumerate(entries):
                if label.base_name != constraint.subject:
                    continue
                if all(spatial_relation(box, constraint.rel, o, mode=mode) for o in objects):
                    continue
                obstacles = [b for j, (_, b) in enumerate(entries) if j != i]
                fixed = _repair_subject(box, constraint.rel, objects, obstacles, mode)
                if fixed is not None:
                    entries[i] = (label, fixed)
                    changed = True
                    continue
                # The subject cannot move; relocate the objects by the exact
                # inverse relation instead.
                subjects = [b for other, b in entries if other.base_name == constraint.subject]
                inverse = _INVERSE_REL[constraint.rel]
                for j, (other, other_box) in enumerate(entries):
                    if other.base_name != constraint.object:
                        continue
                    if spatial_relation(other_box, inverse, box, mode=mode) and all(
                        spatial_relation(other_box, inverse, s, mode=mode) for s in subjects
                    ):
                        continue
                    blockers = [b for k, (_, b) in enumerate(entries) if k != j]
                    moved = _repair_subject(other_box, inverse, subjects, blockers, mode)
                    if moved is None:
                        raise Unsatisfiable(
                            f"no placement satisfies {constraint.subject} "
                            f"{constraint.rel} {constraint.object}"
                        )
                    entries[j] = (other, moved)
                objects = [b for other, b in entries if other.base_name == constraint.object]
                changed = True
        if not changed:
            break
    return entries


# -- canonical layouts and the oracle controller -------------------------------


def canonical_layout(case: TaskCase, mode: str = "extent") -> Layout:
    """A deterministic satisfying layout, built by the same placement scan."""
    entries: list[Entry] = []
    for constraint in case.constraints:
        if isinstance(constraint, CountEquals):
            have = sum(1 for label, _ in entries if label.base_name == constraint.name)
            for _ in range(constraint.n - have):
                _add_instance(entries, None, constraint.name)
        elif isinstance(constraint, AttributeCount):
            have = sum(
                1
                for label, _ in entries
                if label.group == (constraint.attribute, constraint.name)
            )
            for _ in range(constraint.n - have):
                _add_instance(entries, constraint.attribute, constraint.name)
        elif isinstance(constraint, Relation):
            for name in (constraint.subject, constraint.object):
                if not any(label.base_name == name for label, _ in entries):
                    _add_instance(entries, None, name)
    entries = _fix_relations(entries, list(case.constraints), mode)
    layout = Layout(entries=tuple(entries))
    if not evaluate_case(case, layout, mode=mode):
        raise Unsatisfiable(f"case {case.id} admits no canonical layout")
    return layout


def oracle_controller(case: TaskCase, b_curr: Layout, mode: str = "extent") -> Layout:
    """A constraint-satisfying proposal changing as few entries as possible.

    Satisfying entries keep their labels and boxes verbatim; extras are
    deleted smallest-first, missing instances are added at scanned free
    positions, wrong attributes are relabeled before anything is added, and
    relation violations move the subject minimally along the violated axis.
    Idempotent: a satisfying layout is returned unchanged.
    """
    entries: list[Entry] = list(b_curr.entries)

    for constraint in case.constraints:
        if isinstance(constraint, Absent):
            entries = [e for e in entries if e[0].base_name != constraint.name]

    demanded: dict[tuple[str, str], int] = {}
    for constraint in case.constraints:
        if isinstance(constraint, AttributeCount):
            demanded[(constraint.attribute, constraint.name)] = constraint.n

    for constraint in case.constraints:
        if not isinstance(constraint, AttributeCount):
            continue
        matching = [
            e for e in entries if e[0].group == (constraint.attribute, constraint.name)
        ]
        excess = len(matching) - constraint.n
        if excess > 0:
            for entry in sorted(matching, key=lambda e: (e[1].area, format_label(e[0])))[:excess]:
                entries.remove(entry)
        for _ in range(constraint.n - len(matching)):
            candidates = [
                e
                for e in entries
                if e[0].base_name == constraint.name
                and e[0].attribute != constraint.attribute
                and demanded.get((e[0].attribute, e[0].base_name)) is None
            ]
            if candidates:
                old = candidates[0]
                index = entries.index(old)
                label = ObjectLabel(
                    base_name=constraint.name,
                    attribute=constraint.attribute,
                    instance_id=_next_id(entries, constraint.attribute, constraint.name),
                )
                entries[index] = (label, old[1])
            else:
                _add_instance(entries, constraint.attribute, constraint.name)

    for constraint in case.constraints:
        if not isinstance(constraint, CountEquals):
            continue
        matching = [e for e in entries if e[0].base_name == constraint.name]
        excess = len(matching) - constraint.n
        if excess > 0:
            protected = {
                id(e)
                for e in matching
                if demanded.get((e[0].attribute, e[0].base_name)) is not None
            }
            removable = sorted(
                (e for e in matching if id(e) not in protected),
                key=lambda e: (e[1].area, format_label(e[0])),
            )
            if len(removable) < excess:
                raise Unsatisfiable(
                    f"case {case.id}: count and attribute constraints on "
                    f"{constraint.name!r} conflict"
                )
            for entry in removable[:excess]:
                entries.remove(entry)
        else:
            for _ in range(-excess):
                _add_instance(entries, None, constraint.name)

    for constraint in case.constraints:
        if isinstance(constraint, Relation):
            for name in (constraint.subject, constraint.object):
                if not any(label.base_name == name for label, _ in entries):
                    _add_instance(entries, None, name)
    entries = _fix_relations(entries, list(case.constraints), mode)

    layout = Layout(entries=tuple(entries))
    if not evaluate_case(case, layout, mode=mode):
        raise Unsatisfiable(f"case {case.id}: controller could not satisfy all constraints")
    return layout


# -- pure layout execution ------------------------------------------------------


def apply_plan(layout: Layout, plan: EditPlan) -> Layout:
    """Apply every op as a pure layout transformation (perfect executor)."""
    entries: list[Entry] = list(layout.entries)
    for op in plan:
        entries = _apply_op(entries, op)
    return Layout(entries=tuple(entries))


def _apply_op(entries: list[Entry], op) -> list[Entry]:
    if op.kind == KIND_ADD:
        return entries + [(op.label, op.to_box)]
    if op.kind == KIND_DELETE:
        return [e for e in entries if format_label(e[0]) != op.canonical]
    if op.kind == KIND_REPOSITION:
        return [
            (label, op.to_box) if format_label(label) == op.canonical else (label, box)
            for label, box in entries
        ]
    out = []
    changed = False
    for label, box in entries:
        if (
            not changed
            and label.base_name == op.label.base_name
            and label.instance_id == op.label.instance_id
            and label.attribute == op.prior_attribute
        ):
            out.append((op.label, op.to_box))
            changed = True
        else:
            out.append((label, box))
    return out


def simulate_generation(case: TaskCase, profile: ErrorProfile, seed: int) -> Layout:
    """Corrupt the case's canonical layout per the error profile."""
    rng = rng_for(seed)
    entries: list[Entry] = []
    relation_subjects = {
        c.subject for c in case.constraints if isinstance(c, Relation)
    }
    for label, box in canonical_layout(case):
        if rng.random() < profile.p_missing:
            continue
        if label.attribute is not None and rng.random() < profile.p_wrong_attr:
            choices = [c for c in COLORS if c != label.attribute]
            wrong = choices[int(rng.integers(len(choices)))]
            label = ObjectLabel(
                base_name=label.base_name, attribute=wrong, instance_id=label.instance_id
            )
        if label.base_name in relation_subjects and rng.random() < profile.p_misplaced:
            box = _violating_box(box, label.base_name, case)
        entries.append((label, box))
    for name in dict.fromkeys(label.base_name for label, _ in entries):
        if rng.random() < profile.p_extra:
            _add_instance(entries, None, name)
    entries = _reassign_ids(entries)
    return Layout(entries=tuple(entries))


def _violating_box(box: BoundingBox, subject: str, case: TaskCase) -> BoundingBox:
    for constraint in case.constraints:
        if isinstance(constraint, Relation) and constraint.subject == subject:
            # Park the subject where the relation cannot hold: share the
            # object's near edge so the strict inequality fails.
            objects = [
                b for label, b in canonical_layout(case) if label.base_name == constraint.object
            ]
            if not objects:
                continue
            if constraint.rel == "left_of":
                return BoundingBox(x=min(1 - box.w, max(o.x for o in objects)), y=box.y, w=box.w, h=box.h)
            if constraint.rel == "right_of":
                return BoundingBox(x=max(0.0, min(o.x for o in objects) - box.w / 2), y=box.y, w=box.w, h=box.h)
            if constraint.rel == "above":
                return BoundingBox(x=box.x, y=min(1 - box.h, max(o.y for o in objects)), w=box.w, h=box.h)
            return BoundingBox(x=box.x, y=max(0.0, min(o.y for o in objects) - box.h / 2), w=box.w, h=box.h)
    return box


def _reassign_ids(entries: list[Entry]) -> list[Entry]:
    counters: dict[tuple[str | None, str], int] = {}
    out = []
    for label, box in entries:
        counters[label.group] = counters.get(label.group, 0) + 1
        out.append(
            (
                ObjectLabel(
                    base_name=label.base_name,
                    attribute=label.attribute,
                    instance_id=counters[label.group],
                ),
                box,
            )
        )
    return out


def simulate_execution(layout: Layout, plan: EditPlan, q: float, seed: int) -> Layout:
    """Apply each op independently with probability q, else skip it."""
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"success probability {q} outside [0, 1]")
    rng = rng_for(seed)
    entries: list[Entry] = list(layout.entries)
    for op in plan:
        if rng.random() < q:
            entries = _apply_op(entries, op)
    return Layout(entries=tuple(entries))


# -- the experiment loop ---------------------------------------------------------


@dataclass(frozen=True)
class ExperimentResult:
    """Accuracy after rounds 0..K with normal-approximation 95% intervals."""

    accuracy: tuple[float, ...]
    ci95: tuple[float, ...]
    trials: tuple[TrialResult, ...] = field(repr=False, default_factory=tuple)

    @property
    def non_decreasing(self) -> bool:
        return all(a <= b + 1e-12 for a, b in zip(self.accuracy, self.accuracy[1:]))

    def format(self, delimiter: str = "\t") -> str:
        header = delimiter.join(f"round_{k}" for k in range(len(self.accuracy)))
        values = delimiter.join(
            f"{acc:.4f}±{ci:.4f}" for acc, ci in zip(self.accuracy, self.ci95)
        )
        return header + "\n" + values


def run_trial(
    case: TaskCase,
    profile: ErrorProfile,
    q: float,
    rounds: int,
    seed: int,
    mode: str = "extent",
    eps: float = 0.02,
) -> TrialResult:
    layout = simulate_generation(case, profile, seed)
    passes = [evaluate_case(case, layout, mode=mode)]
    for k in range(1, rounds + 1):
        proposal = oracle_controller(case, layout, mode=mode)
        plan = diff_layouts(layout, proposal, eps=eps)
        layout = simulate_execution(layout, plan, q, rng_for(seed, k).integers(2**63))
        passes.append(evaluate_case(case, layout, mode=mode))
    return TrialResult(case_id=case.id, passes=tuple(passes))


def _trial_batch(args: tuple) -> list[TrialResult]:
    cases, profile, q, rounds, seed, mode, eps, start, stop = args
    return [
        run_trial(
            cases[t % len(cases)],
            profile,
            q,
            rounds,
            int(rng_for(seed, t).integers(2**63)),
            mode=mode,
            eps=eps,
        )
        for t in range(start, stop)
    ]


def run_experiment(
    cases: list[TaskCase],
    profile: ErrorProfile,
    q: float,
    rounds: int,
    trials: int,
    seed: int,
    mode: str = "extent",
    eps: float = 0.02,
    jobs: int = 1,
) -> ExperimentResult:
    """Full closed loop per trial; trial t exercises cases[t % len(cases)].

    Each trial derives its own stream from (seed, trial index), so results do
    not depend on execution order: fanning trials across `jobs` worker
    processes reproduces the serial run exactly.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if jobs <= 1 or trials < 2 * jobs:
        results = _trial_batch((cases, profile, q, rounds, seed, mode, eps, 0, trials))
    else:
        from concurrent.futures import ProcessPoolExecutor

        chunk = (trials + jobs - 1) // jobs
        batches = [
            (cases, profile, q, rounds, seed, mode, eps, start, min(start + chunk, trials))
            for start in range(0, trials, chunk)
        ]
        results = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for batch in pool.map(_trial_batch, batches):
                results.extend(batch)
    accuracy = []
    ci95 = []
    for k in range(rounds + 1):
        p = sum(r.passes[k] for r in results) / trials
        accuracy.append(p)
        ci95.append(1.96 * (p * (1 - p) / trials) ** 0.5)
    return ExperimentResult(accuracy=tuple(accuracy), ci95=tuple(ci95), trials=tuple(results))
