"""Task-typed constraint checking and accuracy aggregation.

Constraints are checked against layouts, not pixels: detection supplies the
layout, this module decides pass/fail. Accuracy tables follow the benchmark
shape (negation / numeracy / attribute / spatial / average), with the
average an unweighted mean of the per-task percentages rounded half-up to
one decimal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .errors import EmptyTask
from .geometry import RELATIONS, Layout, spatial_relation

TASK_TYPES = ("negation", "numeracy", "attribute", "spatial")
# "mixed" marks synthetic multi-constraint cases used by the simulator only;
# suite files stick to the four benchmark tasks.
INTERNAL_TASK_TYPES = TASK_TYPES + ("mixed",)


@dataclass(frozen=True)
class Absent:
    """No instance of the base name may appear."""

    name: str


@dataclass(frozen=True)
class CountEquals:
    """Exactly n instances of the base name, any attribute."""

    name: str
    n: int


@dataclass(frozen=True)
class AttributeCount:
    """Exactly n instances carrying this exact attribute."""

    attribute: str
    name: str
    n: int


@dataclass(frozen=True)
class Relation:
    """Every subject instance stands in rel to every object instance."""

    subject: str
    rel: str
    object: str

    def __post_init__(self):
        if self.rel not in RELATIONS:
            raise ValueError(f"unknown relation {self.rel!r}")


Constraint = Absent | CountEquals | AttributeCount | Relation

_KIND_FOR_TASK = {
    "negation": Absent,
    "numeracy": CountEquals,
    "attribute": AttributeCount,
    "spatial": Relation,
}


@dataclass(frozen=True)
class TaskCase:
    """One benchmark case: a prompt and the constraints its image must meet."""

    id: str
    prompt: str
    task_type: str
    constraints: tuple[Constraint, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.task_type not in INTERNAL_TASK_TYPES:
            raise ValueError(f"unknown task type {self.task_type!r}")
        if not self.constraints:
            raise ValueError("a case needs at least one constraint")
        if self.task_type != "mixed":
            expected = _KIND_FOR_TASK[self.task_type]
            for c in self.constraints:
                if not isinstance(c, expected):
                    raise ValueError(
                        f"{self.task_type} case holds a {type(c).__name__} constraint"
                    )


def check_constraint(
    layout: Layout,
    constraint: Constraint,
    mode: str = "extent",
    quantifier: str = "universal",
) -> bool:
    """Whether the layout satisfies one constraint.

    Relations require at least one subject and one object instance; with the
    default universal quantifier every subject/object pair must satisfy the
    predicate, with "existential" one satisfying pair suffices.
    """
    if isinstance(constraint, Absent):
        return all(label.base_name != constraint.name for label in layout.labels())
    if isinstance(constraint, CountEquals):
        count = sum(1 for label in layout.labels() if label.base_name == constraint.name)
        return count == constraint.n
    if isinstance(constraint, AttributeCount):
        count = sum(
            1
            for label in layout.labels()
            if label.base_name == constraint.name and label.attribute == constraint.attribute
        )
        return count == constraint.n
    subjects = [box for label, box in layout if label.base_name == constraint.subject]
    objects = [box for label, box in layout if label.base_name == constraint.object]
    if not subjects or not objects:
        return False
    pairs = (
        spatial_relation(s, constraint.rel, o, mode=mode) for s in subjects for o in objects
    )
    return any(pairs) if quantifier == "existential" else all(pairs)


def evaluate_case(
    case: TaskCase, layout: Layout, mode: str = "extent", quantifier: str = "universal"
) -> bool:
    """Conjunction over the case's constraints."""
    return all(check_constraint(layout, c, mode=mode, quantifier=quantifier) for c in case.constraints)


def round_half_up(value: float, decimals: int = 1) -> float:
    quantum = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def average_from_percentages(per_task: list[float]) -> float:
    """Unweighted mean of per-task percentages, rounded half-up to one decimal."""
    if not per_task:
        raise EmptyTask("no task percentages to average")
    return round_half_up(sum(per_task) / len(per_task))


@dataclass(frozen=True)
class AccuracyTable:
    """Per-task pass rates in percent, plus their unweighted average."""

    per_task: tuple[tuple[str, float, int, int], ...]  # (task, pct, passed, total)
    average: float

    def format(self, delimiter: str = "\t") -> str:
        header = [task for task, *_ in self.per_task] + ["Average"]
        values = [f"{pct:.1f}" for _, pct, *_ in self.per_task] + [f"{self.average:.1f}"]
        return delimiter.join(header) + "\n" + delimiter.join(values)


def aggregate_suite(results: list[tuple[TaskCase, bool]]) -> AccuracyTable:
    """Accuracy per task type plus the unweighted average over present tasks.

    Task types with zero cases are omitted from the average; the average is
    computed from the unrounded per-task rates and rounded half-up once.
    """
    if not results:
        raise EmptyTask("no results to aggregate")
    passed: dict[str, int] = {}
    totals: dict[str, int] = {}
    for case, ok in results:
        totals[case.task_type] = totals.get(case.task_type, 0) + 1
        passed[case.task_type] = passed.get(case.task_type, 0) + int(ok)
    order = [t for t in TASK_TYPES if t in totals] + [
        t for t in totals if t not in TASK_TYPES
    ]
    rates = {t: 100.0 * passed[t] / totals[t] for t in order}
    per_task = tuple(
        (t, round_half_up(rates[t]), passed[t], totals[t]) for t in order
    )
    return AccuracyTable(per_task=per_task, average=round_half_up(sum(rates.values()) / len(rates)))


# -- suite file format -------------------------------------------------------
#
# One JSON record per line: {"id", "prompt", "task_type", "constraints": [...]}
# with each constraint in a small textual schema:
#     count seagull == 5
#     attr blue bicycle == 1
#     absent backpacks
#     rel bicycle left_of bench


def parse_constraint(text: str) -> Constraint:
    tokens = text.split()
    if not tokens:
        raise ValueError("empty constraint")
    kind = tokens[0]
    if kind == "absent" and len(tokens) >= 2:
        return Absent(name=" ".join(tokens[1:]))
    if kind == "count" and len(tokens) >= 4 and tokens[-2] == "==":
        return CountEquals(name=" ".join(tokens[1:-2]), n=int(tokens[-1]))
    if kind == "attr" and len(tokens) >= 5 and tokens[-2] == "==":
        return AttributeCount(
            attribute=tokens[1], name=" ".join(tokens[2:-2]), n=int(tokens[-1])
        )
    if kind == "rel":
        for i, token in enumerate(tokens):
            if token in RELATIONS:
                return Relation(
                    subject=" ".join(tokens[1:i]), rel=token, object=" ".join(tokens[i + 1:])
                )
    raise ValueError(f"unparseable constraint {text!r}")


def render_constraint(constraint: Constraint) -> str:
    if isinstance(constraint, Absent):
        return f"absent {constraint.name}"
    if isinstance(constraint, CountEquals):
        return f"count {constraint.name} == {constraint.n}"
    if isinstance(constraint, AttributeCount):
        return f"attr {constraint.attribute} {constraint.name} == {constraint.n}"
    return f"rel {constraint.subject} {constraint.rel} {constraint.object}"


def load_suite(path: str) -> list[TaskCase]:
    cases = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                cases.append(
                    TaskCase(
                        id=str(record["id"]),
                        prompt=record["prompt"],
                        task_type=record["task_type"],
                        constraints=tuple(parse_constraint(c) for c in record["constraints"]),
                    )
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad suite record: {exc}") from None
    if not cases:
        raise ValueError(f"{path}: suite file holds no cases")
    return cases


def save_suite(cases: list[TaskCase], path: str):
    with open(path, "w", encoding="utf-8") as f:
        for case in cases:
            record = {
                "id": case.id,
                "prompt": case.prompt,
                "task_type": case.task_type,
                "constraints": [render_constraint(c) for c in case.constraints],
            }
            f.write(json.dumps(record) + "\n")
