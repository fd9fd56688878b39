"""Programmatic benchmark prompts: synthesis and rule-based parsing.

Cases are generated from constraints into a small canonical prompt grammar,
and that grammar parses back deterministically. The parse side powers the
simulated controller, giving the full pipeline coverage without a live
model; free-form prompts still go through the real chat path.
"""

from __future__ import annotations

import re

import numpy as np

from .evaluation import (
    Absent,
    AttributeCount,
    Constraint,
    CountEquals,
    Relation,
    TaskCase,
)
from .prompts import ParsedPrompt

NOUNS = (
    "cat", "dog", "bowl", "car", "truck", "bird", "horse", "sheep", "cow",
    "bench", "bicycle", "chair", "apple", "banana", "boat", "balloon",
    "seagull", "palm tree", "backpack", "dolphin",
)
COLORS = (
    "red", "green", "blue", "yellow", "orange", "pink", "purple", "brown",
    "black", "white", "gray",
)
NUMBER_WORDS = ("one", "two", "three", "four", "five", "six")

REL_PHRASES = {
    "left_of": "to the left of",
    "right_of": "to the right of",
    "above": "above",
    "below": "below",
}

_PLURALS = {noun + "s": noun for noun in NOUNS}


def plural(noun: str) -> str:
    return noun + "s"


def _noun_alternation() -> str:
    forms = sorted(list(_PLURALS) + list(NOUNS), key=len, reverse=True)
    return "|".join(re.escape(f) for f in forms)


_COUNT_CLAUSE = re.compile(
    rf"\b(a|an|{'|'.join(NUMBER_WORDS)})\s+(?:({'|'.join(COLORS)})\s+)?({_noun_alternation()})\b"
)
_REL_CLAUSE = re.compile(
    rf"\ba\s+({_noun_alternation()})\s+(to the left of|to the right of|above|below)\s+a\s+({_noun_alternation()})\b"
)
_WITHOUT = re.compile(rf"\bwithout\s+({_noun_alternation()})\b")


def _singular(form: str) -> str:
    return _PLURALS.get(form, form)


def _count_phrase(n: int, attribute: str | None, name: str) -> str:
    word = NUMBER_WORDS[n - 1]
    noun = name if n == 1 else plural(name)
    return f"{word} {attribute} {noun}" if attribute else f"{word} {noun}"


def synthesize_prompt(constraints: list[Constraint]) -> str:
    """Render constraints into the canonical benchmark prompt."""
    clauses = []
    negated = []
    for constraint in constraints:
        if isinstance(constraint, Absent):
            negated.append(plural(constraint.name))
        elif isinstance(constraint, CountEquals):
            clauses.append(_count_phrase(constraint.n, None, constraint.name))
        elif isinstance(constraint, AttributeCount):
            clauses.append(_count_phrase(constraint.n, constraint.attribute, constraint.name))
        else:
            clauses.append(
                f"a {constraint.subject} {REL_PHRASES[constraint.rel]} a {constraint.object}"
            )
    prompt = "a realistic photo of a scene"
    if clauses:
        if len(clauses) > 1:
            body = ", ".join(clauses[:-1]) + " and " + clauses[-1]
        else:
            body = clauses[0]
        prompt += f" with {body}"
    for name in negated:
        prompt += f" without {name}"
    return prompt


def parse_benchmark_prompt(prompt: str) -> tuple[ParsedPrompt, list[Constraint]]:
    """Deterministic inverse of synthesize_prompt.

    Relation clauses are consumed first so their nouns do not double as count
    clauses; negated names are singularized so they line up with scene names.
    """
    text = prompt.lower()
    constraints: list[Constraint] = []
    slots: dict[str, list[str | None]] = {}
    order: list[str] = []

    negations: list[str] = []
    for match in _WITHOUT.finditer(text):
        negations.append(_singular(match.group(1)))
    text = _WITHOUT.sub(" ", text)

    def add_instances(name: str, attribute: str | None, n: int):
        if name not in slots:
            slots[name] = []
            order.append(name)
        slots[name].extend([attribute] * n)

    for match in _REL_CLAUSE.finditer(text):
        subject, rel_phrase, obj = match.groups()
        subject, obj = _singular(subject), _singular(obj)
        rel = next(k for k, v in REL_PHRASES.items() if v == rel_phrase)
        constraints.append(Relation(subject=subject, rel=rel, object=obj))
        add_instances(subject, None, 1)
        add_instances(obj, None, 1)
    text = _REL_CLAUSE.sub(" ", text)

    for match in _COUNT_CLAUSE.finditer(text):
        word, color, form = match.groups()
        n = 1 if word in ("a", "an") else NUMBER_WORDS.index(word) + 1
        name = _singular(form)
        add_instances(name, color, n)
        if color:
            constraints.append(AttributeCount(attribute=color, name=name, n=n))
        else:
            constraints.append(CountEquals(name=name, n=n))

    for name in negations:
        constraints.append(Absent(name=name))
        if name not in slots:
            add_instances(name, None, 1)

    parsed = ParsedPrompt(
        objects=tuple((name, tuple(slots[name])) for name in order),
        negations=tuple(negations),
    )
    return parsed, constraints


def make_case(case_id: str, task_type: str, constraints: list[Constraint]) -> TaskCase:
    return TaskCase(
        id=case_id,
        prompt=synthesize_prompt(constraints),
        task_type=task_type,
        constraints=tuple(constraints),
    )


def generate_suite(per_task: int, seed: int = 0) -> list[TaskCase]:
    """A benchmark-shaped suite: per_task cases of each of the four tasks."""
    rng = np.random.default_rng(seed)
    cases: list[TaskCase] = []
    for i in range(per_task):
        name = NOUNS[rng.integers(len(NOUNS))]
        cases.append(make_case(f"neg-{i:03d}", "negation", [Absent(name=name)]))
    for i in range(per_task):
        name = NOUNS[rng.integers(len(NOUNS))]
        n = int(rng.integers(1, 6))
        cases.append(make_case(f"num-{i:03d}", "numeracy", [CountEquals(name=name, n=n)]))
    for i in range(per_task):
        name = NOUNS[rng.integers(len(NOUNS))]
        color = COLORS[rng.integers(len(COLORS))]
        n = int(rng.integers(1, 4))
        cases.append(
            make_case(f"att-{i:03d}", "attribute", [AttributeCount(attribute=color, name=name, n=n)])
        )
    rels = tuple(REL_PHRASES)
    for i in range(per_task):
        subject, obj = rng.choice(len(NOUNS), size=2, replace=False)
        rel = rels[rng.integers(len(rels))]
        cases.append(
            make_case(
                f"spa-{i:03d}",
                "spatial",
                [Relation(subject=NOUNS[subject], rel=rel, object=NOUNS[obj])],
            )
        )
    return cases


def random_case(case_id: str, rng: np.random.Generator, max_objects: int = 6) -> TaskCase:
    """A satisfiable multi-constraint case over distinct nouns.

    Each constraint claims its own noun(s), so constraints never interact and
    satisfiability is structural; the instance budget stays within
    max_objects.
    """
    available = list(NOUNS)
    rng.shuffle(available)
    budget = max_objects
    constraints: list[Constraint] = []
    n_constraints = int(rng.integers(1, 4))
    attempts = 0
    while len(constraints) < n_constraints and available and attempts < 32:
        attempts += 1
        kind = int(rng.integers(4))
        if kind == 0:
            constraints.append(Absent(name=available.pop()))
        elif kind == 1 and budget >= 1:
            n = int(rng.integers(1, min(3, budget) + 1))
            constraints.append(CountEquals(name=available.pop(), n=n))
            budget -= n
        elif kind == 2 and budget >= 1:
            n = int(rng.integers(1, min(2, budget) + 1))
            color = COLORS[rng.integers(len(COLORS))]
            constraints.append(AttributeCount(attribute=color, name=available.pop(), n=n))
            budget -= n
        elif kind == 3 and budget >= 2 and len(available) >= 2:
            rel = tuple(REL_PHRASES)[rng.integers(len(REL_PHRASES))]
            constraints.append(Relation(subject=available.pop(), rel=rel, object=available.pop()))
            budget -= 2
        else:
            continue
    if not constraints:
        constraints.append(CountEquals(name=available.pop(), n=1))
    return make_case(case_id, "mixed", constraints)
