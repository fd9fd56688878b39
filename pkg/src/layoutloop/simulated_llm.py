"""A deterministic chat endpoint standing in for the live controller.

The transport receives the real rendered prompts, answers in the real reply
grammar, and derives its answers from the rule-based benchmark parser plus
the oracle controller, so end-to-end runs exercise the genuine prompt and
parse paths with zero external services. Editing instructions go through a
small verb grammar (remove/add/move/change); anything it cannot read leaves
the layout unchanged, which is the fail-safe the loop expects.
"""

from __future__ import annotations

import re

from .benchmark import COLORS, NOUNS, _PLURALS, parse_benchmark_prompt
from .evaluation import TaskCase
from .geometry import DEFAULT_EPS, BoundingBox, ImageRef, Layout, ObjectLabel, boxes_aligned
from .mock_backend import MockBackend, SceneObject
from .prompts import parse_object_list, render_layout
from .simulation import (
    ErrorProfile,
    oracle_controller,
    scan_free_position,
    simulate_generation,
)

_NOUN_FORMS = sorted(list(_PLURALS) + list(NOUNS), key=len, reverse=True)
_PHRASE = rf"(?:({'|'.join(COLORS)})\s+)?({'|'.join(re.escape(n) for n in _NOUN_FORMS)})"

_REMOVE = re.compile(rf"remove\s+(?:the\s+)?(leftmost|rightmost)?\s*{_PHRASE}", re.I)
_ADD = re.compile(rf"add\s+(?:a|an|one)\s+{_PHRASE}", re.I)
_MOVE = re.compile(rf"move\s+(?:the\s+)?{_PHRASE}\s+to\s+the\s+(left|right|top|bottom)", re.I)
_RECOLOR = re.compile(
    rf"change\s+(?:the\s+)?(?:color\s+of\s+(?:the\s+)?)?{_PHRASE}\s+(?:from\s+\w+\s+)?to\s+({'|'.join(COLORS)})",
    re.I,
)

_EDITING_MARKER = "Move the green car to the right and make the blue truck larger"
_PARSER_MARKER = "Excellent Parser"
_CONTROLLER_MARKER = "Expert Bounding Box Adjuster"


def _last_labeled(text: str, tag: str) -> str:
    value = None
    for line in text.split("\n"):
        stripped = line.strip()
        if stripped.startswith(tag):
            value = stripped[len(tag):].strip()
    if value is None:
        raise ValueError(f"prompt has no {tag!r} line")
    return value


def _singular(form: str) -> str:
    return _PLURALS.get(form, form)


def _match_entries(layout: Layout, color: str | None, form: str) -> list[int]:
    name = _singular(form.lower())
    return [
        i
        for i, (label, _) in enumerate(layout.entries)
        if label.base_name == name and (color is None or label.attribute == color.lower())
    ]


def apply_edit_instruction(instruction: str, b_curr: Layout) -> Layout:
    """Interpret a remove/add/move/change instruction as a new layout."""
    entries = list(b_curr.entries)

    match = _REMOVE.search(instruction)
    if match:
        which, color, form = match.groups()
        candidates = _match_entries(b_curr, color, form)
        if candidates:
            if which and which.lower() == "rightmost":
                target = max(candidates, key=lambda i: entries[i][1].x)
            else:
                target = min(candidates, key=lambda i: entries[i][1].x)
            del entries[target]
        return Layout(entries=tuple(entries))

    match = _ADD.search(instruction)
    if match:
        color, form = match.groups()
        name = _singular(form.lower())
        attribute = color.lower() if color else None
        used = [
            label.instance_id for label, _ in entries if label.group == (attribute, name)
        ]
        label = ObjectLabel(
            base_name=name, attribute=attribute, instance_id=max(used, default=0) + 1
        )
        entries.append((label, scan_free_position([b for _, b in entries])))
        return Layout(entries=tuple(entries))

    match = _MOVE.search(instruction)
    if match:
        color, form, direction = match.groups()
        candidates = _match_entries(b_curr, color, form)
        if candidates:
            i = candidates[0]
            label, box = entries[i]
            # Absolute region targets keep the instruction idempotent across
            # rounds: once the object sits in the region, nothing changes.
            direction = direction.lower()
            x, y = box.x, box.y
            if direction in ("left", "right"):
                x = 0.02 if direction == "left" else 0.98 - box.w
            else:
                y = 0.02 if direction == "top" else 0.98 - box.h
            target = BoundingBox(x=x, y=y, w=box.w, h=box.h)
            if not boxes_aligned(box, target, DEFAULT_EPS):
                entries[i] = (label, target)
        return Layout(entries=tuple(entries))

    match = _RECOLOR.search(instruction)
    if match:
        color, form, new_color = match.groups()
        candidates = _match_entries(b_curr, color, form)
        if candidates:
            i = candidates[0]
            label, box = entries[i]
            entries[i] = (
                ObjectLabel(
                    base_name=label.base_name,
                    attribute=new_color.lower(),
                    instance_id=label.instance_id,
                ),
                box,
            )
        return Layout(entries=tuple(entries))

    return b_curr


class SimulatedControllerTransport:
    """Chat transport answering parser and controller prompts deterministically.

    When constructed with a case, its constraints drive the proposals;
    otherwise constraints are derived from the benchmark prompt grammar.
    """

    def __init__(self, case: TaskCase | None = None, mode: str = "extent"):
        self.case = case
        self.mode = mode

    def __call__(self, payload: dict) -> tuple[str, int]:
        text = payload["messages"][-1]["content"]
        if _PARSER_MARKER in text:
            return self._parse_reply(text), 0
        if _CONTROLLER_MARKER in text:
            return self._controller_reply(text), 0
        raise ValueError("prompt matches neither controller role")

    def _parse_reply(self, text: str) -> str:
        user_prompt = _last_labeled(text, "User prompt:")
        parsed, _ = parse_benchmark_prompt(user_prompt)
        objects = [(name, [*slots]) for name, slots in parsed.objects]
        negation = ", ".join(parsed.negations)
        return (
            "Reasoning: rule-based parse of the scene description.\n"
            f"Objects: {objects!r}\n"
            f"Negation: {negation}"
        )

    def _controller_reply(self, text: str) -> str:
        user_prompt = _last_labeled(text, "User prompt:")
        current_text = _last_labeled(text, "Current Objects:")
        parsed, constraints = parse_benchmark_prompt(user_prompt)
        vocabulary = parsed.base_names() or list(NOUNS)
        b_curr = parse_object_list(current_text, vocabulary)
        if _EDITING_MARKER in text:
            b_next = apply_edit_instruction(user_prompt, b_curr)
        elif self.case is not None:
            b_next = oracle_controller(self.case, b_curr, mode=self.mode)
        elif constraints:
            case = TaskCase(
                id="derived", prompt=user_prompt, task_type="mixed", constraints=tuple(constraints)
            )
            b_next = oracle_controller(case, b_curr, mode=self.mode)
        else:
            b_next = b_curr
        return (
            "Reasoning: deterministic constraint check against the prompt.\n"
            f"Updated Objects: {render_layout(b_next)}"
        )


def layout_to_scene(layout: Layout) -> list[SceneObject]:
    return [
        SceneObject(name=label.base_name, attribute=label.attribute, box=box)
        for label, box in layout
    ]


def layout_from_scene(scene: tuple[SceneObject, ...]) -> Layout:
    counters: dict[tuple[str | None, str], int] = {}
    entries = []
    for obj in scene:
        key = (obj.attribute, obj.name)
        counters[key] = counters.get(key, 0) + 1
        entries.append(
            (
                ObjectLabel(base_name=obj.name, attribute=obj.attribute, instance_id=counters[key]),
                obj.box,
            )
        )
    return Layout(entries=tuple(entries))


class MockSceneGenerator:
    """Best-effort open-loop generator over the mock backend.

    Prompts in the benchmark grammar become a canonical satisfying scene,
    corrupted by the error profile; unparseable prompts yield an empty scene.
    """

    def __init__(self, backend: MockBackend, profile: ErrorProfile | None = None):
        self.backend = backend
        self.profile = profile or ErrorProfile()

    def __call__(self, prompt: str, seed: int) -> ImageRef:
        _, constraints = parse_benchmark_prompt(prompt)
        if not constraints:
            return self.backend.register_scene([])
        case = TaskCase(id="gen", prompt=prompt, task_type="mixed", constraints=tuple(constraints))
        layout = simulate_generation(case, self.profile, seed)
        return self.backend.register_scene(layout_to_scene(layout))
