"""Prompt construction and reply parsing for the two controller roles.

The prompt texts live as verbatim data files under templates/ and are never
edited programmatically beyond placeholder substitution; a golden-file test
pins them byte-for-byte. Replies are parsed by grammar: free-text reasoning
is skipped and only labeled lines ("Objects:", "Negation:", "Updated
Objects:") are consumed, because real models pad their answers with prose.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import GrammarError, LabelError, RangeViolation
from .geometry import BoundingBox, Layout, ObjectLabel, format_label, parse_label

PARSER_PROMPT_PLACEHOLDER = "{the input user prompt}"
CONTROLLER_EXAMPLES_PLACEHOLDER = (
    "{In-context examples for self-correcting image generation or image editing}"
)
CONTROLLER_OBJECTS_PLACEHOLDER = "{a list of detected key objects}"

MODE_SELF_CORRECTION = "self_correction"
MODE_EDITING = "editing"
CONTROLLER_MODES = (MODE_SELF_CORRECTION, MODE_EDITING)

# Raw coordinates outside this window signal a hallucinating controller and
# are rejected instead of clamped.
RAW_COORD_MIN = -0.05
RAW_COORD_MAX = 1.05


def _load(name: str) -> str:
    return resources.files("layoutloop.templates").joinpath(name).read_text(encoding="utf-8")


PARSER_TEMPLATE = _load("parser_prompt.txt")
CONTROLLER_TEMPLATE = _load("controller_prompt.txt")
SELF_CORRECTION_EXAMPLES = _load("examples_self_correction.txt")
EDITING_EXAMPLES = _load("examples_editing.txt")


@dataclass(frozen=True)
class ParsedPrompt:
    """Key object details extracted from a user prompt.

    `objects` holds one (base_name, attribute slots) pair per object noun; a
    slot is None when that instance carries no attribute. Negated names may
    also appear in `objects` (absence still has to be checked by detection).
    """

    objects: tuple[tuple[str, tuple[str | None, ...]], ...] = field(default_factory=tuple)
    negations: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(
            self, "objects", tuple((name, tuple(slots)) for name, slots in self.objects)
        )
        object.__setattr__(self, "negations", tuple(self.negations))
        for name, slots in self.objects:
            if not slots:
                raise ValueError(f"object {name!r} has no instance slots")

    def base_names(self) -> list[str]:
        return [name for name, _ in self.objects]

    def requirement_pairs(self) -> list[tuple[str | None, str, int]]:
        """Distinct (attribute, base_name, required count) triples in prompt order."""
        counts: dict[tuple[str | None, str], int] = {}
        order: list[tuple[str | None, str]] = []
        for name, slots in self.objects:
            for attr in slots:
                key = (attr, name)
                if key not in counts:
                    counts[key] = 0
                    order.append(key)
                counts[key] += 1
        return [(attr, name, counts[(attr, name)]) for attr, name in order]


@dataclass(frozen=True)
class ChatExchange:
    """One request/reply pair with the raw reply retained verbatim."""

    prompt_text: str
    reply_text: str
    model_id: str
    latency_ms: int = 0
    retries: int = 0


def build_parser_prompt(user_prompt: str) -> str:
    """Instantiate the parser role prompt for one user prompt."""
    if not user_prompt:
        raise ValueError("user prompt must be non-empty")
    return PARSER_TEMPLATE.replace(PARSER_PROMPT_PLACEHOLDER, user_prompt)


def build_controller_prompt(user_prompt: str, b_curr: Layout, mode: str = MODE_SELF_CORRECTION) -> str:
    """Instantiate the box-adjuster prompt with the detected layout injected.

    The in-context example block is selected by mode; coordinates are printed
    to 3 decimal places, matching the example texts.
    """
    if mode not in CONTROLLER_MODES:
        raise ValueError(f"unknown controller mode {mode!r}")
    examples = SELF_CORRECTION_EXAMPLES if mode == MODE_SELF_CORRECTION else EDITING_EXAMPLES
    mapping = {
        CONTROLLER_EXAMPLES_PLACEHOLDER: examples,
        PARSER_PROMPT_PLACEHOLDER: user_prompt,
        CONTROLLER_OBJECTS_PLACEHOLDER: render_layout(b_curr),
    }
    pattern = "|".join(re.escape(k) for k in mapping)
    return re.sub(pattern, lambda m: mapping[m.group(0)], CONTROLLER_TEMPLATE)


def render_layout(layout: Layout) -> str:
    """Render a layout as the bracketed object list used in both directions."""
    parts = []
    for label, box in layout:
        coords = ", ".join(f"{v:.3f}" for v in box.as_list())
        parts.append(f"('{format_label(label)}', [{coords}])")
    return "[" + ", ".join(parts) + "]"


def _labeled_lines(reply: str, tag: str) -> list[tuple[int, str]]:
    """(byte offset, remainder) for each line starting with `tag` after indent."""
    out = []
    offset = 0
    for line in reply.split("\n"):
        stripped = line.lstrip()
        if stripped.startswith(tag):
            indent = len(line) - len(stripped)
            out.append((offset + indent, stripped[len(tag):].strip()))
        offset += len(line.encode("utf-8")) + 1
    return out


def _literal(text: str, offset: int):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError) as exc:
        raise GrammarError(f"malformed list literal: {exc}", offset=offset) from None


def parse_parser_response(reply: str) -> ParsedPrompt:
    """Parse the parser role's reply into object/negation structure.

    Expects exactly one "Objects:" line holding a list of
    ('name', [attribute-or-None, ...]) tuples, and at most one comma-separated
    "Negation:" line.
    """
    object_lines = _labeled_lines(reply, "Objects:")
    if not object_lines:
        raise GrammarError("reply has no 'Objects:' line", offset=0)
    if len(object_lines) > 1:
        raise GrammarError("reply has more than one 'Objects:' line", offset=object_lines[1][0])
    offset, payload = object_lines[0]
    raw = _literal(payload, offset)
    if not isinstance(raw, list):
        raise GrammarError("'Objects:' payload is not a list", offset=offset)
    objects = []
    for item in raw:
        if (
            not isinstance(item, tuple)
            or len(item) != 2
            or not isinstance(item[0], str)
            or not isinstance(item[1], list)
        ):
            raise GrammarError(f"object entry {item!r} is not ('name', [slots])", offset=offset)
        name, slots = item
        for slot in slots:
            if slot is not None and not isinstance(slot, str):
                raise GrammarError(f"attribute slot {slot!r} is neither string nor None", offset=offset)
        objects.append((name, tuple(slots)))

    negation_lines = _labeled_lines(reply, "Negation:")
    if len(negation_lines) > 1:
        raise GrammarError("reply has more than one 'Negation:' line", offset=negation_lines[1][0])
    negations: tuple[str, ...] = ()
    if negation_lines:
        negations = tuple(p.strip() for p in negation_lines[0][1].split(",") if p.strip())
    return ParsedPrompt(objects=tuple(objects), negations=negations)


def parse_object_list(text: str, vocabulary: list[str], offset: int = 0) -> Layout:
    """Parse "[('label #id', [x, y, w, h]), ...]" into a validated Layout."""
    raw = _literal(text, offset)
    if not isinstance(raw, list):
        raise GrammarError("object list payload is not a list", offset=offset)
    entries = []
    for item in raw:
        if (
            not isinstance(item, tuple)
            or len(item) != 2
            or not isinstance(item[0], str)
            or not isinstance(item[1], list)
            or len(item[1]) != 4
        ):
            raise GrammarError(f"entry {item!r} is not ('label', [x, y, w, h])", offset=offset)
        label_text, coords = item
        for value in coords:
            if not isinstance(value, (int, float)):
                raise GrammarError(f"coordinate {value!r} is not a number", offset=offset)
            if not (RAW_COORD_MIN <= value <= RAW_COORD_MAX):
                raise RangeViolation(
                    f"coordinate {value} of {label_text!r} outside [{RAW_COORD_MIN}, {RAW_COORD_MAX}]"
                )
        try:
            label = parse_label(label_text, vocabulary)
        except LabelError as exc:
            raise GrammarError(str(exc), offset=offset) from None
        entries.append((label, BoundingBox(*coords)))
    try:
        return Layout(entries=tuple(entries))
    except LabelError as exc:
        raise GrammarError(str(exc), offset=offset) from None


def parse_controller_response(reply: str, vocabulary: list[str]) -> Layout:
    """Parse the controller's proposed layout from its reply.

    The LAST "Updated Objects:" line wins: reasoning text may restate the
    list before committing to the final answer.
    """
    lines = _labeled_lines(reply, "Updated Objects:")
    if not lines:
        raise GrammarError("reply has no 'Updated Objects:' line", offset=0)
    offset, payload = lines[-1]
    return parse_object_list(payload, vocabulary, offset=offset)
