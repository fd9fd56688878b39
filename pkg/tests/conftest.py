"""Shared fixtures: example-block extraction and layout builders."""

from __future__ import annotations

import re
from pathlib import Path

import pytest

from layoutloop.geometry import BoundingBox, Layout, ObjectLabel
from layoutloop.prompts import EDITING_EXAMPLES, SELF_CORRECTION_EXAMPLES, parse_object_list

GOLDEN_DIR = Path(__file__).parent / "goldens"

# Base names appearing across the in-context examples.
EXAMPLE_VOCABULARY = [
    "car", "truck", "air balloon", "bird", "steam boat", "dolphin", "dog", "bowl",
]

_BLOCK = re.compile(
    r"- Example (\d+)\n(.*?)(?=\n- Example \d+|\Z)", re.S
)
_FIELD = re.compile(r"^\s{4}([A-Za-z ]+):\s?(.*)$", re.M)


def extract_examples(text: str) -> list[dict]:
    """Split an in-context example block into per-example field dicts."""
    examples = []
    for match in _BLOCK.finditer(text):
        fields = {}
        for field_match in _FIELD.finditer(match.group(2)):
            fields[field_match.group(1)] = field_match.group(2).strip()
        current = fields.get("Current Objects", fields.get("Current Output Objects"))
        examples.append(
            {
                "index": int(match.group(1)),
                "user_prompt": fields.get("User prompt", ""),
                "current": current,
                "updated": fields.get("Updated Objects"),
                "reasoning": fields.get("Reasoning", ""),
            }
        )
    return examples


@pytest.fixture(scope="session")
def generation_examples() -> list[dict]:
    return extract_examples(SELF_CORRECTION_EXAMPLES)


@pytest.fixture(scope="session")
def editing_examples() -> list[dict]:
    return extract_examples(EDITING_EXAMPLES)


def example_layout(text: str) -> Layout:
    return parse_object_list(text, EXAMPLE_VOCABULARY)


def make_layout(*entries: tuple[str, str | None, int, tuple[float, float, float, float]]) -> Layout:
    """Layout from (name, attribute, id, (x, y, w, h)) tuples."""
    return Layout(
        entries=tuple(
            (ObjectLabel(base_name=name, attribute=attr, instance_id=i), BoundingBox(*box))
            for name, attr, i, box in entries
        )
    )
