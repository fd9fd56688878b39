"""Detector queries, detection, and instance-ID labeling of raw detections.

Turns a parsed prompt into open-vocabulary queries, runs them against a
backend, and organizes the results into an ID-labeled layout. Instance IDs
live in a per-(attribute, base name) space: "pink dolphin #1" and
"blue dolphin #1" coexist.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backends import DetectionBackend
from .errors import UnmappableQuery
from .geometry import BoundingBox, ImageRef, Layout, ObjectLabel
from .prompts import ParsedPrompt

DEFAULT_THRESHOLD = 0.15

# Two detections of the same group overlapping this much are one object.
DUPLICATE_IOU = 0.9

VOWELS = "aeiou"


@dataclass(frozen=True)
class Detection:
    """One raw detector hit."""

    query: str
    score: float
    box: BoundingBox

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class DetectionContext:
    """The labeled current layout plus non-attributed fallback counts.

    Supplementary counts exist only for base names whose attributed
    detections fell short of the required instances; they let the controller
    decide between adding objects and re-attributing existing ones.
    """

    layout: Layout
    supplementary_counts: tuple[tuple[str, int], ...] = field(default_factory=tuple)


def _query_phrase(attribute: str | None, base_name: str) -> str:
    phrase = f"{attribute} {base_name}" if attribute else base_name
    article = "an" if phrase[0].lower() in VOWELS else "a"
    return f"image of {article} {phrase}"


def query_map(parsed: ParsedPrompt) -> dict[str, tuple[str | None, str]]:
    """Query string -> (attribute, base_name), one entry per distinct pair."""
    mapping: dict[str, tuple[str | None, str]] = {}
    for attr, name, _ in parsed.requirement_pairs():
        mapping.setdefault(_query_phrase(attr, name), (attr, name))
    return mapping


def build_queries(parsed: ParsedPrompt) -> list[str]:
    """One detector query per distinct (attribute, base name) pair, prompt order."""
    return list(query_map(parsed))


def run_detection(
    image: ImageRef,
    queries: list[str],
    threshold: float,
    backend: DetectionBackend,
) -> list[Detection]:
    """Run queries against the backend, keeping detections at or above threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    raw = backend.detect(image, queries, threshold)
    return [d for d in raw if d.score >= threshold]


def _dedupe(group: list[Detection]) -> list[Detection]:
    kept: list[Detection] = []
    for det in sorted(group, key=lambda d: (-d.score, d.box.x)):
        if all(det.box.iou(k.box) <= DUPLICATE_IOU for k in kept):
            kept.append(det)
    return kept


def assign_instance_ids(detections: list[Detection], parsed: ParsedPrompt) -> DetectionContext:
    """Label detections with per-group instance IDs and collect fallback counts.

    Within each (attribute, base name) group, detections sorted by descending
    score (ties by ascending x) receive ids 1..n. Detections whose query maps
    to a base name the prompt never required with that attribute are treated
    as supplementary counts, recorded only when the attributed requirement is
    actually unmet.
    """
    mapping = query_map(parsed)
    requirements = {(attr, name): n for attr, name, n in parsed.requirement_pairs()}
    known_names = set(parsed.base_names())

    groups: dict[tuple[str | None, str], list[Detection]] = {}
    extra_counts: dict[str, int] = {}
    for det in detections:
        if det.query in mapping:
            groups.setdefault(mapping[det.query], []).append(det)
            continue
        # Supplementary base-name query: "image of a/an <name>" with no slot.
        for name in known_names:
            if det.query == _query_phrase(None, name):
                extra_counts[name] = extra_counts.get(name, 0) + 1
                break
        else:
            raise UnmappableQuery(f"query {det.query!r} maps to no parsed object")

    deduped: dict[tuple[str | None, str], list[Detection]] = {}
    attributed_boxes: dict[str, list[BoundingBox]] = {}
    for attr, name, _ in parsed.requirement_pairs():
        group = _dedupe(groups.get((attr, name), []))
        deduped[(attr, name)] = group
        if attr is not None:
            attributed_boxes.setdefault(name, []).extend(det.box for det in group)

    entries: list[tuple[ObjectLabel, BoundingBox]] = []
    deduped_counts: dict[tuple[str | None, str], int] = {}
    for attr, name, _ in parsed.requirement_pairs():
        group = deduped[(attr, name)]
        if attr is None:
            # An unattributed query re-detects attributed instances of the
            # same name; keep the attributed identity, drop the duplicate.
            group = [
                det
                for det in group
                if all(det.box.iou(b) <= DUPLICATE_IOU for b in attributed_boxes.get(name, []))
            ]
        deduped_counts[(attr, name)] = len(group)
        for i, det in enumerate(group, start=1):
            entries.append((ObjectLabel(base_name=name, attribute=attr, instance_id=i), det.box))

    supplementary: list[tuple[str, int]] = []
    for name, count in extra_counts.items():
        short = any(
            attr is not None and deduped_counts.get((attr, obj_name), 0) < required
            for (attr, obj_name), required in requirements.items()
            if obj_name == name
        )
        if short:
            supplementary.append((name, count))

    return DetectionContext(layout=Layout(entries=tuple(entries)), supplementary_counts=tuple(supplementary))


def detect_objects(
    image: ImageRef,
    parsed: ParsedPrompt,
    threshold: float,
    backend: DetectionBackend,
) -> DetectionContext:
    """Full detection step: queries, supplementary follow-ups, ID assignment.

    Supplementary base-name queries are issued only after an attributed
    requirement came up short, keeping detector calls minimal.
    """
    queries = build_queries(parsed)
    detections = run_detection(image, queries, threshold, backend)
    ctx = assign_instance_ids(detections, parsed)

    follow_up: list[str] = []
    per_group: dict[tuple[str | None, str], int] = {}
    for label in ctx.layout.labels():
        per_group[label.group] = max(per_group.get(label.group, 0), label.instance_id)
    for attr, name, required in parsed.requirement_pairs():
        if attr is None or per_group.get((attr, name), 0) >= required:
            continue
        base_query = _query_phrase(None, name)
        if base_query not in queries and base_query not in follow_up:
            follow_up.append(base_query)
    if not follow_up:
        return ctx
    extra = run_detection(image, follow_up, threshold, backend)
    return assign_instance_ids(detections + extra, parsed)
