"""Layout diffing against the in-context example fixtures and properties."""

import numpy as np
import pytest

from layoutloop.geometry import BoundingBox, Layout, ObjectLabel, boxes_aligned, format_label
from layoutloop.planner import EditOp, diff_layouts, is_terminal
from layoutloop.simulation import apply_plan

from conftest import example_layout, make_layout

# Expected (kind, label) per in-context example, in plan order.
GENERATION_EXPECTED = {
    1: [("add", "bird #1")],
    2: [
        ("reposition", "green car #1"),
        ("reposition", "blue truck #1"),
        ("add", "bird #1"),
    ],
    3: [("delete", "blue dolphin #1")],
    4: [("attr_change", "pink dolphin #1")],
    5: [],
}
EDITING_EXPECTED = {
    1: [("reposition", "blue truck #1"), ("reposition", "green car #1")],
    2: [("reposition", "green car #1"), ("reposition", "blue truck #1")],
    3: [("attr_change", "pink dolphin #1")],
    4: [("delete", "bowl #1")],
    5: [("add", "bowl #3")],
}


def plan_signature(plan):
    return [(op.kind, op.canonical) for op in plan]


class TestGoldenExamples:
    def test_generation_examples(self, generation_examples):
        for example in generation_examples:
            plan = diff_layouts(
                example_layout(example["current"]), example_layout(example["updated"])
            )
            assert plan_signature(plan) == GENERATION_EXPECTED[example["index"]], (
                f"generation example {example['index']}"
            )
            assert plan.respects_order()

    def test_editing_examples(self, editing_examples):
        for example in editing_examples:
            plan = diff_layouts(
                example_layout(example["current"]), example_layout(example["updated"])
            )
            assert plan_signature(plan) == EDITING_EXPECTED[example["index"]], (
                f"editing example {example['index']}"
            )
            assert plan.respects_order()

    def test_unchanged_layout_is_terminal(self, generation_examples):
        example = generation_examples[4]
        assert example["index"] == 5
        plan = diff_layouts(
            example_layout(example["current"]), example_layout(example["updated"])
        )
        assert is_terminal(plan)

    def test_attr_change_without_move_has_no_reposition(self, generation_examples):
        example = generation_examples[3]
        plan = diff_layouts(
            example_layout(example["current"]), example_layout(example["updated"])
        )
        op = plan.ops[0]
        assert op.kind == "attr_change"
        assert op.prior_attribute is None
        assert op.label.attribute == "pink"

    def test_editing_example1_boxes(self, editing_examples):
        example = editing_examples[0]
        plan = diff_layouts(
            example_layout(example["current"]), example_layout(example["updated"])
        )
        car = next(op for op in plan if op.canonical == "green car #1")
        assert car.from_box.x == pytest.approx(0.027)
        assert car.to_box.x == pytest.approx(0.327)
        truck = next(op for op in plan if op.canonical == "blue truck #1")
        assert truck.to_box == BoundingBox(0.350, 0.369, 0.472, 0.408)


class TestDiffProperties:
    def test_diff_of_identical_layout_empty(self):
        layout = make_layout(
            ("car", "green", 1, (0.0, 0.4, 0.3, 0.2)), ("truck", "blue", 1, (0.4, 0.4, 0.3, 0.2))
        )
        assert len(diff_layouts(layout, layout)) == 0

    def test_aligned_pairs_generate_zero_ops(self):
        curr = make_layout(("cat", None, 1, (0.1, 0.1, 0.2, 0.2)))
        nxt = make_layout(("cat", None, 1, (0.105, 0.095, 0.2, 0.2)))
        assert len(diff_layouts(curr, nxt, eps=0.02)) == 0

    def test_move_and_recolor_emits_two_ops(self):
        curr = make_layout(("dolphin", "blue", 1, (0.1, 0.1, 0.2, 0.2)))
        nxt = make_layout(("dolphin", "pink", 1, (0.6, 0.1, 0.2, 0.2)))
        plan = diff_layouts(curr, nxt)
        assert plan.kinds() == ["reposition", "attr_change"]
        reposition, attr_change = plan.ops
        assert reposition.label.attribute == "blue"
        assert attr_change.prior_attribute == "blue"
        assert attr_change.to_box == nxt.entries[0][1]

    def test_iou_gate_demotes_teleporting_attr_pair(self):
        curr = make_layout(("dolphin", "blue", 1, (0.0, 0.0, 0.1, 0.1)))
        nxt = make_layout(("dolphin", "pink", 1, (0.8, 0.8, 0.1, 0.1)))
        plan = diff_layouts(curr, nxt, iou_gate=0.3)
        assert sorted(plan.kinds()) == ["add", "delete"]

    def test_placement_order_by_descending_area(self):
        curr = make_layout(("cat", None, 1, (0.0, 0.0, 0.1, 0.1)))
        nxt = make_layout(
            ("cat", None, 1, (0.5, 0.5, 0.1, 0.1)),
            ("dog", None, 1, (0.0, 0.0, 0.4, 0.4)),
            ("bird", None, 1, (0.8, 0.0, 0.15, 0.15)),
        )
        plan = diff_layouts(curr, nxt)
        areas = [op.to_box.area for op in plan]
        assert areas == sorted(areas, reverse=True)
        assert plan.respects_order()

    def test_soundness_against_pure_executor(self):
        rng = np.random.default_rng(23)
        names = ["cat", "dog", "bowl", "car"]
        attrs = [None, "red", "blue"]
        for _ in range(300):
            curr = _random_layout(rng, names, attrs)
            nxt = _random_layout(rng, names, attrs)
            plan = diff_layouts(curr, nxt, eps=0.02)
            result = apply_plan(curr, plan)
            assert _layouts_match(result, nxt, eps=0.02)

    def test_terminal(self):
        assert is_terminal(diff_layouts(Layout(), Layout()))
        plan = diff_layouts(
            Layout(), make_layout(("cat", None, 1, (0.1, 0.1, 0.2, 0.2)))
        )
        assert not is_terminal(plan)


def _random_layout(rng, names, attrs):
    entries = []
    used = set()
    for _ in range(rng.integers(0, 9)):
        key = (
            names[rng.integers(len(names))],
            attrs[rng.integers(len(attrs))],
            int(rng.integers(1, 4)),
        )
        if key in used:
            continue
        used.add(key)
        x, y = rng.integers(0, 700, size=2) / 1000
        w, h = rng.integers(50, 300, size=2) / 1000
        entries.append((ObjectLabel(key[0], key[1], key[2]), BoundingBox(x, y, w, h)))
    return Layout(entries=tuple(entries))


def _layouts_match(a: Layout, b: Layout, eps: float) -> bool:
    if len(a) != len(b):
        return False
    remaining = list(b.entries)
    for label, box in a.entries:
        hit = None
        for candidate, (other_label, other_box) in enumerate(remaining):
            if format_label(other_label) == format_label(label) and boxes_aligned(
                box, other_box, eps
            ):
                hit = candidate
                break
        if hit is None:
            return False
        remaining.pop(hit)
    return True


class TestEditOpInvariants:
    def test_add_shape(self):
        with pytest.raises(ValueError):
            EditOp(kind="add", label=ObjectLabel("cat"), from_box=BoundingBox(0, 0, 0.1, 0.1))

    def test_delete_shape(self):
        with pytest.raises(ValueError):
            EditOp(kind="delete", label=ObjectLabel("cat"), to_box=BoundingBox(0, 0, 0.1, 0.1))

    def test_reposition_requires_distinct_boxes(self):
        box = BoundingBox(0.1, 0.1, 0.2, 0.2)
        with pytest.raises(ValueError):
            EditOp(kind="reposition", label=ObjectLabel("cat"), from_box=box, to_box=box)

    def test_attr_change_requires_actual_change(self):
        with pytest.raises(ValueError):
            EditOp(
                kind="attr_change",
                label=ObjectLabel("cat", "blue"),
                to_box=BoundingBox(0, 0, 0.1, 0.1),
                prior_attribute="blue",
            )
