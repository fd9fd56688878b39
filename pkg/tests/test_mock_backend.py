"""Mock backend: encoding tables, scene bookkeeping, manifest loading."""

import json

import numpy as np
import pytest

from layoutloop.errors import EmptyMask, UnknownImage
from layoutloop.geometry import BoundingBox, ObjectLabel
from layoutloop.latent import rasterize_box
from layoutloop.mock_backend import (
    ATTRIBUTE_OFFSETS,
    PRESENCE,
    MockBackend,
    SceneObject,
    attribute_offset,
    name_value,
)
from layoutloop.planner import EditOp, EditPlan
from layoutloop.latent import execute_plan


class TestEncoding:
    def test_documented_attribute_offsets(self):
        assert ATTRIBUTE_OFFSETS["blue"] == 0.2
        assert ATTRIBUTE_OFFSETS["pink"] == 0.7
        assert attribute_offset(None) == 0.0

    def test_name_values_deterministic_and_bounded(self):
        assert name_value("cat") == name_value("cat")
        for name in ("cat", "dog", "palm tree", "conformance probe"):
            assert -0.8 <= name_value(name) <= 0.8

    def test_painted_pattern(self):
        backend = MockBackend(grid=8)
        box = BoundingBox(0.0, 0.0, 0.25, 0.25)
        image = backend.register_scene([SceneObject("cat", "blue", box)])
        array = backend.export_image(image)
        cells = rasterize_box(box, 8, 8)
        assert np.allclose(array[0][cells], name_value("cat"))
        assert np.allclose(array[1][cells], 0.2)
        assert np.allclose(array[2][cells], PRESENCE)
        assert np.allclose(array[:, ~cells], 0.0)


class TestSchedule:
    def test_final_step_is_the_lifted_image(self):
        backend = MockBackend(grid=8)
        image = backend.register_scene([SceneObject("cat", None, BoundingBox(0, 0, 0.5, 0.5))])
        stack = backend.invert(image)
        assert stack.total_steps == 10
        assert np.array_equal(stack.steps[-1][:3], backend.export_image(image))
        assert np.array_equal(stack.steps[-1][3], np.zeros((8, 8), dtype=np.float32))

    def test_invert_registers_handle(self):
        backend = MockBackend(grid=8)
        image = backend.register_scene([])
        stack = backend.invert(image)
        assert stack.handle is not None
        assert stack.schedule_id == backend.schedule_id


class TestSegmentation:
    def test_rasterized_box(self):
        backend = MockBackend(grid=8)
        image = backend.register_scene([])
        mask = backend.segment(image, BoundingBox(0.25, 0.25, 0.5, 0.5))
        assert mask.cells == 16

    def test_empty_raises(self):
        backend = MockBackend(grid=8)
        image = backend.register_scene([])
        with pytest.raises(EmptyMask):
            backend.segment(image, BoundingBox(0.01, 0.01, 0.02, 0.02))

    def test_unknown_image(self):
        backend = MockBackend(grid=8)
        from layoutloop.geometry import ImageRef

        with pytest.raises(UnknownImage):
            backend.segment(ImageRef(handle="missing"), BoundingBox(0, 0, 1, 1))


class TestManifest:
    def test_manifest_round_trip(self, tmp_path):
        manifest = {
            "images": {
                "scene-1": {
                    "objects": [
                        {"name": "cat", "attribute": "blue", "box": [0.1, 0.1, 0.2, 0.2]},
                        {"name": "dog", "box": [0.5, 0.5, 0.2, 0.2], "score": 0.95},
                    ]
                }
            }
        }
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(manifest))
        backend = MockBackend(grid=16)
        refs = backend.load_manifest(str(path))
        assert [r.handle for r in refs] == ["scene-1"]
        scene = backend.scene_of(refs[0])
        assert scene[0] == SceneObject("cat", "blue", BoundingBox(0.1, 0.1, 0.2, 0.2))
        assert scene[1].score == 0.95


class TestSceneThroughLatentOps:
    def setup_method(self):
        self.backend = MockBackend(grid=16)
        self.image = self.backend.register_scene(
            [
                SceneObject("dolphin", "blue", BoundingBox(0.0, 0.25, 0.25, 0.25)),
                SceneObject("boat", None, BoundingBox(0.5, 0.25, 0.375, 0.25)),
            ]
        )

    def run_ops(self, *ops):
        plan = EditPlan(ops=tuple(ops))
        outcome = execute_plan(self.image, plan, seed=11, backend=self.backend)
        return self.backend.scene_of(outcome.image)

    def test_delete_removes_object(self):
        scene = self.run_ops(
            EditOp(
                kind="delete",
                label=ObjectLabel("dolphin", "blue", 1),
                from_box=BoundingBox(0.0, 0.25, 0.25, 0.25),
            )
        )
        assert [o.name for o in scene] == ["boat"]

    def test_add_appends_object_at_cell_box(self):
        scene = self.run_ops(
            EditOp(kind="add", label=ObjectLabel("bird", None, 1), to_box=BoundingBox(0.5, 0.625, 0.25, 0.25))
        )
        assert [o.name for o in scene] == ["dolphin", "boat", "bird"]
        bird = scene[-1]
        assert bird.box == BoundingBox(0.5, 0.625, 0.25, 0.25)

    def test_reposition_moves_object(self):
        scene = self.run_ops(
            EditOp(
                kind="reposition",
                label=ObjectLabel("dolphin", "blue", 1),
                from_box=BoundingBox(0.0, 0.25, 0.25, 0.25),
                to_box=BoundingBox(0.5, 0.625, 0.25, 0.25),
            )
        )
        dolphin = next(o for o in scene if o.name == "dolphin")
        assert dolphin.box.x == pytest.approx(0.5)
        assert dolphin.attribute == "blue"
        assert len([o for o in scene if o.name == "dolphin"]) == 1

    def test_attr_change_relabels_in_place(self):
        scene = self.run_ops(
            EditOp(
                kind="attr_change",
                label=ObjectLabel("dolphin", "pink", 1),
                to_box=BoundingBox(0.0, 0.25, 0.25, 0.25),
                prior_attribute="blue",
            )
        )
        dolphin = next(o for o in scene if o.name == "dolphin")
        assert dolphin.attribute == "pink"
        assert len(scene) == 2

    def test_detection_after_edit_sees_new_scene(self):
        plan = EditPlan(
            ops=(
                EditOp(kind="add", label=ObjectLabel("bird", None, 1), to_box=BoundingBox(0.5, 0.625, 0.25, 0.25)),
            )
        )
        outcome = execute_plan(self.image, plan, seed=11, backend=self.backend)
        hits = self.backend.detect(outcome.image, ["image of a bird"], 0.15)
        assert len(hits) == 1


class TestTransform:
    def test_crop_resize_into_target(self):
        backend = MockBackend(grid=16)
        box = BoundingBox(0.0, 0.0, 0.25, 0.25)
        image = backend.register_scene([SceneObject("cat", None, box)])
        target = BoundingBox(0.5, 0.5, 0.5, 0.5)
        moved = backend.transform(image, box, target)
        array = backend.export_image(moved)
        cells = rasterize_box(target, 16, 16)
        assert np.allclose(array[0][cells], name_value("cat"))
        assert np.allclose(array[:, ~cells], 0.0)
        scene = backend.scene_of(moved)
        assert scene == (SceneObject("cat", None, target),)


class TestDetect:
    def test_phrase_and_base_name_scores(self):
        backend = MockBackend(grid=16)
        image = backend.register_scene(
            [SceneObject("dog", "blue", BoundingBox(0.1, 0.1, 0.2, 0.2))]
        )
        exact = backend.detect(image, ["image of a blue dog"], 0.0)
        base = backend.detect(image, ["image of a dog"], 0.0)
        other = backend.detect(image, ["image of a red dog"], 0.0)
        assert exact[0].score == 0.9
        assert base[0].score == 0.8
        assert other == []


class TestPhraseSplitting:
    def test_cold_start_attributed_pregenerate(self):
        # No scene painted yet: the default vocabulary must still split the
        # phrase, or downstream evaluation sees a structurally wrong identity.
        backend = MockBackend(grid=16)
        ref = backend.pregenerate("pink balloon", BoundingBox(0.2, 0.2, 0.3, 0.3))
        scene = backend.scene_of(ref)
        assert scene[0].name == "balloon"
        assert scene[0].attribute == "pink"

    def test_unknown_phrase_falls_back_to_whole_name(self):
        backend = MockBackend(grid=16)
        ref = backend.pregenerate("conformance probe", BoundingBox(0.2, 0.2, 0.3, 0.3))
        scene = backend.scene_of(ref)
        assert scene[0].name == "conformance probe"
        assert scene[0].attribute is None

    def test_registered_names_extend_vocabulary(self):
        backend = MockBackend(grid=16, known_names=())
        backend.register_names(["gizmo"])
        ref = backend.pregenerate("tiny gizmo", BoundingBox(0.2, 0.2, 0.3, 0.3))
        assert backend.scene_of(ref)[0] == SceneObject(
            "gizmo", "tiny", BoundingBox(0.2, 0.2, 0.3, 0.3)
        )
