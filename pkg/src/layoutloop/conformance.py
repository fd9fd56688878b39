"""Protocol conformance checks shared by every backend implementation.

The same checks run against the in-process mock, the mock served over HTTP,
and the sidecar service: schema and shape agreement, seeded determinism,
and the invert/full-freeze/forward round trip within a stated tolerance
(zero for the mock, measured for approximate real inversion).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundingBox
from .latent import FreezeSchedule, CompositionPlan, recompose

PROBE_TEXT = "conformance probe"
PROBE_BOX = BoundingBox(0.25, 0.25, 0.5, 0.5)


@dataclass(frozen=True)
class ConformanceCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ConformanceReport:
    checks: tuple[ConformanceCheck, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[ConformanceCheck]:
        return [c for c in self.checks if not c.passed]

    def format(self) -> str:
        return "\n".join(
            f"[{'PASS' if c.passed else 'FAIL'}] {c.name}" + (f": {c.detail}" if c.detail else "")
            for c in self.checks
        )


def run_conformance(backend, roundtrip_tol: float = 0.0) -> ConformanceReport:
    """Exercise every contract operation and collect pass/fail verdicts."""
    checks: list[ConformanceCheck] = []

    def check(name: str, fn):
        try:
            detail = fn() or ""
            checks.append(ConformanceCheck(name=name, passed=True, detail=str(detail)))
        except AssertionError as exc:
            checks.append(ConformanceCheck(name=name, passed=False, detail=str(exc)))
        except Exception as exc:  # noqa: BLE001 - verdicts, not crashes
            checks.append(
                ConformanceCheck(name=name, passed=False, detail=f"{type(exc).__name__}: {exc}")
            )

    channels, height, width = backend.latent_shape
    total = backend.total_steps
    probe = backend.pregenerate(PROBE_TEXT, PROBE_BOX)

    def meta():
        assert channels >= 1 and height >= 1 and width >= 1, "degenerate latent shape"
        assert total >= 2, "need at least two steps"
        assert isinstance(backend.schedule_id, str) and backend.schedule_id, "missing schedule id"

    check("metadata", meta)

    def detect_boundary():
        hits = backend.detect(probe, [f"image of a {PROBE_TEXT}"], 1.0)
        assert all(d.score >= 1.0 for d in hits), "detection below threshold returned"

    check("detect_threshold_boundary", detect_boundary)

    def detect_finds_probe():
        hits = backend.detect(probe, [f"image of a {PROBE_TEXT}"], 0.1)
        assert len(hits) == 1, f"expected the probe object, got {len(hits)} hits"
        assert hits[0].box.iou(PROBE_BOX) > 0.3, "probe box far from requested box"

    check("detect_finds_probe", detect_finds_probe)

    def segment_full():
        mask = backend.segment(probe, BoundingBox(0, 0, 1, 1))
        assert mask.shape == (height, width), f"mask {mask.shape} vs {(height, width)}"
        assert mask.grid.all(), "full-image box must cover every cell"

    check("segment_full_box", segment_full)

    def invert_shapes():
        stack = backend.invert(probe)
        assert stack.total_steps == total, f"{stack.total_steps} steps vs {total}"
        assert stack.grid_shape == (channels, height, width), f"grid {stack.grid_shape}"
        assert stack.handle, "inversion must return a referencable handle"

    check("invert_shapes", invert_shapes)

    def roundtrip():
        before = backend.export_image(probe)
        plan = CompositionPlan(
            resets=(),
            pastes=(),
            freeze=FreezeSchedule(total_steps=total, frozen_steps=total),
        )
        after_ref = recompose(probe, plan, seed=1234, backend=backend)
        after = backend.export_image(after_ref)
        error = float(np.max(np.abs(after - before)))
        assert error <= roundtrip_tol, f"round-trip error {error} > {roundtrip_tol}"
        return f"max abs error {error:.3g}"

    check("invert_full_freeze_forward_roundtrip", roundtrip)

    def seed_determinism():
        mask = backend.segment(probe, PROBE_BOX)
        plan = CompositionPlan(
            resets=(mask,),
            pastes=(),
            freeze=FreezeSchedule(total_steps=total, frozen_steps=total),
        )
        a = backend.export_image(recompose(probe, plan, seed=7, backend=backend))
        b = backend.export_image(recompose(probe, plan, seed=7, backend=backend))
        assert np.array_equal(a, b), "same seed must reproduce the same image"

    check("seed_determinism", seed_determinism)

    def transform_fits():
        target = BoundingBox(0.0, 0.0, 0.5, 0.5)
        moved = backend.transform(probe, PROBE_BOX, target)
        arr = backend.export_image(moved)
        assert arr.shape[-2:] == (height, width), "transform must keep canvas dims"
        assert float(np.abs(arr).sum()) > 0, "transform produced an empty canvas"

    check("transform_produces_content", transform_fits)

    def attribute_edit_changes():
        mask = backend.segment(probe, PROBE_BOX)
        edited = backend.attribute_edit(probe, mask, f"blue {PROBE_TEXT}")
        before = backend.export_image(probe)
        after = backend.export_image(edited)
        assert not np.array_equal(before[:, mask.grid], after[:, mask.grid]), (
            "edit left the masked region untouched"
        )
        outside = ~mask.grid
        assert np.allclose(before[:, outside], after[:, outside], atol=max(roundtrip_tol, 1e-6)), (
            "edit leaked outside the mask"
        )

    check("attribute_edit_masked", attribute_edit_changes)

    return ConformanceReport(checks=tuple(checks))
