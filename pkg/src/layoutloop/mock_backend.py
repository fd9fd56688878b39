"""Deterministic in-process generation backend.

The mock makes every engine invariant exactly checkable:

- Images are float32 arrays of shape (3, H, W) at latent resolution.
  Scenes paint each object over its rasterized box; the background is 0.
- Each (name, attribute) pair has a constant pattern: channel 0 carries a
  name value derived by hashing into [-0.8, 0.8], channel 1 an attribute
  offset from ATTRIBUTE_OFFSETS (hash fallback), channel 2 the presence
  flag PRESENCE. The registry of patterns the mock has painted lets the
  forward pass decode pasted latents back to object identity, which is how
  scene ground truth survives a round of latent edits.
- Inversion is a fixed affine map per step: stack[t] = a_t * lift(image) +
  b_t with a/b linear in the step index and a = 1, b = 0 at the final step,
  so decoding the fully-denoised grid reproduces the image bit-exactly.
  The per-step denoiser perturbation has magnitude zero.
- Segmentation returns the rasterized box; detection reads the scene
  registry, scoring exact phrase matches 0.9 and bare-name matches 0.8
  unless the scene scripts a score.

Scene bookkeeping in forward: a value override whose decoded pattern matches
the registry on >= PASTE_MODAL_SHARE of its cells is a paste (one object at
its mask's bounding rectangle); anything else is a reset. Original objects
overwritten on >= COVER_REMOVED of their cells disappear; a paste survives
if it still owns >= PASTE_KEEP of its cells after later overwrites.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .detection import Detection
from .errors import EmptyMask, ShapeMismatch, UnknownImage
from .geometry import BoundingBox, ImageRef
from .latent import LatentStack, Override, RegionMask, cell_bounding_box, rasterize_box

PRESENCE = 0.75
BACKGROUND = 0.0

ATTRIBUTE_OFFSETS = {
    None: 0.0,
    "blue": 0.2,
    "green": 0.25,
    "red": 0.3,
    "yellow": 0.35,
    "orange": 0.4,
    "brown": 0.45,
    "gray": 0.5,
    "black": 0.55,
    "white": 0.6,
    "purple": 0.65,
    "pink": 0.7,
}

PASTE_MODAL_SHARE = 0.6
COVER_REMOVED = 0.6
PASTE_KEEP = 0.4
DECODE_TOL = 2e-3


def name_value(name: str) -> float:
    digest = int(hashlib.sha1(name.encode("utf-8")).hexdigest(), 16)
    return (digest % 1601 - 800) / 1000.0


def attribute_offset(attribute: str | None) -> float:
    if attribute in ATTRIBUTE_OFFSETS:
        return ATTRIBUTE_OFFSETS[attribute]
    digest = int(hashlib.sha1(f"attr:{attribute}".encode("utf-8")).hexdigest(), 16)
    return (digest % 180 + 1) * 0.005


@dataclass(frozen=True)
class SceneObject:
    """Ground-truth object: structured identity, box, optional scripted score."""

    name: str
    attribute: str | None
    box: BoundingBox
    score: float | None = None

    @property
    def phrase(self) -> str:
        return f"{self.attribute} {self.name}" if self.attribute else self.name


class MockBackend:
    """In-process backend implementing the full generation contract."""

    def __init__(
        self,
        grid: int = 8,
        channels: int = 4,
        total_steps: int = 10,
        known_names: tuple[str, ...] | None = None,
    ):
        if channels < 4:
            raise ValueError("mock needs at least 4 latent channels (3 image + lift)")
        self.height = self.width = int(grid)
        self.channels = int(channels)
        self._total_steps = int(total_steps)
        self.model_ids = {"base": "mock-affine", "segmenter": "mock-box", "detector": "mock-scene"}
        self._images: dict[str, tuple[np.ndarray, tuple[SceneObject, ...]]] = {}
        self._stacks: dict[str, tuple[np.ndarray, str]] = {}
        self._counter = 0
        self._patterns: dict[tuple[str, str | None], tuple[float, float]] = {}
        # Base-name vocabulary used to split pregenerate/edit phrases into
        # (name, attribute); grows with every painted scene. Defaults to the
        # benchmark nouns so cold starts split correctly.
        if known_names is None:
            from .benchmark import NOUNS

            known_names = NOUNS
        self._names: set[str] = set(known_names)
        self.last_forward_log: dict | None = None
        span = np.arange(self._total_steps, dtype=np.float32)[::-1]
        self._a = (1.0 + 0.5 * span).astype(np.float32)
        self._b = (0.25 * span).astype(np.float32)

    def register_names(self, names: list[str]):
        """Extend the phrase-splitting vocabulary."""
        self._names.update(names)

    # -- contract metadata -------------------------------------------------

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @property
    def total_steps(self) -> int:
        return self._total_steps

    @property
    def schedule_id(self) -> str:
        return f"mock-affine-{self._total_steps}"

    # -- scene registry ----------------------------------------------------

    def _new_handle(self, prefix: str) -> str:
        self._counter += 1
        return f"{prefix}-{self._counter:04d}"

    def _pattern(self, name: str, attribute: str | None) -> tuple[float, float]:
        key = (name, attribute)
        if key not in self._patterns:
            self._patterns[key] = (name_value(name), attribute_offset(attribute))
            self._names.add(name)
        return self._patterns[key]

    def _paint(self, scene: tuple[SceneObject, ...]) -> np.ndarray:
        canvas = np.full((3, self.height, self.width), BACKGROUND, dtype=np.float32)
        for obj in scene:
            cells = rasterize_box(obj.box, self.height, self.width)
            v0, v1 = self._pattern(obj.name, obj.attribute)
            canvas[0][cells] = v0
            canvas[1][cells] = v1
            canvas[2][cells] = PRESENCE
        return canvas

    def register_scene(self, objects: list[SceneObject], handle: str | None = None) -> ImageRef:
        """Create an image whose ground truth is the given object list."""
        scene = tuple(objects)
        handle = handle or self._new_handle("img")
        self._images[handle] = (self._paint(scene), scene)
        return ImageRef(handle=handle, width=self.width, height=self.height)

    def load_manifest(self, path: str) -> list[ImageRef]:
        """Register every scene of a ground-truth manifest file."""
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
        refs = []
        for handle, entry in manifest["images"].items():
            objects = [
                SceneObject(
                    name=o["name"],
                    attribute=o.get("attribute"),
                    box=BoundingBox(*o["box"]),
                    score=o.get("score"),
                )
                for o in entry["objects"]
            ]
            refs.append(self.register_scene(objects, handle=handle))
        return refs

    def scene_of(self, image: ImageRef) -> tuple[SceneObject, ...]:
        return self._resolve(image)[1]

    def export_image(self, image: ImageRef) -> np.ndarray:
        return self._resolve(image)[0].copy()

    def _resolve(self, image: ImageRef) -> tuple[np.ndarray, tuple[SceneObject, ...]]:
        if image.handle not in self._images:
            raise UnknownImage(f"image handle {image.handle!r} is not registered")
        return self._images[image.handle]

    def _split_phrase(self, text: str) -> tuple[str, str | None]:
        """Best-effort (name, attribute) split using names seen so far."""
        text = text.strip()
        for name in sorted(self._names, key=len, reverse=True):
            if text == name:
                return name, None
            if text.endswith(" " + name):
                return name, text[: -len(name)].strip()
        return text, None

    # -- schedule ----------------------------------------------------------

    def _lift(self, image_array: np.ndarray) -> np.ndarray:
        lifted = np.zeros((self.channels, self.height, self.width), dtype=np.float32)
        lifted[:3] = image_array
        return lifted

    def _unlift(self, grid: np.ndarray) -> np.ndarray:
        return grid[:3].copy()

    def _remap(self, state: np.ndarray, from_idx: int, to_idx: int) -> np.ndarray:
        base = (state - self._b[from_idx]) / self._a[from_idx]
        return (self._a[to_idx] * base + self._b[to_idx]).astype(np.float32)

    # -- contract operations -------------------------------------------------

    def invert(self, image: ImageRef) -> LatentStack:
        array, _ = self._resolve(image)
        lifted = self._lift(array)
        steps = np.stack([a * lifted + b for a, b in zip(self._a, self._b)]).astype(np.float32)
        handle = self._new_handle("lat")
        self._stacks[handle] = (steps, image.handle)
        return LatentStack(steps=steps, schedule_id=self.schedule_id, handle=handle)

    def pregenerate(self, text: str, box: BoundingBox) -> ImageRef:
        name, attribute = self._split_phrase(text)
        return self.register_scene([SceneObject(name=name, attribute=attribute, box=box)])

    def segment(self, image: ImageRef, box: BoundingBox) -> RegionMask:
        self._resolve(image)
        grid = rasterize_box(box, self.height, self.width)
        if not grid.any():
            raise EmptyMask(f"box {box} rasterizes to no cell at {self.height}x{self.width}")
        return RegionMask(grid=grid, source_box=box)

    def transform(self, image: ImageRef, from_box: BoundingBox, to_box: BoundingBox) -> ImageRef:
        """Crop from_box and nearest-neighbor resize it onto to_box on a blank canvas."""
        array, scene = self._resolve(image)
        src = rasterize_box(from_box, self.height, self.width)
        dst = rasterize_box(to_box, self.height, self.width)
        if not src.any() or not dst.any():
            raise EmptyMask("transform boxes rasterize to no cells")
        sr = np.flatnonzero(src.any(axis=1))
        sc = np.flatnonzero(src.any(axis=0))
        dr = np.flatnonzero(dst.any(axis=1))
        dc = np.flatnonzero(dst.any(axis=0))
        crop = array[:, sr[0]: sr[-1] + 1, sc[0]: sc[-1] + 1]
        rows = (np.arange(len(dr)) * crop.shape[1] // len(dr)).clip(0, crop.shape[1] - 1)
        cols = (np.arange(len(dc)) * crop.shape[2] // len(dc)).clip(0, crop.shape[2] - 1)
        canvas = np.full((3, self.height, self.width), BACKGROUND, dtype=np.float32)
        canvas[:, dr[0]: dr[-1] + 1, dc[0]: dc[-1] + 1] = crop[:, rows][:, :, cols]
        moved = self._best_overlap(scene, src)
        new_scene = (replace(moved, box=to_box),) if moved else ()
        handle = self._new_handle("img")
        self._images[handle] = (canvas, new_scene)
        return ImageRef(handle=handle, width=self.width, height=self.height)

    def attribute_edit(self, image: ImageRef, mask: RegionMask, target: str) -> ImageRef:
        array, scene = self._resolve(image)
        if mask.shape != (self.height, self.width):
            raise ShapeMismatch(f"mask {mask.shape} vs latent {(self.height, self.width)}")
        name, attribute = self._split_phrase(target)
        edited = array.copy()
        v0, v1 = self._pattern(name, attribute)
        edited[0][mask.grid] = v0
        edited[1][mask.grid] = v1
        edited[2][mask.grid] = PRESENCE
        subject = self._best_overlap(scene, mask.grid)
        new_scene = tuple(
            replace(obj, name=name, attribute=attribute) if obj is subject else obj
            for obj in scene
        )
        handle = self._new_handle("img")
        self._images[handle] = (edited, new_scene)
        return ImageRef(handle=handle, width=self.width, height=self.height)

    def _best_overlap(self, scene: tuple[SceneObject, ...], cells: np.ndarray) -> SceneObject | None:
        best = None
        best_frac = 0.0
        for obj in scene:
            obj_cells = rasterize_box(obj.box, self.height, self.width)
            total = obj_cells.sum()
            if total == 0:
                continue
            frac = (obj_cells & cells).sum() / total
            if frac > best_frac:
                best, best_frac = obj, frac
        return best if best_frac >= 0.5 else None

    def forward(self, stack: LatentStack, overrides: list[Override], seed: int) -> ImageRef:
        if stack.handle not in self._stacks:
            raise UnknownImage(f"latent stack handle {stack.handle!r} is not registered")
        steps, source_handle = self._stacks[stack.handle]
        _, scene = self._images[source_handle]
        shape = (self.height, self.width)
        for override in overrides:
            if override.mask.shape != shape:
                raise ShapeMismatch(f"override mask {override.mask.shape} vs latent {shape}")
            if override.values is not None and override.values.shape != (self.channels, *shape):
                raise ShapeMismatch(
                    f"override values {override.values.shape} vs latent {(self.channels, *shape)}"
                )

        value_ovr = [o for o in overrides if o.values is not None]
        freeze_ovr = [o for o in overrides if o.freeze]

        canvas = steps[0].copy()
        owner = np.full(shape, -1, dtype=np.int32)  # -1 none, -2 reset, k paste index
        pastes: list[tuple[np.ndarray, str, str | None]] = []
        classified: list[str] = []
        for override in value_ovr:
            start, stop = override.step_range
            if start != 0:
                classified.append("deferred")
                continue
            canvas[:, override.mask.grid] = override.values[:, override.mask.grid]
            identity = self._decode_paste(override)
            if identity is None:
                owner[override.mask.grid] = -2
                classified.append("reset")
            else:
                owner[override.mask.grid] = len(pastes)
                pastes.append((override.mask.grid, identity[0], identity[1]))
                classified.append("paste")

        states = [canvas.copy()]
        for i in range(1, self._total_steps):
            canvas = self._remap(canvas, i - 1, i)
            for override in freeze_ovr:
                start, stop = override.step_range
                if start <= i < stop:
                    canvas[:, override.mask.grid] = steps[i][:, override.mask.grid]
            for override in value_ovr:
                start, stop = override.step_range
                if start <= i < stop and start != 0:
                    canvas[:, override.mask.grid] = override.values[:, override.mask.grid]
            states.append(canvas.copy())

        self.last_forward_log = {
            "classified": classified,
            "value_mask_cells": [int(o.mask.grid.sum()) for o in value_ovr],
            "freeze_ranges": [tuple(o.step_range) for o in freeze_ovr],
            "states": states,
            "source_steps": steps,
        }

        last = self._total_steps - 1
        final = self._unlift((canvas - self._b[last]) / self._a[last])
        new_scene: list[SceneObject] = []
        for obj in scene:
            cells = rasterize_box(obj.box, self.height, self.width)
            total = cells.sum()
            if total and (owner[cells] != -1).sum() / total >= COVER_REMOVED:
                continue
            new_scene.append(obj)
        for index, (mask_grid, name, attribute) in enumerate(pastes):
            owned = (owner == index).sum()
            if owned >= PASTE_KEEP * mask_grid.sum():
                new_scene.append(
                    SceneObject(name=name, attribute=attribute, box=cell_bounding_box(mask_grid))
                )
        handle = self._new_handle("img")
        self._images[handle] = (final.astype(np.float32), tuple(new_scene))
        return ImageRef(handle=handle, width=self.width, height=self.height)

    def _decode_paste(self, override: Override) -> tuple[str, str | None] | None:
        """Identify a pasted pattern from its step-0 values, or None for noise."""
        a0, b0 = self._a[0], self._b[0]
        cells = override.mask.grid
        decoded = (override.values[:, cells] - b0) / a0
        presence = decoded[2]
        near_presence = np.abs(presence - PRESENCE) <= DECODE_TOL
        if near_presence.sum() < PASTE_MODAL_SHARE * cells.sum():
            return None
        pairs = Counter(
            (round(float(v0), 3), round(float(v1), 3))
            for v0, v1 in zip(decoded[0][near_presence], decoded[1][near_presence])
        )
        (modal_v0, modal_v1), count = pairs.most_common(1)[0]
        if count < PASTE_MODAL_SHARE * cells.sum():
            return None
        for (name, attribute), (v0, v1) in self._patterns.items():
            if abs(v0 - modal_v0) <= DECODE_TOL and abs(v1 - modal_v1) <= DECODE_TOL:
                return name, attribute
        return None

    def detect(self, image: ImageRef, queries: list[str], threshold: float) -> list[Detection]:
        _, scene = self._resolve(image)
        detections = []
        for obj in scene:
            for query in queries:
                phrase = query
                for prefix in ("image of an ", "image of a "):
                    if query.startswith(prefix):
                        phrase = query[len(prefix):]
                        break
                if phrase == obj.phrase:
                    score = obj.score if obj.score is not None else 0.9
                elif phrase == obj.name:
                    score = obj.score if obj.score is not None else 0.8
                else:
                    continue
                if score >= threshold:
                    detections.append(Detection(query=query, score=score, box=obj.box))
        return detections
