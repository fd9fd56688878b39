"""Backend contracts and the HTTP client implementation.

A generation backend owns images behind opaque handles and exposes the
latent primitives the engine composes: invert, pregenerate, segment,
forward, attribute_edit, transform, plus open-vocabulary detect and an
export endpoint used by verification tooling. The in-process mock and the
HTTP sidecar implement the same surface; a shared conformance suite keeps
them interchangeable.
"""

from __future__ import annotations

import typing
from typing import Protocol, runtime_checkable

import numpy as np
import requests

from . import wire
from .errors import BackendFailure, BackendUnavailable, UnknownImage
from .geometry import BoundingBox, ImageRef
from .latent import LatentStack, Override, RegionMask

if typing.TYPE_CHECKING:
    from .detection import Detection


@runtime_checkable
class DetectionBackend(Protocol):
    def detect(self, image: ImageRef, queries: list[str], threshold: float) -> "list[Detection]":
        ...


@runtime_checkable
class GenerationBackend(DetectionBackend, Protocol):
    @property
    def latent_shape(self) -> tuple[int, int, int]:
        """(channels, height, width) of the latent grids."""
        ...

    @property
    def total_steps(self) -> int:
        ...

    @property
    def schedule_id(self) -> str:
        ...

    def invert(self, image: ImageRef) -> LatentStack:
        ...

    def pregenerate(self, text: str, box: BoundingBox) -> ImageRef:
        ...

    def segment(self, image: ImageRef, box: BoundingBox) -> RegionMask:
        ...

    def forward(self, stack: LatentStack, overrides: list[Override], seed: int) -> ImageRef:
        ...

    def attribute_edit(self, image: ImageRef, mask: RegionMask, target: str) -> ImageRef:
        ...

    def transform(self, image: ImageRef, from_box: BoundingBox, to_box: BoundingBox) -> ImageRef:
        ...

    def export_image(self, image: ImageRef) -> np.ndarray:
        ...


class HttpBackend:
    """Generation backend speaking the JSON wire contract over HTTP."""

    def __init__(self, base_url: str, timeout_s: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self._meta: dict | None = None

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = f"{self.base_url}{path}"
        try:
            if method == "GET":
                response = requests.get(url, timeout=self.timeout_s)
            else:
                response = requests.post(url, json=payload, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise BackendUnavailable(f"backend unreachable at {url}: {exc}") from exc
        if response.status_code == 404:
            raise UnknownImage(f"{path}: {response.text}")
        if response.status_code == 422:
            raise BackendFailure(f"{path}: request rejected: {response.text}")
        if response.status_code == 503:
            raise BackendUnavailable(f"{path}: backend still loading")
        if response.status_code >= 400:
            raise BackendFailure(f"{path}: status {response.status_code}: {response.text}")
        return response.json()

    def _health(self) -> dict:
        if self._meta is None:
            self._meta = self._request("GET", "/health")
        return self._meta

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return tuple(self._health()["latent_shape"])

    @property
    def total_steps(self) -> int:
        return int(self._health()["total_steps"])

    @property
    def schedule_id(self) -> str:
        return str(self._health()["schedule_id"])

    def invert(self, image: ImageRef) -> LatentStack:
        body = self._request("POST", "/invert", {"image_handle": image.handle})
        return LatentStack(
            steps=wire.decode_latents(body["stack"]),
            schedule_id=body["schedule_id"],
            handle=body["latent_stack_handle"],
        )

    def pregenerate(self, text: str, box: BoundingBox) -> ImageRef:
        body = self._request("POST", "/pregenerate", {"text": text, "box": box.as_list()})
        return self._image_ref(body["image_handle"])

    def segment(self, image: ImageRef, box: BoundingBox) -> RegionMask:
        body = self._request(
            "POST", "/segment", {"image_handle": image.handle, "box": box.as_list()}
        )
        return RegionMask(grid=wire.decode_mask(body["mask"]), source_box=box)

    def forward(self, stack: LatentStack, overrides: list[Override], seed: int) -> ImageRef:
        payload = {
            "latent_stack_handle": stack.handle,
            "overrides": [wire.encode_override(o) for o in overrides],
            "seed": seed,
        }
        body = self._request("POST", "/forward", payload)
        return self._image_ref(body["image_handle"])

    def attribute_edit(self, image: ImageRef, mask: RegionMask, target: str) -> ImageRef:
        payload = {
            "image_handle": image.handle,
            "mask": wire.encode_mask(mask.grid),
            "target": target,
        }
        body = self._request("POST", "/attribute_edit", payload)
        return self._image_ref(body["image_handle"])

    def transform(self, image: ImageRef, from_box: BoundingBox, to_box: BoundingBox) -> ImageRef:
        payload = {
            "image_handle": image.handle,
            "from_box": from_box.as_list(),
            "to_box": to_box.as_list(),
        }
        body = self._request("POST", "/transform", payload)
        return self._image_ref(body["image_handle"])

    def detect(self, image: ImageRef, queries: list[str], threshold: float) -> "list[Detection]":
        from .detection import Detection

        payload = {"image_handle": image.handle, "queries": list(queries), "threshold": threshold}
        body = self._request("POST", "/detect", payload)
        return [
            Detection(query=d["query"], score=d["score"], box=BoundingBox(*d["box"]))
            for d in body["detections"]
        ]

    def export_image(self, image: ImageRef) -> np.ndarray:
        body = self._request("POST", "/export_image", {"image_handle": image.handle})
        return wire.decode_latents(body["array"])[0]

    def _image_ref(self, handle: str) -> ImageRef:
        _, height, width = self.latent_shape
        return ImageRef(handle=handle, width=width, height=height)
