"""JSON wire encodings for the backend contract, plus a reference server.

Mask bitmaps travel as row-major packed bits with a dims header; latent
grids as row-major little-endian float32 with a (steps, channels, H, W)
header. The server wraps any in-process backend behind the same endpoints
the sidecar serves, which is how the conformance suite exercises the HTTP
path without external services.
"""

from __future__ import annotations

import base64
import json
import threading
import typing
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .errors import EmptyMask, LayoutLoopError, ShapeMismatch, UnknownImage
from .geometry import BoundingBox

if typing.TYPE_CHECKING:
    from .latent import Override


def encode_mask(grid: np.ndarray) -> dict:
    grid = np.asarray(grid, dtype=bool)
    packed = np.packbits(grid.reshape(-1), bitorder="big")
    return {"dims": list(grid.shape), "bits": base64.b64encode(packed.tobytes()).decode("ascii")}


def decode_mask(payload: dict) -> np.ndarray:
    height, width = payload["dims"]
    raw = np.frombuffer(base64.b64decode(payload["bits"]), dtype=np.uint8)
    bits = np.unpackbits(raw, bitorder="big")[: height * width]
    return bits.reshape(height, width).astype(bool)


def encode_latents(steps: np.ndarray) -> dict:
    steps = np.asarray(steps, dtype=np.float32)
    data = steps.astype("<f4").tobytes(order="C")
    return {"dims": list(steps.shape), "data": base64.b64encode(data).decode("ascii")}


def decode_latents(payload: dict) -> np.ndarray:
    dims = tuple(payload["dims"])
    raw = np.frombuffer(base64.b64decode(payload["data"]), dtype="<f4")
    if raw.size != int(np.prod(dims)):
        raise ShapeMismatch(f"latent payload has {raw.size} values for dims {dims}")
    return raw.reshape(dims).astype(np.float32)


def encode_override(override: "Override") -> dict:
    return {
        "step_range": list(override.step_range),
        "mask": encode_mask(override.mask.grid),
        "values": None if override.values is None else encode_latents(override.values[None]),
        "freeze": override.freeze,
    }


def decode_override(payload: dict) -> "Override":
    from .latent import Override, RegionMask

    grid = decode_mask(payload["mask"])
    values = payload.get("values")
    return Override(
        step_range=tuple(payload["step_range"]),
        mask=RegionMask(grid=grid, source_box=BoundingBox(0, 0, 1, 1)),
        values=None if values is None else decode_latents(values)[0],
        freeze=bool(payload.get("freeze", False)),
    )


class _Handler(BaseHTTPRequestHandler):
    backend = None  # injected by serve_backend

    def log_message(self, *args):
        pass

    def _send(self, status: int, body: dict):
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path != "/health":
            self._send(404, {"error": "unknown endpoint"})
            return
        backend = self.backend
        self._send(
            200,
            {
                "status": "ok",
                "latent_shape": list(backend.latent_shape),
                "total_steps": backend.total_steps,
                "schedule_id": backend.schedule_id,
                "models": getattr(backend, "model_ids", {}),
            },
        )

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._send(422, {"error": "body is not valid JSON"})
            return
        try:
            body = self._dispatch(self.path, payload)
        except UnknownImage as exc:
            self._send(404, {"error": str(exc)})
        except (KeyError, TypeError, ValueError, EmptyMask, ShapeMismatch) as exc:
            self._send(422, {"error": f"{type(exc).__name__}: {exc}"})
        except LayoutLoopError as exc:
            self._send(500, {"error": str(exc)})
        else:
            self._send(200, body)

    def _dispatch(self, path: str, payload: dict) -> dict:
        from .geometry import ImageRef
        from .latent import LatentStack

        backend = self.backend
        _, height, width = backend.latent_shape

        def image_ref(handle) -> ImageRef:
            return ImageRef(handle=str(handle), width=width, height=height)

        if path == "/invert":
            stack = backend.invert(image_ref(payload["image_handle"]))
            return {
                "latent_stack_handle": stack.handle,
                "schedule_id": stack.schedule_id,
                "stack": encode_latents(stack.steps),
            }
        if path == "/pregenerate":
            ref = backend.pregenerate(str(payload["text"]), BoundingBox(*payload["box"]))
            return {"image_handle": ref.handle}
        if path == "/segment":
            mask = backend.segment(image_ref(payload["image_handle"]), BoundingBox(*payload["box"]))
            return {"mask": encode_mask(mask.grid)}
        if path == "/forward":
            overrides = [decode_override(o) for o in payload["overrides"]]
            stack = LatentStack(
                steps=np.zeros((backend.total_steps, *backend.latent_shape), dtype=np.float32),
                schedule_id=backend.schedule_id,
                handle=str(payload["latent_stack_handle"]),
            )
            seed = int(payload["seed"])
            ref = backend.forward(stack, overrides, seed)
            return {"image_handle": ref.handle, "seed": seed}
        if path == "/attribute_edit":
            from .latent import RegionMask

            mask = RegionMask(
                grid=decode_mask(payload["mask"]), source_box=BoundingBox(0, 0, 1, 1)
            )
            ref = backend.attribute_edit(
                image_ref(payload["image_handle"]), mask, str(payload["target"])
            )
            return {"image_handle": ref.handle}
        if path == "/transform":
            ref = backend.transform(
                image_ref(payload["image_handle"]),
                BoundingBox(*payload["from_box"]),
                BoundingBox(*payload["to_box"]),
            )
            return {"image_handle": ref.handle}
        if path == "/detect":
            detections = backend.detect(
                image_ref(payload["image_handle"]),
                [str(q) for q in payload["queries"]],
                float(payload["threshold"]),
            )
            return {
                "detections": [
                    {"query": d.query, "score": d.score, "box": d.box.as_list()}
                    for d in detections
                ]
            }
        if path == "/export_image":
            array = backend.export_image(image_ref(payload["image_handle"]))
            return {"array": encode_latents(array[None])}
        raise KeyError(f"unknown endpoint {path}")


class BackendServer:
    """Serves an in-process backend over the wire contract, for tests and tools."""

    def __init__(self, backend, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"backend": backend})
        self._server = ThreadingHTTPServer((host, port), handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def __enter__(self) -> "BackendServer":
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)
