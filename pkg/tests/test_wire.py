"""Wire codec and the HTTP backend client against a served mock."""

import numpy as np
import pytest
import requests

from layoutloop.backends import HttpBackend
from layoutloop.errors import UnknownImage
from layoutloop.geometry import BoundingBox, ImageRef
from layoutloop.latent import FreezeSchedule, CompositionPlan, recompose
from layoutloop.mock_backend import MockBackend, SceneObject
from layoutloop.wire import (
    BackendServer,
    decode_latents,
    decode_mask,
    encode_latents,
    encode_mask,
)


class TestCodec:
    def test_mask_round_trip(self):
        rng = np.random.default_rng(2)
        for shape in ((8, 8), (16, 16), (5, 9)):
            grid = rng.random(shape) > 0.5
            assert np.array_equal(decode_mask(encode_mask(grid)), grid)

    def test_latents_round_trip(self):
        rng = np.random.default_rng(3)
        steps = rng.standard_normal((10, 4, 8, 8)).astype(np.float32)
        assert np.array_equal(decode_latents(encode_latents(steps)), steps)

    def test_mask_is_packed_bits(self):
        grid = np.zeros((8, 8), dtype=bool)
        grid[0, 0] = True
        payload = encode_mask(grid)
        assert payload["dims"] == [8, 8]
        import base64

        raw = base64.b64decode(payload["bits"])
        assert len(raw) == 8  # 64 cells packed into 8 bytes
        assert raw[0] == 0b10000000


@pytest.fixture(scope="module")
def served_mock():
    backend = MockBackend(grid=16)
    backend.register_scene(
        [SceneObject("cat", "blue", BoundingBox(0.25, 0.25, 0.25, 0.25))], handle="probe"
    )
    with BackendServer(backend) as server:
        yield backend, HttpBackend(server.url), server.url


class TestHttpBackend:
    def test_health_metadata(self, served_mock):
        backend, client, _ = served_mock
        assert client.latent_shape == backend.latent_shape
        assert client.total_steps == backend.total_steps
        assert client.schedule_id == backend.schedule_id

    def test_detect_over_wire(self, served_mock):
        backend, client, _ = served_mock
        image = ImageRef(handle="probe", width=16, height=16)
        hits = client.detect(image, ["image of a blue cat"], 0.15)
        assert len(hits) == 1
        assert hits[0].box == BoundingBox(0.25, 0.25, 0.25, 0.25)

    def test_invert_matches_in_process(self, served_mock):
        backend, client, _ = served_mock
        image = ImageRef(handle="probe", width=16, height=16)
        remote = client.invert(image)
        local = backend.invert(image)
        assert np.array_equal(remote.steps, local.steps)
        assert remote.schedule_id == local.schedule_id

    def test_segment_and_pregenerate(self, served_mock):
        _, client, _ = served_mock
        ref = client.pregenerate("red bird", BoundingBox(0.5, 0.5, 0.25, 0.25))
        mask = client.segment(ref, BoundingBox(0.5, 0.5, 0.25, 0.25))
        assert mask.cells == 16

    def test_full_recompose_over_wire(self, served_mock):
        backend, client, _ = served_mock
        image = ImageRef(handle="probe", width=16, height=16)
        plan = CompositionPlan(
            resets=(), pastes=(), freeze=FreezeSchedule(total_steps=10, frozen_steps=10)
        )
        result = recompose(image, plan, seed=3, backend=client)
        assert np.array_equal(client.export_image(result), backend.export_image(image))

    def test_unknown_image_maps_to_404(self, served_mock):
        _, client, _ = served_mock
        with pytest.raises(UnknownImage):
            client.segment(ImageRef(handle="missing"), BoundingBox(0, 0, 1, 1))

    def test_schema_violation_maps_to_422(self, served_mock):
        _, _, url = served_mock
        response = requests.post(f"{url}/segment", json={"wrong": "fields"}, timeout=10)
        assert response.status_code == 422
        response = requests.post(
            f"{url}/segment", data=b"not json", headers={"Content-Type": "application/json"},
            timeout=10,
        )
        assert response.status_code == 422

    def test_unknown_endpoint_maps_to_422(self, served_mock):
        _, _, url = served_mock
        response = requests.post(f"{url}/unknown_op", json={}, timeout=10)
        assert response.status_code == 422
