"""Procedural backend pixel contracts and the wire-protocol client.

Segmentation and inpainting guarantees are checked against independent
pixel arithmetic (exact color equality, argwhere bounding boxes), never
against the backend's own helpers.  The HTTP client runs against a scripted
fake transport so retry, envelope, and echo rules are exercised without a
server.
"""

import numpy as np
import pytest

from finegrain.backends import (
    WIRE_VERSION,
    BackendCapabilitySet,
    BackendError,
    CapabilityError,
    GenerationRequest,
    HttpBackendClient,
    ProceduralBackend,
    ProtocolError,
    SegmentationNotFoundError,
    TransportError,
    category_color,
    generate_object_image,
    object_prompt,
)
from finegrain.core import (
    COCO_CLASSES,
    BinaryMask,
    RasterImage,
    ValidationError,
    mask_to_png_bytes,
    raster_from_png_bytes,
    raster_to_png_bytes,
)

# ------------------------------------------------------------ prompts

def test_object_prompt_vocabulary():
    assert "dog" in object_prompt("dog")
    with pytest.raises(ValidationError):
        object_prompt("unicorn")


def test_generation_request_validation():
    with pytest.raises(ValidationError):
        GenerationRequest(prompt="x", seed=-1, width=64, height=64)
    with pytest.raises(ValidationError):
        GenerationRequest(prompt="x", seed=0, width=8, height=64)
    GenerationRequest(prompt="x", seed=2**64 - 1, width=16, height=16)


def test_category_colors_distinct_and_saturated():
    colors = {category_color(c) for c in COCO_CLASSES}
    assert len(colors) == len(COCO_CLASSES)
    # every color peaks at 255 in some channel, clearing the noise ceiling
    assert all(max(c) == 255 for c in colors)


# ------------------------------------------------- procedural generate

def test_generate_deterministic(backend):
    req = GenerationRequest(object_prompt("dog"), seed=9, width=96, height=96)
    a = backend.generate(req)
    b = backend.generate(req)
    assert np.array_equal(a.pixels, b.pixels)


def test_generate_seed_sensitivity(backend):
    a = backend.generate(GenerationRequest(object_prompt("dog"), 1, 96, 96))
    b = backend.generate(GenerationRequest(object_prompt("dog"), 2, 96, 96))
    assert not np.array_equal(a.pixels, b.pixels)


def test_generate_rejects_non_object_prompt(backend):
    with pytest.raises(BackendError):
        backend.generate(GenerationRequest("a scenic mountain", 0, 64, 64))


def test_generate_object_image_checks_capability(backend):
    img = generate_object_image(backend, "cat", seed=4, width=80, height=80)
    assert img.pixels.shape == (80, 80, 4)


# -------------------------------------------------------- segmentation

def test_segmentation_matches_exact_color_oracle(backend):
    img = backend.generate(GenerationRequest(object_prompt("bird"), 7, 120, 120))
    result = backend.segment(img, "bird")

    # independent oracle: the object is exactly the flat category color
    color = np.array(category_color("bird"), dtype=np.uint8)
    expected = np.all(img.pixels[..., :3] == color, axis=-1)
    assert np.array_equal(result.mask.grid, expected)
    assert expected.sum() > 0

    # tight bbox from first principles
    ys, xs = np.nonzero(expected)
    assert result.bbox == (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
    assert result.confidence == 1.0


def test_segmentation_absent_category_raises(backend):
    img = backend.generate(GenerationRequest(object_prompt("bird"), 7, 96, 96))
    with pytest.raises(SegmentationNotFoundError):
        backend.segment(img, "zebra")


def test_background_never_collides_with_object_color(backend):
    # noise tops out below every category color's peak channel
    img = backend.generate(GenerationRequest(object_prompt("cow"), 3, 128, 128))
    mask = backend.segment(img, "cow").mask.grid
    background = img.pixels[~mask][:, :3]
    assert background.max() < 255


# ----------------------------------------------------------- inpainting

def _blank(h, w, value=120):
    px = np.full((h, w, 4), value, dtype=np.uint8)
    px[..., 3] = 255
    return RasterImage(px)


def test_inpaint_preserves_unmasked_pixels_bitwise(backend):
    img = _blank(64, 64)
    grid = np.zeros((64, 64), dtype=bool)
    grid[10:30, 20:40] = True
    out = backend.inpaint(img, BinaryMask(grid), "a clean empty room", seed=5)
    assert np.array_equal(out.pixels[~grid], img.pixels[~grid])
    assert not np.array_equal(out.pixels[grid], img.pixels[grid])


def test_inpaint_deterministic_per_seed(backend):
    img = _blank(64, 64)
    grid = np.zeros((64, 64), dtype=bool)
    grid[5:60, 5:60] = True
    mask = BinaryMask(grid)
    a = backend.inpaint(img, mask, "a clean empty room", seed=5)
    b = backend.inpaint(img, mask, "a clean empty room", seed=5)
    c = backend.inpaint(img, mask, "a clean empty room", seed=6)
    assert np.array_equal(a.pixels, b.pixels)
    assert not np.array_equal(a.pixels, c.pixels)


def test_inpaint_fill_is_coordinate_stable(backend):
    # same seed, different masks: shared masked coordinates get identical
    # pixels, so tiles can be filled once and reused across candidates
    img = _blank(80, 80)
    grid_a = np.zeros((80, 80), dtype=bool)
    grid_a[:40, :] = True
    grid_b = np.zeros((80, 80), dtype=bool)
    grid_b[20:60, 10:70] = True
    out_a = backend.inpaint(img, BinaryMask(grid_a), "a clean empty room", seed=11)
    out_b = backend.inpaint(img, BinaryMask(grid_b), "a clean empty room", seed=11)
    shared = grid_a & grid_b
    assert shared.any()
    assert np.array_equal(out_a.pixels[shared], out_b.pixels[shared])


def test_inpaint_rejects_mismatched_mask(backend):
    img = _blank(32, 32)
    with pytest.raises(ValidationError):
        backend.inpaint(img, BinaryMask(np.ones((16, 16), dtype=bool)), "x", seed=0)


# ----------------------------------------------------------- embeddings

def test_embeddings_unit_norm_and_deterministic(backend):
    texts = ["a photo of a dog", "a photo of a cat"]
    a = backend.embed_texts(texts)
    b = backend.embed_texts(texts)
    assert np.array_equal(a, b)
    assert a.shape == (2, backend.capabilities().embedding_dim)
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-6)


def test_embeddings_rows_follow_inputs(backend):
    texts = ["alpha text", "beta text", "gamma text"]
    fwd = backend.embed_texts(texts)
    rev = backend.embed_texts(texts[::-1])
    assert np.array_equal(fwd[::-1], rev)


def test_image_embeddings_differ_from_text(backend):
    img = _blank(32, 32)
    e_img = backend.embed_images([img])
    e_txt = backend.embed_texts(["a photo of a dog"])
    assert e_img.shape == e_txt.shape
    assert not np.allclose(e_img, e_txt)
    assert np.allclose(np.linalg.norm(e_img, axis=1), 1.0, atol=1e-6)


def test_capabilities_truthful(backend):
    caps = backend.capabilities()
    assert caps.generate and caps.segment and caps.inpaint and caps.embed
    assert caps.embedding_dim >= 8
    round_trip = BackendCapabilitySet.from_dict(caps.to_dict())
    assert round_trip == caps


# ------------------------------------------------------- wire client

class FakeResponse:
    def __init__(self, status=200, body=None, text=""):
        self.status_code = status
        self._body = body
        self.text = text

    def json(self):
        if self._body is None:
            raise ValueError("no json")
        return self._body


class FakeSession:
    """Scripted transport: queue per-path responses or factories."""

    def __init__(self):
        self.queues = {}
        self.posts = []

    def queue(self, path, *items):
        self.queues.setdefault(path, []).extend(items)

    def _next(self, url, payload):
        path = url.split("://", 1)[-1].split("/", 1)[-1]
        queue = self.queues.get("/" + path)
        if not queue:
            raise AssertionError(f"unexpected request to {url}")
        item = queue.pop(0)
        if callable(item):
            item = item(payload)
        if isinstance(item, Exception):
            raise item
        return item

    def get(self, url, timeout=None):
        return self._next(url, None)

    def post(self, url, json=None, timeout=None):
        self.posts.append((url, json))
        return self._next(url, json)


def _caps_body(**overrides):
    caps = {
        "name": "fake",
        "generate": True,
        "segment": True,
        "inpaint": True,
       "embed": True,
        "embedding_dim": 8,
    }
    caps.update(overrides)
    return {"wire_version": WIRE_VERSION, "capabilities": caps}


def _client(session):
    return HttpBackendClient("http://fake", backoff=0.0, session=session)


def test_client_capabilities_cached():
    session = FakeSession()
    session.queue("/v1/capabilities", FakeResponse(body=_caps_body()))
    client = _client(session)
    assert client.capabilities().name == "fake"
    # second call must not touch the transport (queue is empty)
    assert client.capabilities().name == "fake"


def test_client_wire_version_mismatch():
    session = FakeSession()
    body = _caps_body()
    body["wire_version"] = WIRE_VERSION + 1
    session.queue("/v1/capabilities", FakeResponse(body=body))
    with pytest.raises(ProtocolError):
        _client(session).capabilities()


def test_client_generate_round_trip():
    session = FakeSession()
    session.queue("/v1/capabilities", FakeResponse(body=_caps_body()))
    img = _blank(20, 24, value=33)
    png = raster_to_png_bytes(img)

    def respond(payload):
        assert payload["prompt"] == "a photo of a dog"
        assert payload["seed"] == 3 and payload["width"] == 24 and payload["height"] == 20
        import base64

        return FakeResponse(
            body={
                "request_id": payload["request_id"],
                "image_png": base64.b64encode(png).decode("ascii"),
            }
        )

    session.queue("/v1/generate", respond)
    out = _client(session).generate(GenerationRequest("a photo of a dog", 3, 24, 20))
    assert np.array_equal(out.pixels, img.pixels)


def test_client_request_id_echo_enforced():
    session = FakeSession()
    session.queue("/v1/capabilities", FakeResponse(body=_caps_body()))
    session.queue(
        "/v1/generate",
        FakeResponse(body={"request_id": "bogus", "image_png": ""}),
    )
    with pytest.raises(ProtocolError) as err:
        _client(session).generate(GenerationRequest("p", 0, 16, 16))
    assert err.value.code == "request_id_mismatch"


def test_client_error_envelope_mapped():
    session = FakeSession()
    session.queue("/v1/capabilities", FakeResponse(body=_caps_body()))
    session.queue(
        "/v1/segment",
        FakeResponse(
            status=422,
            body={
                "error": {
                    "code": "segmentation_not_found",
                    "message": "no dog here",
                    "failed_step": "segment",
                }
            },
        ),
    )
    img = _blank(16, 16)
    with pytest.raises(SegmentationNotFoundError):
        _client(session).segment(img, "dog")


def test_client_generic_error_envelope():
    session = FakeSession()
    session.queue("/v1/capabilities", FakeResponse(body=_caps_body()))
    session.queue(
        "/v1/inpaint",
        FakeResponse(
            status=400,
            body={"error": {"code": "bad_base64", "message": "x", "failed_step": "inpaint"}},
        ),
    )
    img = _blank(16, 16)
    mask = BinaryMask(np.ones((16, 16), dtype=bool))
    with pytest.raises(ProtocolError) as err:
        _client(session).inpaint(img, mask, "p", 0)
    assert err.value.code == "bad_base64"
    assert err.value.failed_step == "inpaint"


def test_client_retries_bare_503_then_succeeds():
    import requests as _requests

    session = FakeSession()
    session.queue(
        "/v1/capabilities",
        FakeResponse(status=503),
        _requests.ConnectionError("flaky"),
        FakeResponse(body=_caps_body()),
    )
    client = _client(session)
    assert client.capabilities().name == "fake"


def test_client_transport_error_after_max_attempts():
    import requests as _requests

    session = FakeSession()
    session.queue(
        "/v1/capabilities",
        *[_requests.ConnectionError("down")] * 3,
    )
    with pytest.raises(TransportError):
        _client(session).capabilities()
    assert not session.queues["/v1/capabilities"]  # exactly 3 attempts


def test_client_malformed_200_is_protocol_error():
    session = FakeSession()
    session.queue("/v1/capabilities", FakeResponse(body=_caps_body()))
    session.queue("/v1/embed", FakeResponse(status=200, body=None, text="<html>"))
    with pytest.raises(ProtocolError):
        _client(session).embed_texts(["x"])


def test_client_capability_gating():
    session = FakeSession()
    session.queue("/v1/capabilities", FakeResponse(body=_caps_body(generate=False)))
    with pytest.raises(CapabilityError):
        _client(session).generate(GenerationRequest("p", 0, 16, 16))


def test_client_ping():
    session = FakeSession()
    session.queue("/healthz", FakeResponse(body={"status": "ok"}))
    assert _client(session).ping() is True
    session.queue("/healthz", FakeResponse(status=503), FakeResponse(status=503), FakeResponse(status=503))
    assert _client(session).ping() is False
