"""Model backends: image generation, segmentation, inpainting, embeddings.

Two implementations of the same interface live here:

* :class:`ProceduralBackend` renders geometric stand-in objects offline.  It
  is fully deterministic, needs no network, and is exact enough that
  segmentation and inpainting invariants can be asserted bit-for-bit.
* :class:`HttpBackendClient` speaks wire protocol v1 to a model server over
  HTTP so real generative models can be swapped in without touching the
  synthesis code.
"""

from __future__ import annotations

import base64
import colorsys
import hashlib
import time
import uuid
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np
import requests

from .core import (
    COCO_CLASSES,
    BinaryMask,
    PixelBox,
    RasterImage,
    ValidationError,
    derive_seed,
    mask_from_png_bytes,
    mask_to_png_bytes,
    raster_from_png_bytes,
    raster_to_png_bytes,
)

__all__ = [
    "OBJECT_PROMPT_TEMPLATE",
    "BACKEND_URL_ENV",
    "WIRE_VERSION",
    "BackendError",
    "CapabilityError",
    "TransportError",
    "ProtocolError",
    "SegmentationNotFoundError",
    "BackendCapabilitySet",
    "GenerationRequest",
    "SegmentationResult",
    "Backend",
    "ProceduralBackend",
    "HttpBackendClient",
    "category_color",
    "generate_object_image",
    "object_prompt",
]

# Prompt used for every sprite source image; {0} is the category name.
OBJECT_PROMPT_TEMPLATE = "a photo of a single and fully visible {}"

# Environment variable the CLI consults for a backend endpoint override.
BACKEND_URL_ENV = "FINEGRAIN_BACKEND_URL"

WIRE_VERSION = 1

# Procedural palette: noise stays at or below this level in every channel
# while each category color peaks at 255, so exact-color segmentation can
# never pick up background pixels.
_NOISE_CEILING = 209
_NOISE_FLOOR = 30
_NOISE_CELL = 32

_EMBED_DIM = 64


class BackendError(RuntimeError):
    """Base class for backend failures."""


class CapabilityError(BackendError):
    """An operation was requested that the backend does not advertise."""


class TransportError(BackendError):
    """The backend could not be reached; safe to retry."""


class ProtocolError(BackendError):
    """The backend answered with an error envelope; not retried."""

    def __init__(self, code: str, message: str, failed_step: str) -> None:
        super().__init__(f"{code} during {failed_step}: {message}")
        self.code = code
        self.failed_step = failed_step


class SegmentationNotFoundError(BackendError):
    """No instance of the requested category was found in the image."""


@dataclass(frozen=True)
class BackendCapabilitySet:
    """Operations a backend advertises; callers must check before use."""

    name: str
    generate: bool
    segment: bool
    inpaint: bool
    embed: bool
    embedding_dim: int | None = None

    def __post_init__(self) -> None:
        if self.embed and (self.embedding_dim is None or self.embedding_dim < 1):
            raise ValidationError("embedding backends must state a positive dim")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "generate": self.generate,
            "segment": self.segment,
            "inpaint": self.inpaint,
            "embed": self.embed,
            "embedding_dim": self.embedding_dim,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BackendCapabilitySet":
        return cls(
            name=str(data["name"]),
            generate=bool(data["generate"]),
            segment=bool(data["segment"]),
            inpaint=bool(data["inpaint"]),
            embed=bool(data["embed"]),
            embedding_dim=(
                None if data.get("embedding_dim") is None else int(data["embedding_dim"])
            ),
        )


@dataclass(frozen=True)
class GenerationRequest:
    """One text-to-image request."""

    prompt: str
    seed: int
    width: int = 512
    height: int = 512

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValidationError("prompt must be non-empty")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in 64 bits")
        if self.width < 16 or self.height < 16:
            raise ValidationError("generation size must be at least 16x16")


@dataclass(frozen=True)
class SegmentationResult:
    """Instance mask for one category plus its tight box and confidence."""

    mask: BinaryMask
    bbox: PixelBox
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("confidence must lie in [0, 1]")
        if self.mask.tight_bbox() != self.bbox:
            raise ValidationError("bbox must be the tight box of the mask")


class Backend(Protocol):
    """Operations the synthesis pipeline needs from a model backend."""

    def capabilities(self) -> BackendCapabilitySet: ...

    def generate(self, request: GenerationRequest) -> RasterImage: ...

    def segment(self, image: RasterImage, category: str) -> SegmentationResult: ...

    def inpaint(
        self, image: RasterImage, mask: BinaryMask, prompt: str, seed: int
    ) -> RasterImage: ...

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray: ...

    def embed_images(self, images: Sequence[RasterImage]) -> np.ndarray: ...


def object_prompt(category: str) -> str:
    """Render the canonical single-object prompt for a vocabulary category."""
    if category not in COCO_CLASSES:
        raise ValidationError(f"unknown category: {category!r}")
    return OBJECT_PROMPT_TEMPLATE.format(category)


def generate_object_image(
    backend: Backend, category: str, seed: int, width: int = 512, height: int = 512
) -> RasterImage:
    """Generate one single-object photo for a vocabulary category."""
    caps = backend.capabilities()
    if not caps.generate:
        raise CapabilityError(f"backend {caps.name!r} cannot generate")
    request = GenerationRequest(object_prompt(category), seed, width, height)
    return backend.generate(request)


def category_color(category: str) -> tuple[int, int, int]:
    """Exact flat RGB color the procedural backend paints a category with.

    Colors are spaced on the hue wheel by vocabulary index; the value channel
    is 1.0 so at least one component is always 255, above the noise ceiling.
    """
    try:
        index = COCO_CLASSES.index(category)
    except ValueError:
        raise ValidationError(f"unknown category: {category!r}") from None
    hue = (index / len(COCO_CLASSES)) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.9, 1.0)
    return (round(r * 255), round(g * 255), round(b * 255))


def _smooth_noise(key: int, height: int, width: int) -> np.ndarray:
    """Seeded low-frequency RGB noise in [_NOISE_FLOOR, _NOISE_CEILING]."""
    rng = np.random.default_rng(key)
    grid_h = height // _NOISE_CELL + 2
    grid_w = width // _NOISE_CELL + 2
    coarse = rng.uniform(_NOISE_FLOOR, _NOISE_CEILING, size=(grid_h, grid_w, 3))
    ys = (np.arange(height) + 0.5) / _NOISE_CELL
    xs = (np.arange(width) + 0.5) / _NOISE_CELL
    y0 = np.minimum(ys.astype(int), grid_h - 2)
    x0 = np.minimum(xs.astype(int), grid_w - 2)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    a = coarse[y0][:, x0]
    b = coarse[y0][:, x0 + 1]
    c = coarse[y0 + 1][:, x0]
    d = coarse[y0 + 1][:, x0 + 1]
    out = a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx
    return np.clip(np.rint(out), _NOISE_FLOOR, _NOISE_CEILING).astype(np.uint8)


@lru_cache(maxsize=8)
def _fill_pattern(key: int, width: int, height: int) -> np.ndarray:
    """Cache full-canvas fill patterns; keyed by seed so repeated inpaint
    calls over the same canvas reuse one array.  Coordinate-stable: a pixel's
    fill value depends only on (key, canvas size, pixel position)."""
    pattern = _smooth_noise(key, height, width)
    pattern.flags.writeable = False
    return pattern


def _shape_mask(side: int, kind: str) -> np.ndarray:
    """Boolean mask of a dense, centered shape on a side x side grid."""
    u = (np.arange(side) + 0.5) / side * 2.0 - 1.0
    ux = np.abs(u)[None, :]
    uy = np.abs(u)[:, None]
    if kind == "square":
        return np.ones((side, side), dtype=bool)
    if kind == "rounded":
        r = 0.16
        dx = np.maximum(ux - (1.0 - r), 0.0)
        dy = np.maximum(uy - (1.0 - r), 0.0)
        return dx * dx + dy * dy <= r * r
    if kind == "superellipse4":
        return ux**4 + uy**4 <= 1.0
    if kind == "superellipse6":
        return ux**6 + uy**6 <= 1.0
    raise ValueError(f"unknown shape kind: {kind!r}")


_SHAPE_KINDS = ("square", "rounded", "superellipse4", "superellipse6")


class ProceduralBackend:
    """Offline deterministic backend drawing flat-color geometric objects.

    Each category owns an exact RGB color (:func:`category_color`) painted
    over low-frequency noise that never reaches that color, so
    :meth:`segment` recovers the object mask exactly, with confidence 1.
    """

    name = "procedural"

    def capabilities(self) -> BackendCapabilitySet:
        return BackendCapabilitySet(
            name=self.name,
            generate=True,
            segment=True,
            inpaint=True,
            embed=True,
            embedding_dim=_EMBED_DIM,
        )

    def _category_from_prompt(self, prompt: str) -> str:
        prefix = OBJECT_PROMPT_TEMPLATE.format("")
        if prompt.startswith(prefix) and prompt[len(prefix):] in COCO_CLASSES:
            return prompt[len(prefix):]
        raise BackendError(
            f"procedural backend only renders single-object prompts, got {prompt!r}"
        )

    def generate(self, request: GenerationRequest) -> RasterImage:
        category = self._category_from_prompt(request.prompt)
        key = derive_seed(
            request.seed, ("generate", request.prompt, request.width, request.height)
        )
        rng = np.random.default_rng(key)
        h, w = request.height, request.width
        pixels = np.empty((h, w, 4), dtype=np.uint8)
        pixels[..., :3] = _smooth_noise(derive_seed(key, ("background",)), h, w)
        pixels[..., 3] = 255

        # Object: dense centered shape, side 50-70% of the short edge, kept
        # fully inside the frame with a small margin.
        short = min(w, h)
        side = max(8, round(short * rng.uniform(0.50, 0.70)))
        margin = max(1, round(0.03 * short))
        side = min(side, w - 2 * margin, h - 2 * margin)
        x0 = int(rng.integers(margin, w - side - margin + 1))
        y0 = int(rng.integers(margin, h - side - margin + 1))
        kind = _SHAPE_KINDS[COCO_CLASSES.index(category) % len(_SHAPE_KINDS)]
        shape = _shape_mask(side, kind)
        color = np.array(category_color(category), dtype=np.uint8)
        region = pixels[y0 : y0 + side, x0 : x0 + side, :3]
        region[shape] = color
        return RasterImage(pixels)

    def segment(self, image: RasterImage, category: str) -> SegmentationResult:
        color = np.array(category_color(category), dtype=np.uint8)
        grid = np.all(image.pixels[..., :3] == color, axis=-1)
        if not grid.any():
            raise SegmentationNotFoundError(
                f"no {category!r} pixels found in a {image.width}x{image.height} image"
            )
        mask = BinaryMask(grid)
        return SegmentationResult(mask=mask, bbox=mask.tight_bbox(), confidence=1.0)

    def inpaint(
        self, image: RasterImage, mask: BinaryMask, prompt: str, seed: int
    ) -> RasterImage:
        if mask.grid.shape != image.pixels.shape[:2]:
            raise ValidationError("mask shape must match image shape")
        key = derive_seed(seed, ("inpaint", prompt))
        pattern = _fill_pattern(key, image.width, image.height)
        pixels = image.pixels.copy()
        pixels[mask.grid, :3] = pattern[mask.grid]
        pixels[mask.grid, 3] = 255
        return RasterImage(pixels)

    def _hash_vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.blake2b(payload, digest_size=8).digest()
        key = derive_seed(int.from_bytes(digest, "big"), ("embed",))
        rng = np.random.default_rng(key)
        vec = rng.standard_normal(_EMBED_DIM)
        vec = (vec / np.linalg.norm(vec)).astype(np.float32)
        vec /= np.linalg.norm(vec)
        return vec

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, _EMBED_DIM), dtype=np.float32)
        return np.stack([self._hash_vector(b"text\x00" + t.encode("utf-8")) for t in texts])

    def embed_images(self, images: Sequence[RasterImage]) -> np.ndarray:
        if not images:
            return np.zeros((0, _EMBED_DIM), dtype=np.float32)
        rows = []
        for img in images:
            header = f"image\x00{img.width}x{img.height}\x00".encode("ascii")
            rows.append(self._hash_vector(header + img.pixels.tobytes()))
        return np.stack(rows)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))


class HttpBackendClient:
    """Wire protocol v1 client.

    Transport failures (connection refused, timeouts, bare 5xx) are retried
    up to ``max_attempts`` times with exponential backoff; error envelopes
    returned by the server are raised immediately as :class:`ProtocolError`.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        session: requests.Session | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.session = session or requests.Session()
        self._caps: BackendCapabilitySet | None = None

    def _request(self, method: str, path: str, payload: dict | None, step: str) -> dict:
        url = f"{self.base_url}{path}"
        last_exc: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                if method == "GET":
                    resp = self.session.get(url, timeout=self.timeout)
                else:
                    resp = self.session.post(url, json=payload, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                continue
            try:
                body = resp.json()
            except ValueError:
                body = None
            if isinstance(body, dict) and "error" in body:
                err = body["error"]
                raise ProtocolError(
                    code=str(err.get("code", "unknown")),
                    message=str(err.get("message", "")),
                    failed_step=str(err.get("failed_step", step)),
                )
            if resp.status_code in (502, 503, 504) or (
                resp.status_code >= 500 and body is None
            ):
                last_exc = TransportError(f"HTTP {resp.status_code} from {url}")
                continue
            if resp.status_code != 200 or body is None:
                raise ProtocolError(
                    code=f"http_{resp.status_code}", message=resp.text[:200], failed_step=step
                )
            return body
        raise TransportError(
            f"backend unreachable after {self.max_attempts} attempts: {last_exc}"
        )

    def _call(self, path: str, payload: dict, step: str) -> dict:
        request_id = uuid.uuid4().hex
        body = self._request("POST", path, {"request_id": request_id, **payload}, step)
        if body.get("request_id") != request_id:
            raise ProtocolError(
                code="request_id_mismatch",
                message=f"sent {request_id}, got {body.get('request_id')!r}",
                failed_step=step,
            )
        return body

    def _require(self, op: str) -> None:
        caps = self.capabilities()
        if not getattr(caps, op):
            raise CapabilityError(f"backend {caps.name!r} does not advertise {op!r}")

    def ping(self) -> bool:
        try:
            body = self._request("GET", "/healthz", None, "healthz")
        except BackendError:
            return False
        return body.get("status") == "ok"

    def capabilities(self) -> BackendCapabilitySet:
        if self._caps is None:
            body = self._request("GET", "/v1/capabilities", None, "capabilities")
            if body.get("wire_version") != WIRE_VERSION:
                raise ProtocolError(
                    code="wire_version_mismatch",
                    message=f"server speaks {body.get('wire_version')}, client {WIRE_VERSION}",
                    failed_step="capabilities",
                )
            self._caps = BackendCapabilitySet.from_dict(body["capabilities"])
        return self._caps

    def generate(self, request: GenerationRequest) -> RasterImage:
        self._require("generate")
        body = self._call(
            "/v1/generate",
            {
                "prompt": request.prompt,
                "seed": request.seed,
                "width": request.width,
                "height": request.height,
            },
            "generate",
        )
        return raster_from_png_bytes(_unb64(body["image_png"]))

    def segment(self, image: RasterImage, category: str) -> SegmentationResult:
        self._require("segment")
        try:
            body = self._call(
                "/v1/segment",
                {"image_png": _b64(raster_to_png_bytes(image)), "category": category},
                "segment",
            )
        except ProtocolError as exc:
            if exc.code == "segmentation_not_found":
                raise SegmentationNotFoundError(str(exc)) from exc
            raise
        mask = mask_from_png_bytes(_unb64(body["mask_png"]))
        bbox = tuple(int(v) for v in body["bbox"])
        return SegmentationResult(
            mask=mask, bbox=bbox, confidence=float(body["confidence"])
        )

    def inpaint(
        self, image: RasterImage, mask: BinaryMask, prompt: str, seed: int
    ) -> RasterImage:
        self._require("inpaint")
        body = self._call(
            "/v1/inpaint",
            {
                "image_png": _b64(raster_to_png_bytes(image)),
                "mask_png": _b64(mask_to_png_bytes(mask)),
                "prompt": prompt,
                "seed": seed,
            },
            "inpaint",
        )
        return raster_from_png_bytes(_unb64(body["image_png"]))

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        self._require("embed")
        body = self._call("/v1/embed", {"kind": "text", "texts": list(texts)}, "embed")
        return np.asarray(body["vectors"], dtype=np.float32).reshape(len(texts), -1)

    def embed_images(self, images: Sequence[RasterImage]) -> np.ndarray:
        self._require("embed")
        body = self._call(
            "/v1/embed",
            {"kind": "image", "images_png": [_b64(raster_to_png_bytes(i)) for i in images]},
            "embed",
        )
        return np.asarray(body["vectors"], dtype=np.float32).reshape(len(images), -1)
