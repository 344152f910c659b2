"""HTTP application implementing the backend wire protocol.

All failures use one JSON envelope regardless of HTTP status:

    {"error": {"code": ..., "message": ..., "failed_step": ...}}

Every POST response echoes the request's ``request_id``.  Handlers delegate
to per-capability adapter callables resolved once at startup; the adapters
are pure functions, so requests share no mutable state.
"""

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .adapters import AdapterSet, load_adapters
from .codec import (
    CodecError,
    b64_decode,
    b64_encode,
    image_from_png,
    image_to_png,
    mask_from_png,
    mask_to_png,
)
from .config import ServerConfig

WIRE_VERSION = 1
MAX_SIDE = 8192


class ApiError(Exception):
    """Request failure carrying the wire error envelope."""

    def __init__(self, status: int, code: str, message: str, step: str) -> None:
        super().__init__(f"{code} during {step}: {message}")
        self.status = status
        self.code = code
        self.message = message
        self.step = step


async def _body(request: Request, step: str) -> dict:
    try:
        data = await request.json()
    except Exception as exc:
        raise ApiError(400, "bad_json", f"request body is not JSON: {exc}", step) from exc
    if not isinstance(data, dict):
        raise ApiError(400, "bad_request", "request body must be a JSON object", step)
    return data


def _request_id(body: dict, step: str) -> str:
    rid = body.get("request_id")
    if not isinstance(rid, str) or not rid:
        raise ApiError(400, "bad_request", "request_id must be a non-empty string", step)
    return rid


def _field(body: dict, name: str, kind: type, step: str):
    value = body.get(name)
    if kind is int and isinstance(value, bool):
        raise ApiError(400, "bad_request", f"{name} must be an integer", step)
    if not isinstance(value, kind):
        raise ApiError(400, "bad_request", f"{name} must be {kind.__name__}", step)
    return value


def _decode_image(body: dict, name: str, step: str) -> np.ndarray:
    try:
        return image_from_png(b64_decode(body.get(name), name), name)
    except CodecError as exc:
        raise ApiError(400, exc.code, str(exc), step) from exc


def _decode_mask(body: dict, name: str, step: str) -> np.ndarray:
    try:
        return mask_from_png(b64_decode(body.get(name), name), name)
    except CodecError as exc:
        raise ApiError(400, exc.code, str(exc), step) from exc


def _require(adapter, step: str):
    if adapter is None:
        raise ApiError(
            501, "capability_unavailable", f"no adapter mounted for {step}", step
        )
    return adapter


def create_app(config: ServerConfig | None = None) -> FastAPI:
    config = config or ServerConfig()
    adapters: AdapterSet = load_adapters(config)
    app = FastAPI(title="modelserver", docs_url=None, redoc_url=None)
    app.state.config = config
    app.state.adapters = adapters

    @app.exception_handler(ApiError)
    async def _on_api_error(_request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={
                "error": {
                    "code": exc.code,
                    "message": exc.message,
                    "failed_step": exc.step,
                }
            },
        )

    @app.get("/healthz")
    async def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/v1/capabilities")
    async def capabilities() -> dict:
        return {"wire_version": WIRE_VERSION, "capabilities": adapters.capabilities()}

    @app.post("/v1/generate")
    async def generate(request: Request) -> dict:
        body = await _body(request, "generate")
        rid = _request_id(body, "generate")
        prompt = _field(body, "prompt", str, "generate")
        if not prompt:
            raise ApiError(400, "bad_request", "prompt must be non-empty", "generate")
        seed = _field(body, "seed", int, "generate")
        if not 0 <= seed < 2**64:
            raise ApiError(400, "bad_request", "seed must fit in 64 bits", "generate")
        width = _field(body, "width", int, "generate")
        height = _field(body, "height", int, "generate")
        if not (16 <= width <= MAX_SIDE and 16 <= height <= MAX_SIDE):
            raise ApiError(
                400, "bad_request", f"size must be within 16..{MAX_SIDE}", "generate"
            )
        fn = _require(adapters.generate, "generate")
        image = fn(prompt, seed, width, height)
        return {"request_id": rid, "image_png": b64_encode(image_to_png(image))}

    @app.post("/v1/segment")
    async def segment(request: Request) -> dict:
        body = await _body(request, "segment")
        rid = _request_id(body, "segment")
        image = _decode_image(body, "image_png", "segment")
        category = _field(body, "category", str, "segment")
        if not category:
            raise ApiError(400, "bad_request", "category must be non-empty", "segment")
        fn = _require(adapters.segment, "segment")
        result = fn(image, category)
        if result is None:
            raise ApiError(
                404,
                "segmentation_not_found",
                f"no {category} instance found",
                "segment",
            )
        mask, bbox, confidence = result
        return {
            "request_id": rid,
            "mask_png": b64_encode(mask_to_png(mask)),
            "bbox": [int(v) for v in bbox],
            "confidence": float(confidence),
        }

    @app.post("/v1/inpaint")
    async def inpaint(request: Request) -> dict:
        body = await _body(request, "inpaint")
        rid = _request_id(body, "inpaint")
        image = _decode_image(body, "image_png", "inpaint")
        mask = _decode_mask(body, "mask_png", "inpaint")
        if mask.shape != image.shape[:2]:
            raise ApiError(
                400,
                "dimension_mismatch",
                f"mask {mask.shape} does not match image {image.shape[:2]}",
                "inpaint",
            )
        prompt = _field(body, "prompt", str, "inpaint")
        seed = _field(body, "seed", int, "inpaint")
        if not 0 <= seed < 2**64:
            raise ApiError(400, "bad_request", "seed must fit in 64 bits", "inpaint")
        fn = _require(adapters.inpaint, "inpaint")
        out = fn(image, mask, prompt, seed)
        return {"request_id": rid, "image_png": b64_encode(image_to_png(out))}

    @app.post("/v1/embed")
    async def embed(request: Request) -> dict:
        body = await _body(request, "embed")
        rid = _request_id(body, "embed")
        kind = _field(body, "kind", str, "embed")
        if kind == "text":
            texts = body.get("texts")
            if (
                not isinstance(texts, list)
                or not texts
                or not all(isinstance(t, str) for t in texts)
            ):
                raise ApiError(
                    400, "bad_request", "texts must be a non-empty list of strings", "embed"
                )
            fn = _require(adapters.embed_texts, "embed")
            vectors = fn(texts)
        elif kind == "image":
            payloads = body.get("images_png")
            if not isinstance(payloads, list) or not payloads:
                raise ApiError(
                    400, "bad_request", "images_png must be a non-empty list", "embed"
                )
            images = []
            for index, item in enumerate(payloads):
                try:
                    images.append(
                        image_from_png(b64_decode(item, f"images_png[{index}]"), f"images_png[{index}]")
                    )
                except CodecError as exc:
                    raise ApiError(400, exc.code, str(exc), "embed") from exc
            fn = _require(adapters.embed_images, "embed")
            vectors = fn(images)
        else:
            raise ApiError(400, "bad_request", "kind must be 'text' or 'image'", "embed")
        return {"request_id": rid, "vectors": [[float(v) for v in row] for row in vectors]}

    return app
