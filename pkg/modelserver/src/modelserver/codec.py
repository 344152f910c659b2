"""Wire payload codecs: base64 strings carrying PNG images and masks.

Images travel as RGBA PNGs, masks as 8-bit grayscale PNGs with 0/255 values
(anything at or above 128 decodes as set).
"""

import base64
import binascii
import io

import numpy as np
from PIL import Image


class CodecError(Exception):
    """A payload field could not be decoded; carries the envelope code."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


def b64_encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64_decode(value: object, field: str) -> bytes:
    if not isinstance(value, str):
        raise CodecError("bad_base64", f"{field} must be a base64 string")
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise CodecError("bad_base64", f"{field} is not valid base64: {exc}") from exc


def image_to_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png(data: bytes, field: str) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            return np.asarray(img.convert("RGBA"), dtype=np.uint8).copy()
    except Exception as exc:
        raise CodecError("bad_png", f"{field} is not a decodable PNG: {exc}") from exc


def mask_to_png(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    data = np.where(np.asarray(mask, dtype=bool), np.uint8(255), np.uint8(0))
    Image.fromarray(data, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png(data: bytes, field: str) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            arr = np.asarray(img.convert("L"), dtype=np.uint8)
    except Exception as exc:
        raise CodecError("bad_png", f"{field} is not a decodable PNG: {exc}") from exc
    return arr >= 128
