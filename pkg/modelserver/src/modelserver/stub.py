"""Deterministic built-in model implementations.

Every function is a pure function of its arguments: the same request always
produces bit-identical output, no assets or accelerators are needed, and
nothing is cached or shared between calls.
"""

import hashlib

import numpy as np

EMBED_DIM = 32

# rectangle side as a fraction of the image, for the stub segmenter
_BOX_MIN = 0.35
_BOX_MAX = 0.6


def _rng(*parts: object) -> np.random.Generator:
    hasher = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bytes):
            raw = b"b" + part
        elif isinstance(part, str):
            raw = b"s" + part.encode("utf-8")
        elif isinstance(part, (int, np.integer)):
            raw = b"i" + str(int(part)).encode("ascii")
        else:
            raise TypeError(f"unsupported seed part: {type(part)!r}")
        hasher.update(len(raw).to_bytes(4, "little"))
        hasher.update(raw)
    return np.random.default_rng(int.from_bytes(hasher.digest(), "little"))


def generate(prompt: str, seed: int, width: int, height: int) -> np.ndarray:
    """Textured noise image keyed by the full request, RGBA uint8."""
    rng = _rng("generate", prompt, seed, width, height)
    # coarse noise upsampled for visible structure, fine noise for variance
    coarse = rng.integers(40, 216, size=(max(1, height // 16), max(1, width // 16), 3))
    coarse = np.repeat(np.repeat(coarse, 16, axis=0), 16, axis=1)[:height, :width]
    if coarse.shape[:2] != (height, width):
        pad_h = height - coarse.shape[0]
        pad_w = width - coarse.shape[1]
        coarse = np.pad(coarse, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    fine = rng.integers(-24, 25, size=(height, width, 3))
    rgb = np.clip(coarse + fine, 0, 255).astype(np.uint8)
    alpha = np.full((height, width, 1), 255, dtype=np.uint8)
    return np.concatenate([rgb, alpha], axis=2)


def segment(image: np.ndarray, category: str) -> tuple[np.ndarray, tuple[int, int, int, int], float] | None:
    """Deterministic rectangular instance mask, or None on featureless input.

    Returns (mask, bbox, confidence) with bbox the tight box of the mask in
    half-open pixel coordinates.
    """
    height, width = image.shape[:2]
    rgb = image[..., :3]
    if rgb.min() == rgb.max():
        return None
    rng = _rng("segment", category, image.tobytes(), height, width)
    box_w = max(1, int(width * rng.uniform(_BOX_MIN, _BOX_MAX)))
    box_h = max(1, int(height * rng.uniform(_BOX_MIN, _BOX_MAX)))
    x0 = int(rng.integers(0, width - box_w + 1))
    y0 = int(rng.integers(0, height - box_h + 1))
    mask = np.zeros((height, width), dtype=bool)
    mask[y0 : y0 + box_h, x0 : x0 + box_w] = True
    confidence = round(float(rng.uniform(0.5, 1.0)), 6)
    return mask, (x0, y0, x0 + box_w, y0 + box_h), confidence


def inpaint(image: np.ndarray, mask: np.ndarray, prompt: str, seed: int) -> np.ndarray:
    """Fill masked pixels from a noise field keyed by (prompt, seed, size).

    The field depends only on pixel position, so the same seed fills the same
    coordinates identically under any mask; unmasked pixels are returned
    bit-for-bit.
    """
    height, width = image.shape[:2]
    field = generate(prompt, seed, width, height)
    out = image.copy()
    out[mask] = field[mask]
    return out


def _hash_vector(tag: bytes) -> np.ndarray:
    rng = _rng("embed", tag)
    vec = rng.standard_normal(EMBED_DIM)
    return (vec / np.linalg.norm(vec)).astype(np.float32)


def embed_texts(texts: list[str]) -> np.ndarray:
    return np.stack([_hash_vector(b"text\x00" + t.encode("utf-8")) for t in texts])


def embed_images(images: list[np.ndarray]) -> np.ndarray:
    return np.stack(
        [
            _hash_vector(b"image\x00" + str(i.shape).encode("ascii") + i.tobytes())
            for i in images
        ]
    )
