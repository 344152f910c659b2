"""Shared domain types: rasters, masks, sprites, layouts, and seed derivation.

Conventions used throughout the package:

* normalized coordinates live in [0, 1]^2 with the origin at the top-left
  corner and y growing downward; only rasterization converts to pixels,
* pixel boxes are half-open ``(x0, y0, x1, y1)`` with ``x1 > x0``,
* seeds are unsigned 64-bit integers.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

__all__ = [
    "COCO_CLASSES",
    "PixelBox",
    "RasterImage",
    "BinaryMask",
    "SpriteAsset",
    "Placement",
    "CanvasLayout",
    "SpriteLibrary",
    "ValidationError",
    "derive_seed",
    "box_intersection",
    "box_iou",
    "scaled_bbox_dims",
    "placement_pixel_box",
    "validate_layout",
    "load_mask_png",
    "load_raster_png",
    "save_mask_png",
    "save_raster_png",
    "mask_from_png_bytes",
    "mask_to_png_bytes",
    "raster_from_png_bytes",
    "raster_to_png_bytes",
]

# The 80-category vocabulary every sprite and caption draws from.
COCO_CLASSES: tuple[str, ...] = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "traffic light", "fire hydrant", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard",
    "sports ball", "kite", "baseball bat", "baseball glove", "skateboard",
    "surfboard", "tennis racket", "bottle", "wine glass", "cup", "fork",
    "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair",
    "couch", "potted plant", "bed", "dining table", "toilet", "tv",
    "laptop", "mouse", "remote", "keyboard", "cell phone", "microwave",
    "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase",
    "scissors", "teddy bear", "hair drier", "toothbrush",
)

PixelBox = tuple[int, int, int, int]

_MASK64 = 0xFFFFFFFFFFFFFFFF


class ValidationError(ValueError):
    """An object failed one of its structural invariants."""


def derive_seed(root: int, path: Sequence[str | int | tuple[str, int]]) -> int:
    """Derive a 64-bit seed from a root seed and a labeled index path.

    The derivation is a pure function of ``(root, path)``: identical inputs
    always produce identical seeds, and distinct paths diverge with
    overwhelming probability.  Path elements may be strings, integers, or
    ``(label, index)`` pairs.
    """
    if not path:
        raise ValueError("seed derivation path must be non-empty")
    root = int(root)
    if not 0 <= root < 2**64:
        raise ValueError("root seed must fit in unsigned 64 bits")
    h = hashlib.blake2b(digest_size=8)
    h.update(root.to_bytes(8, "little"))
    for element in path:
        if isinstance(element, tuple):
            label, index = element
            encoded = label.encode("utf-8")
            h.update(b"t")
            h.update(len(encoded).to_bytes(4, "little"))
            h.update(encoded)
            h.update(int(index).to_bytes(8, "little", signed=True))
        elif isinstance(element, str):
            encoded = element.encode("utf-8")
            h.update(b"s")
            h.update(len(encoded).to_bytes(4, "little"))
            h.update(encoded)
        elif isinstance(element, (int, np.integer)):
            h.update(b"i")
            h.update(int(element).to_bytes(8, "little", signed=True))
        else:
            raise TypeError(f"unsupported path element: {element!r}")
    return int.from_bytes(h.digest(), "little") & _MASK64


def _freeze(array: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(array)
    if out is array:
        out = array.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class RasterImage:
    """An RGBA 8-bit raster. The pixel buffer is immutable once built."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 4 or px.dtype != np.uint8:
            raise ValidationError("raster must be an (h, w, 4) uint8 array")
        if px.shape[0] <= 0 or px.shape[1] <= 0:
            raise ValidationError("raster dimensions must be positive")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def blank(cls, width: int, height: int, rgba: tuple[int, int, int, int] = (0, 0, 0, 0)) -> "RasterImage":
        px = np.empty((height, width, 4), dtype=np.uint8)
        px[:, :] = rgba
        return cls(px)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True)
class BinaryMask:
    """A boolean pixel grid annotating a raster of matching dimensions."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        g = self.grid
        if g.ndim != 2 or g.dtype != np.bool_:
            raise ValidationError("mask must be an (h, w) boolean array")
        if g.shape[0] <= 0 or g.shape[1] <= 0:
            raise ValidationError("mask dimensions must be positive")
        object.__setattr__(self, "grid", _freeze(g))

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    def count(self) -> int:
        return int(self.grid.sum())

    def matches(self, raster: RasterImage) -> bool:
        return (self.height, self.width) == (raster.height, raster.width)

    def tight_bbox(self) -> PixelBox:
        """Minimal half-open box containing every set pixel."""
        ys, xs = np.nonzero(self.grid)
        if ys.size == 0:
            raise ValidationError("mask has no set pixels")
        return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.grid.shape == other.grid.shape and bool(
            np.array_equal(self.grid, other.grid)
        )


@dataclass(frozen=True)
class SpriteAsset:
    """A background-free object cutout with its category and provenance seed.

    The raster is cropped to the tight bounding box of the alpha mask and
    every pixel outside the alpha is fully transparent.
    """

    category: str
    raster: RasterImage
    alpha: BinaryMask
    bbox: PixelBox
    source_seed: int

    def __post_init__(self) -> None:
        if self.category not in COCO_CLASSES:
            raise ValidationError(f"unknown category: {self.category!r}")
        if not self.alpha.matches(self.raster):
            raise ValidationError("alpha dimensions must match the raster")
        if self.alpha.count() == 0:
            raise ValidationError("sprite alpha must have at least one set pixel")
        if self.bbox != self.alpha.tight_bbox():
            raise ValidationError("bbox must be the tight box of the alpha")
        outside = ~self.alpha.grid
        if np.any(self.raster.pixels[outside] != 0):
            raise ValidationError("pixels outside the alpha must be transparent")

    @property
    def sprite_id(self) -> str:
        return f"{self.category.replace(' ', '_')}-{self.source_seed:016x}"

    @classmethod
    def from_cutout(cls, category: str, raster: RasterImage, alpha: BinaryMask, source_seed: int) -> "SpriteAsset":
        """Crop a raster/alpha pair to the alpha's tight box and zero the outside."""
        x0, y0, x1, y1 = alpha.tight_bbox()
        grid = alpha.grid[y0:y1, x0:x1]
        px = raster.pixels[y0:y1, x0:x1].copy()
        px[~grid] = 0
        cropped = RasterImage(px)
        mask = BinaryMask(grid.copy())
        return cls(category=category, raster=cropped, alpha=mask,
                   bbox=mask.tight_bbox(), source_seed=source_seed)

    def save(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        save_raster_png(self.raster, directory / "raster.png")
        save_mask_png(self.alpha, directory / "alpha.png")
        meta = {
            "category": self.category,
            "bbox": list(self.bbox),
            "source_seed": self.source_seed,
        }
        (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, directory: Path) -> "SpriteAsset":
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
        return cls(
            category=meta["category"],
            raster=load_raster_png(directory / "raster.png"),
            alpha=load_mask_png(directory / "alpha.png"),
            bbox=tuple(meta["bbox"]),
            source_seed=meta["source_seed"],
        )


@dataclass(frozen=True)
class Placement:
    """One sprite placed on a canvas.

    ``center`` is the normalized center of the scaled bounding box and
    ``scale`` is the resize factor relative to the sprite's native size.
    """

    sprite_id: str
    center: tuple[float, float]
    scale: float
    z_order: int = 0

    def __post_init__(self) -> None:
        cx, cy = self.center
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
            raise ValidationError(f"center must lie in [0,1]^2, got {self.center}")
        if self.scale <= 0.0:
            raise ValidationError("scale must be positive")

    def to_dict(self) -> dict:
        return {
            "sprite_id": self.sprite_id,
            "center": [self.center[0], self.center[1]],
            "scale": self.scale,
            "z_order": self.z_order,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Placement":
        return cls(
            sprite_id=data["sprite_id"],
            center=(data["center"][0], data["center"][1]),
            scale=data["scale"],
            z_order=data["z_order"],
        )


@dataclass(frozen=True)
class CanvasLayout:
    """An ordered arrangement of sprite placements on a canvas."""

    width: int
    height: int
    placements: tuple[Placement, ...]
    background_prompt: str
    layout_seed: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("canvas dimensions must be positive")
        object.__setattr__(self, "placements", tuple(self.placements))

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "placements": [p.to_dict() for p in self.placements],
            "background_prompt": self.background_prompt,
            "layout_seed": self.layout_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CanvasLayout":
        return cls(
            width=data["width"],
            height=data["height"],
            placements=tuple(Placement.from_dict(p) for p in data["placements"]),
            background_prompt=data["background_prompt"],
            layout_seed=data["layout_seed"],
        )


class SpriteLibrary:
    """A collection of sprites addressable by id, with per-category lookup."""

    def __init__(self, sprites: Iterable[SpriteAsset] = ()) -> None:
        self._by_id: dict[str, SpriteAsset] = {}
        for sprite in sprites:
            self.add(sprite)

    def add(self, sprite: SpriteAsset) -> None:
        self._by_id[sprite.sprite_id] = sprite

    def get(self, sprite_id: str) -> SpriteAsset:
        try:
            return self._by_id[sprite_id]
        except KeyError:
            raise KeyError(f"unresolved sprite reference: {sprite_id!r}") from None

    def __contains__(self, sprite_id: str) -> bool:
        return sprite_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def ids(self) -> list[str]:
        return sorted(self._by_id)

    def for_category(self, category: str) -> list[SpriteAsset]:
        found = [s for s in self._by_id.values() if s.category == category]
        found.sort(key=lambda s: s.sprite_id)
        return found


def scaled_bbox_dims(sprite: SpriteAsset, scale: float) -> tuple[int, int]:
    """Pixel dimensions of the sprite's bounding box after scaling (>= 1 each)."""
    w = max(1, int(round(sprite.raster.width * scale)))
    h = max(1, int(round(sprite.raster.height * scale)))
    return w, h


def placement_pixel_box(placement: Placement, sprite: SpriteAsset, canvas_w: int, canvas_h: int) -> PixelBox:
    """Half-open pixel box the scaled sprite occupies on the canvas."""
    w, h = scaled_bbox_dims(sprite, placement.scale)
    cx = placement.center[0] * canvas_w
    cy = placement.center[1] * canvas_h
    x0 = int(round(cx - w / 2.0))
    y0 = int(round(cy - h / 2.0))
    return x0, y0, x0 + w, y0 + h


def box_intersection(a: PixelBox, b: PixelBox) -> int:
    """Intersection area of two half-open pixel boxes."""
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0
    return w * h


def box_iou(a: PixelBox, b: PixelBox) -> float:
    inter = box_intersection(a, b)
    if inter == 0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / float(area_a + area_b - inter)


def validate_layout(layout: CanvasLayout, library: SpriteLibrary, *, require_disjoint: bool = False) -> None:
    """Check layout invariants without mutating the layout.

    Raises :class:`ValidationError` when a scaled bounding box clips the
    canvas, a sprite reference is unresolved, or (``require_disjoint``)
    when any two scaled boxes overlap.
    """
    boxes = []
    for placement in layout.placements:
        try:
            sprite = library.get(placement.sprite_id)
        except KeyError:
            raise ValidationError(
                f"unresolved sprite reference: {placement.sprite_id!r}"
            ) from None
        box = placement_pixel_box(placement, sprite, layout.width, layout.height)
        if box[0] < 0 or box[1] < 0 or box[2] > layout.width or box[3] > layout.height:
            raise ValidationError(
                f"placement of {placement.sprite_id} clips the canvas: {box}"
            )
        boxes.append(box)
    if require_disjoint:
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if box_iou(boxes[i], boxes[j]) > 0.0:
                    raise ValidationError(
                        f"placements {i} and {j} overlap (IoU > 0)"
                    )


def save_raster_png(raster: RasterImage, path: Path | str) -> None:
    Image.fromarray(np.asarray(raster.pixels), mode="RGBA").save(path, format="PNG")


def load_raster_png(path: Path | str) -> RasterImage:
    with Image.open(path) as img:
        return RasterImage(np.asarray(img.convert("RGBA"), dtype=np.uint8).copy())


def save_mask_png(mask: BinaryMask, path: Path | str) -> None:
    data = np.where(mask.grid, np.uint8(255), np.uint8(0))
    Image.fromarray(data, mode="L").save(path, format="PNG")


def load_mask_png(path: Path | str) -> BinaryMask:
    with Image.open(path) as img:
        data = np.asarray(img.convert("L"), dtype=np.uint8)
    return BinaryMask(data >= 128)


def raster_to_png_bytes(raster: RasterImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(raster.pixels), mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def raster_from_png_bytes(data: bytes) -> RasterImage:
    with Image.open(io.BytesIO(data)) as img:
        return RasterImage(np.asarray(img.convert("RGBA"), dtype=np.uint8).copy())


def mask_to_png_bytes(mask: BinaryMask) -> bytes:
    buf = io.BytesIO()
    data = np.where(mask.grid, np.uint8(255), np.uint8(0))
    Image.fromarray(data, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes) -> BinaryMask:
    with Image.open(io.BytesIO(data)) as img:
        arr = np.asarray(img.convert("L"), dtype=np.uint8)
    return BinaryMask(arr >= 128)
