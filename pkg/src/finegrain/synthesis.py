"""Candidate-set synthesis: plan, verify, and render probe cases.

A probe case is a set of K candidate images over the same object sprites in
which exactly one attribute (size, position, existence, or count) changes
between candidates; each candidate pairs with one caption.  Planning is pure
geometry over a sprite library; execution renders the layouts with a model
backend and keeps backgrounds consistent across candidates by inpainting a
background tile once around the anchor object and copying its pixels into
every candidate instead of regenerating them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import Backend, CapabilityError, generate_object_image
from .core import (
    BinaryMask,
    CanvasLayout,
    PixelBox,
    Placement,
    RasterImage,
    SpriteAsset,
    SpriteLibrary,
    ValidationError,
    derive_seed,
    placement_pixel_box,
    scaled_bbox_dims,
    validate_layout,
)
from .semantics import (
    ExistenceLabel,
    Label,
    RelSizeRelation,
    SizeLevel,
    SpatialRelation,
    SubsetKind,
    canonical_labels,
    classify_absolute_position,
    classify_absolute_size,
    classify_existence,
    classify_relative_position,
    classify_relative_size,
    label_slug,
    parse_label,
    render_caption,
    subset_cardinality,
)

__all__ = [
    "BACKGROUND_PROMPT",
    "DEFAULT_CANVAS",
    "TILE_SCALE",
    "SynthesisError",
    "SynthesisInfeasibleError",
    "CandidatePlan",
    "CasePlan",
    "TilePatch",
    "ExecutedCase",
    "background_consistency",
    "build_sprite_library",
    "composite_layout",
    "execute_case",
    "load_library",
    "measure_candidate",
    "place_non_overlapping",
    "plan_case",
    "save_library",
    "sprite_fill",
    "synthesize_case",
]

# Prompt used whenever background pixels are inpainted.
BACKGROUND_PROMPT = "a clean, evenly lit, uncluttered background"

DEFAULT_CANVAS = 512

# The background tile spans this multiple of the anchor object's box.
TILE_SCALE = 1.5

# Objects may not reach closer to the canvas border than this fraction.
_BORDER_MARGIN = 0.005

# An object must cover at least this fraction of its own bounding box to be
# scalable into the large-size band without clipping the canvas.
_MIN_FILL_FOR_LARGE = 0.88

_PLAN_ATTEMPTS = 3


class SynthesisError(RuntimeError):
    """Base class for synthesis failures."""


class SynthesisInfeasibleError(SynthesisError):
    """No layout satisfying the requested labels exists for these sprites."""


@dataclass(frozen=True)
class CandidatePlan:
    """One candidate of a case: its label, caption, and sprite layout."""

    label: Label
    caption: str
    layout: CanvasLayout

    def to_dict(self) -> dict:
        return {
            "label": label_slug(self.label),
            "caption": self.caption,
            "layout": self.layout.to_dict(),
        }


@dataclass(frozen=True)
class CasePlan:
    """A fully planned case: K candidates differing in exactly one attribute.

    ``anchor_candidate``/``anchor_slot`` name the placement whose scaled box
    defines the background tile; position subsets relocate the tile along
    with that object, every other subset keeps it in place.
    """

    case_id: str
    subset: SubsetKind
    categories: tuple[str, ...]
    candidates: tuple[CandidatePlan, ...]
    anchor_candidate: int
    anchor_slot: int
    case_seed: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if len(self.candidates) != subset_cardinality(self.subset):
            raise ValidationError(
                f"{self.subset.value} needs {subset_cardinality(self.subset)} "
                f"candidates, got {len(self.candidates)}"
            )
        expected = canonical_labels(self.subset)
        got = tuple(c.label for c in self.candidates)
        if got != expected:
            raise ValidationError("candidates must follow the canonical label order")
        anchor = self.candidates[self.anchor_candidate]
        if self.anchor_slot >= len(anchor.layout.placements):
            raise ValidationError("anchor slot points past the anchor layout")

    @property
    def cardinality(self) -> int:
        return len(self.candidates)

    def captions(self) -> tuple[str, ...]:
        return tuple(c.caption for c in self.candidates)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "subset": self.subset.value,
            "categories": list(self.categories),
            "candidates": [c.to_dict() for c in self.candidates],
            "anchor_candidate": self.anchor_candidate,
            "anchor_slot": self.anchor_slot,
            "case_seed": self.case_seed,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CasePlan":
        subset = SubsetKind(data["subset"])
        candidates = tuple(
            CandidatePlan(
                label=parse_label(subset, c["label"]),
                caption=c["caption"],
                layout=CanvasLayout.from_dict(c["layout"]),
            )
            for c in data["candidates"]
        )
        return cls(
            case_id=data["case_id"],
            subset=subset,
            categories=tuple(data["categories"]),
            candidates=candidates,
            anchor_candidate=data["anchor_candidate"],
            anchor_slot=data["anchor_slot"],
            case_seed=data["case_seed"],
            width=data["width"],
            height=data["height"],
        )


def sprite_fill(sprite: SpriteAsset) -> float:
    """Fraction of the sprite's bounding box covered by its alpha."""
    return sprite.alpha.count() / float(sprite.raster.width * sprite.raster.height)


def build_sprite_library(
    backend: Backend,
    categories: Sequence[str],
    per_category: int = 1,
    seed: int = 0,
    size: int = DEFAULT_CANVAS,
) -> SpriteLibrary:
    """Generate and cut out ``per_category`` sprites for each category."""
    caps = backend.capabilities()
    if not caps.segment:
        raise CapabilityError(f"backend {caps.name!r} cannot segment")
    library = SpriteLibrary()
    for category in categories:
        for index in range(per_category):
            sprite_seed = derive_seed(seed, ("sprite", category, index))
            photo = generate_object_image(backend, category, sprite_seed, size, size)
            result = backend.segment(photo, category)
            library.add(
                SpriteAsset.from_cutout(category, photo, result.mask, sprite_seed)
            )
    return library


def save_library(library: SpriteLibrary, directory: Path | str) -> None:
    root = Path(directory)
    for sprite_id in library.ids():
        library.get(sprite_id).save(root / sprite_id)


def load_library(directory: Path | str) -> SpriteLibrary:
    root = Path(directory)
    sprites = [SpriteAsset.load(p) for p in sorted(root.iterdir()) if p.is_dir()]
    return SpriteLibrary(sprites)


# Nearest-neighbor rescaling with pure integer index math.  Measurement and
# pasting share the same mapping, so a planned candidate and its rendered
# pixels agree exactly, and results are identical across platforms.


def _nearest_indices(in_dim: int, out_dim: int) -> np.ndarray:
    return np.minimum((np.arange(out_dim) * in_dim) // out_dim, in_dim - 1)


# Scaled sprite cache: rescaling is the hot path of execution, and count
# cases paste one sprite at one scale nine times.
_SCALED_CACHE: dict[tuple[str, float], tuple[np.ndarray, np.ndarray]] = {}
_SCALED_CACHE_CAP = 128


def _scaled_sprite(sprite: SpriteAsset, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor scaled (pixels, alpha) for a sprite.

    Nearest keeps flat colors exact and the alpha binary, so rendering and
    measurement stay bit-consistent.
    """
    key = (sprite.sprite_id, round(float(scale), 9))
    hit = _SCALED_CACHE.get(key)
    if hit is not None:
        return hit
    w, h = scaled_bbox_dims(sprite, scale)
    ix = _nearest_indices(sprite.raster.width, w)
    iy = _nearest_indices(sprite.raster.height, h)
    pixels = np.ascontiguousarray(sprite.raster.pixels[iy][:, ix])
    alpha = pixels[..., 3] >= 128
    if not alpha.any():
        raise SynthesisInfeasibleError(
            f"sprite {sprite.sprite_id} vanishes at scale {scale:.4f}"
        )
    if len(_SCALED_CACHE) >= _SCALED_CACHE_CAP:
        _SCALED_CACHE.pop(next(iter(_SCALED_CACHE)))
    _SCALED_CACHE[key] = (pixels, alpha)
    return pixels, alpha


def _alpha_stats(sprite: SpriteAsset, scale: float) -> tuple[int, float, float]:
    """(pixel count, mean x, mean y) of the scaled alpha, without
    materializing it: nearest resize replicates source rows and columns, so
    sums reduce to weighted products over the native alpha."""
    w, h = scaled_bbox_dims(sprite, scale)
    ix = _nearest_indices(sprite.raster.width, w)
    iy = _nearest_indices(sprite.raster.height, h)
    rep_x = np.bincount(ix, minlength=sprite.raster.width).astype(np.float64)
    rep_y = np.bincount(iy, minlength=sprite.raster.height).astype(np.float64)
    pos_x = np.bincount(ix, weights=np.arange(w) + 0.5, minlength=sprite.raster.width)
    pos_y = np.bincount(iy, weights=np.arange(h) + 0.5, minlength=sprite.raster.height)
    grid = sprite.alpha.grid
    col_hits = rep_y @ grid
    row_hits = grid @ rep_x
    count = float(col_hits @ rep_x)
    if count <= 0.0:
        raise SynthesisInfeasibleError(
            f"sprite {sprite.sprite_id} vanishes at scale {scale:.4f}"
        )
    mean_x = float(col_hits @ pos_x) / count
    mean_y = float(pos_y @ row_hits) / count
    return int(round(count)), mean_x, mean_y


def _scaled_alpha_count(sprite: SpriteAsset, scale: float) -> int:
    return _alpha_stats(sprite, scale)[0]


def _alpha_centroid(
    placement: Placement, sprite: SpriteAsset, width: int, height: int
) -> tuple[float, float]:
    """Normalized centroid of the placed sprite's scaled alpha."""
    _, mean_x, mean_y = _alpha_stats(sprite, placement.scale)
    x0, y0, _, _ = placement_pixel_box(placement, sprite, width, height)
    return ((x0 + mean_x) / width, (y0 + mean_y) / height)


def _scale_for_area(sprite: SpriteAsset, target_fraction: float, width: int, height: int) -> float:
    """Scale at which the sprite's alpha covers the target canvas fraction."""
    target_px = target_fraction * width * height
    return float(np.sqrt(target_px / sprite.alpha.count()))


def measure_candidate(
    subset: SubsetKind,
    layout: CanvasLayout,
    library: SpriteLibrary,
) -> Label | None:
    """Re-derive a candidate's label from its geometry alone.

    This is the verification side of planning: it shares no thresholds or
    targets with the planner, only the classifiers.  Returns ``None`` when a
    measurement falls inside a classifier safety gap.
    """
    w, h = layout.width, layout.height
    placements = layout.placements
    if subset is SubsetKind.ABSOLUTE_SIZE:
        sprite = library.get(placements[0].sprite_id)
        area = _scaled_alpha_count(sprite, placements[0].scale)
        return classify_absolute_size(area / float(w * h))
    if subset is SubsetKind.RELATIVE_SIZE:
        sprite_a = library.get(placements[0].sprite_id)
        sprite_b = library.get(placements[1].sprite_id)
        area_a = _scaled_alpha_count(sprite_a, placements[0].scale)
        area_b = _scaled_alpha_count(sprite_b, placements[1].scale)
        return classify_relative_size(area_a, area_b)
    if subset is SubsetKind.ABSOLUTE_POSITION:
        sprite = library.get(placements[0].sprite_id)
        return classify_absolute_position(_alpha_centroid(placements[0], sprite, w, h))
    if subset is SubsetKind.RELATIVE_POSITION:
        sprite_a = library.get(placements[0].sprite_id)
        sprite_b = library.get(placements[1].sprite_id)
        return classify_relative_position(
            _alpha_centroid(placements[0], sprite_a, w, h),
            _alpha_centroid(placements[1], sprite_b, w, h),
        )
    if subset is SubsetKind.EXISTENCE:
        return classify_existence(len(placements))
    if subset is SubsetKind.COUNT:
        count = len(placements)
        return count if 1 <= count <= 9 else None
    raise ValueError(f"unknown subset: {subset!r}")


def place_non_overlapping(
    rng: np.random.Generator,
    count: int,
    side: float,
    *,
    margin: float = 0.03,
    gap: float = 0.02,
    max_tries: int = 500,
) -> list[tuple[float, float]]:
    """Centers for ``count`` square boxes of normalized ``side`` that neither
    overlap (L-inf separation ``side + gap``) nor cross the border margin.

    Small counts use rejection sampling; larger counts (or rejection
    exhaustion) fall back to a jittered grid, which is deterministic under
    the same rng.  Raises :class:`SynthesisInfeasibleError` when the side
    cannot fit.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    lo = margin + side / 2.0
    hi = 1.0 - margin - side / 2.0
    if hi <= lo:
        raise SynthesisInfeasibleError(f"side {side:.3f} does not fit the canvas")

    def separated(c: tuple[float, float], chosen: list[tuple[float, float]]) -> bool:
        return all(
            max(abs(c[0] - o[0]), abs(c[1] - o[1])) >= side + gap for o in chosen
        )

    if count <= 4:
        centers: list[tuple[float, float]] = []
        for _ in range(max_tries):
            c = (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))
            if separated(c, centers):
                centers.append(c)
                if len(centers) == count:
                    return centers
        # fall through to the grid

    dim = int(np.ceil(np.sqrt(count)))
    cell = (1.0 - 2.0 * margin) / dim
    jitter = (cell - side - gap) / 2.0
    if jitter < 0.0:
        raise SynthesisInfeasibleError(
            f"{count} boxes of side {side:.3f} cannot fit a {dim}x{dim} grid"
        )
    cells = rng.permutation(dim * dim)[:count]
    centers = []
    for c in cells:
        row, col = divmod(int(c), dim)
        cx = margin + (col + 0.5) * cell + float(rng.uniform(-jitter, jitter))
        cy = margin + (row + 0.5) * cell + float(rng.uniform(-jitter, jitter))
        centers.append((cx, cy))
    return centers


def _pick_sprite(rng: np.random.Generator, library: SpriteLibrary, category: str) -> SpriteAsset:
    sprites = library.for_category(category)
    if not sprites:
        raise SynthesisError(f"library holds no sprites for {category!r}")
    return sprites[int(rng.integers(len(sprites)))]


def _max_scale(sprite: SpriteAsset, width: int, height: int) -> float:
    """Largest scale whose bounding box still fits inside the border margin."""
    usable_w = width * (1.0 - 2.0 * _BORDER_MARGIN)
    usable_h = height * (1.0 - 2.0 * _BORDER_MARGIN)
    return min(usable_w / sprite.raster.width, usable_h / sprite.raster.height)


def _center_jitter(rng: np.random.Generator, amount: float) -> float:
    return float(rng.uniform(-amount, amount))


def _layouts_absolute_size(
    rng: np.random.Generator,
    sprite: SpriteAsset,
    width: int,
    height: int,
    seed: int,
) -> list[tuple[Label, list[Placement]]]:
    fill = sprite_fill(sprite)
    if fill < _MIN_FILL_FOR_LARGE:
        raise SynthesisInfeasibleError(
            f"sprite {sprite.sprite_id} fills only {fill:.2f} of its box; the "
            f"large size band needs at least {_MIN_FILL_FOR_LARGE}"
        )
    scale_cap = _max_scale(sprite, width, height)
    area_cap = _scaled_alpha_count(sprite, scale_cap) / float(width * height)
    large_hi = min(0.86, area_cap - 0.005)
    if large_hi < 0.805:
        raise SynthesisInfeasibleError(
            f"sprite {sprite.sprite_id} cannot reach the large size band"
        )
    targets = {
        SizeLevel.SMALL: rng.uniform(0.05, 0.17),
        SizeLevel.MEDIUM: rng.uniform(0.44, 0.56),
        SizeLevel.LARGE: rng.uniform(0.805, large_hi),
    }
    scales = {
        level: min(_scale_for_area(sprite, t, width, height), scale_cap)
        for level, t in targets.items()
    }
    # One shared center; jitter bounded by the largest candidate's box.
    dims = [max(sprite.raster.width, sprite.raster.height) * s for s in scales.values()]
    slack = max(0.0, (1.0 - 2.0 * _BORDER_MARGIN - max(dims) / min(width, height)) / 2.0)
    jitter = min(0.02, slack)
    center = (0.5 + _center_jitter(rng, jitter), 0.5 + _center_jitter(rng, jitter))
    return [
        (level, [Placement(sprite.sprite_id, center, scales[level], 0)])
        for level in canonical_labels(SubsetKind.ABSOLUTE_SIZE)
    ]


def _layouts_relative_size(
    rng: np.random.Generator,
    sprite_a: SpriteAsset,
    sprite_b: SpriteAsset,
    width: int,
    height: int,
    seed: int,
) -> list[tuple[Label, list[Placement]]]:
    area_a = rng.uniform(0.045, 0.065)
    scale_a = _scale_for_area(sprite_a, area_a, width, height)
    exact_a = _scaled_alpha_count(sprite_a, scale_a)
    ratios = {
        RelSizeRelation.SMALLER_THAN: rng.uniform(0.30, 0.45),
        RelSizeRelation.EQUAL_TO: rng.uniform(0.95, 1.05),
        RelSizeRelation.LARGER_THAN: rng.uniform(2.2, 3.0),
    }
    y = 0.5 + _center_jitter(rng, 0.04)
    center_a = (0.25 + _center_jitter(rng, 0.03), y)
    center_b = (0.71 + _center_jitter(rng, 0.03), y)
    out = []
    for relation in canonical_labels(SubsetKind.RELATIVE_SIZE):
        target_b = (exact_a / ratios[relation]) / float(width * height)
        scale_b = _scale_for_area(sprite_b, target_b, width, height)
        out.append(
            (
                relation,
                [
                    Placement(sprite_a.sprite_id, center_a, scale_a, 0),
                    Placement(sprite_b.sprite_id, center_b, scale_b, 1),
                ],
            )
        )
    return out


def _layouts_absolute_position(
    rng: np.random.Generator,
    sprite: SpriteAsset,
    width: int,
    height: int,
    seed: int,
) -> list[tuple[Label, list[Placement]]]:
    area = rng.uniform(0.030, 0.050)
    scale = _scale_for_area(sprite, area, width, height)
    half_w = sprite.raster.width * scale / (2.0 * width)
    half_h = sprite.raster.height * scale / (2.0 * height)
    third = 1.0 / 3.0
    slack = third / 2.0 - max(half_w, half_h) - 0.015
    if slack < 0.0:
        raise SynthesisInfeasibleError("object too large for a grid cell")
    jitter = min(0.03, slack)
    jx = _center_jitter(rng, jitter)
    jy = _center_jitter(rng, jitter)
    out = []
    for cell in canonical_labels(SubsetKind.ABSOLUTE_POSITION):
        center = ((cell.col + 0.5) * third + jx, (cell.row + 0.5) * third + jy)
        out.append((cell, [Placement(sprite.sprite_id, center, scale, 0)]))
    return out


def _layouts_relative_position(
    rng: np.random.Generator,
    sprite_a: SpriteAsset,
    sprite_b: SpriteAsset,
    width: int,
    height: int,
    seed: int,
) -> list[tuple[Label, list[Placement]]]:
    area_a = rng.uniform(0.035, 0.055)
    area_b = rng.uniform(0.035, 0.055)
    scale_a = _scale_for_area(sprite_a, area_a, width, height)
    scale_b = _scale_for_area(sprite_b, area_b, width, height)
    half_a = max(sprite_a.raster.width, sprite_a.raster.height) * scale_a / (2.0 * min(width, height))
    half_b = max(sprite_b.raster.width, sprite_b.raster.height) * scale_b / (2.0 * min(width, height))
    distance = half_a + half_b + rng.uniform(0.03, 0.06)
    # Cap keeps the moved object inside the canvas even at maximum jitter.
    cap = 0.5 - _BORDER_MARGIN - half_b - 0.02
    if distance > cap:
        distance = cap
    if distance <= half_a + half_b + 0.005:
        raise SynthesisInfeasibleError("objects too large to separate decisively")
    center_a = (0.5 + _center_jitter(rng, 0.015), 0.5 + _center_jitter(rng, 0.015))
    # Keep the off-axis coordinate shared so the dominant axis is unambiguous.
    offsets = {
        SpatialRelation.LEFT_OF: (distance, 0.0),
        SpatialRelation.RIGHT_OF: (-distance, 0.0),
        SpatialRelation.ABOVE: (0.0, distance),
        SpatialRelation.BELOW: (0.0, -distance),
    }
    out = []
    for relation in canonical_labels(SubsetKind.RELATIVE_POSITION):
        dx, dy = offsets[relation]
        center_b = (center_a[0] + dx, center_a[1] + dy)
        out.append(
            (
                relation,
                [
                    Placement(sprite_a.sprite_id, center_a, scale_a, 0),
                    Placement(sprite_b.sprite_id, center_b, scale_b, 1),
                ],
            )
        )
    return out


def _layouts_existence(
    rng: np.random.Generator,
    sprite: SpriteAsset,
    width: int,
    height: int,
    seed: int,
) -> list[tuple[Label, list[Placement]]]:
    area = rng.uniform(0.06, 0.12)
    scale = _scale_for_area(sprite, area, width, height)
    center = (0.5 + _center_jitter(rng, 0.05), 0.5 + _center_jitter(rng, 0.05))
    placement = Placement(sprite.sprite_id, center, scale, 0)
    return [
        (ExistenceLabel.NONE, []),
        (ExistenceLabel.AT_LEAST_ONE, [placement]),
    ]


def _layouts_count(
    rng: np.random.Generator,
    sprite: SpriteAsset,
    width: int,
    height: int,
    seed: int,
) -> list[tuple[Label, list[Placement]]]:
    side = float(rng.uniform(0.20, 0.24))
    centers: list[tuple[float, float]] | None = None
    for _ in range(3):
        try:
            centers = place_non_overlapping(rng, 9, side)
            break
        except SynthesisInfeasibleError:
            side *= 0.9
    if centers is None:
        raise SynthesisInfeasibleError("could not arrange nine objects")
    long_px = max(sprite.raster.width, sprite.raster.height)
    scale = side * min(width, height) / long_px
    # Counts nest: candidate k shows the first k placements, so shared
    # objects sit at identical pixels in every candidate.
    all_placements = [
        Placement(sprite.sprite_id, center, scale, z) for z, center in enumerate(centers)
    ]
    return [(k, all_placements[:k]) for k in range(1, 10)]


def plan_case(
    library: SpriteLibrary,
    subset: SubsetKind,
    case_index: int,
    run_seed: int,
    width: int = DEFAULT_CANVAS,
    height: int = DEFAULT_CANVAS,
) -> CasePlan:
    """Plan one case: pick sprites, lay out all K candidates, verify labels.

    Planning is deterministic in (library, subset, case_index, run_seed).
    Every candidate layout is validated (inside the canvas, disjoint boxes)
    and measured back through the classifiers; a candidate measuring
    anything but its intended label fails the attempt.  After
    ``_PLAN_ATTEMPTS`` failed attempts the case is declared infeasible.
    """
    case_seed = derive_seed(run_seed, (subset.value, case_index))
    rng = np.random.default_rng(derive_seed(case_seed, ("plan",)))
    categories = sorted({s.category for s in (library.get(i) for i in library.ids())})
    if not categories:
        raise SynthesisError("sprite library is empty")
    if subset.two_object and len(categories) < 2:
        raise SynthesisError(f"{subset.value} needs at least two categories")

    last_error: Exception | None = None
    for _ in range(_PLAN_ATTEMPTS):
        if subset.two_object:
            pair = rng.choice(len(categories), size=2, replace=False)
            cat_list = [categories[int(pair[0])], categories[int(pair[1])]]
        else:
            cat_list = [categories[int(rng.integers(len(categories)))]]
        sprites = [_pick_sprite(rng, library, c) for c in cat_list]
        seed_arg = derive_seed(case_seed, ("layout",))
        try:
            if subset is SubsetKind.ABSOLUTE_SIZE:
                labeled = _layouts_absolute_size(rng, sprites[0], width, height, seed_arg)
            elif subset is SubsetKind.RELATIVE_SIZE:
                labeled = _layouts_relative_size(rng, sprites[0], sprites[1], width, height, seed_arg)
            elif subset is SubsetKind.ABSOLUTE_POSITION:
                labeled = _layouts_absolute_position(rng, sprites[0], width, height, seed_arg)
            elif subset is SubsetKind.RELATIVE_POSITION:
                labeled = _layouts_relative_position(rng, sprites[0], sprites[1], width, height, seed_arg)
            elif subset is SubsetKind.EXISTENCE:
                labeled = _layouts_existence(rng, sprites[0], width, height, seed_arg)
            elif subset is SubsetKind.COUNT:
                labeled = _layouts_count(rng, sprites[0], width, height, seed_arg)
            else:
                raise ValueError(f"unknown subset: {subset!r}")

            candidates = []
            for label, placements in labeled:
                layout = CanvasLayout(
                    width=width,
                    height=height,
                    placements=tuple(placements),
                    background_prompt=BACKGROUND_PROMPT,
                    layout_seed=seed_arg,
                )
                validate_layout(layout, library, require_disjoint=True)
                measured = measure_candidate(subset, layout, library)
                if measured != label:
                    raise SynthesisInfeasibleError(
                        f"candidate measures {measured!r}, wanted {label!r}"
                    )
                caption = render_caption(subset, label, tuple(cat_list))
                candidates.append(CandidatePlan(label=label, caption=caption, layout=layout))

            anchor_slot = 1 if subset is SubsetKind.RELATIVE_POSITION else 0
            anchor_candidate = next(
                i
                for i, c in enumerate(candidates)
                if len(c.layout.placements) > anchor_slot
            )
            return CasePlan(
                case_id=f"{subset.value}-{case_index:06d}",
                subset=subset,
                categories=tuple(cat_list),
                candidates=tuple(candidates),
                anchor_candidate=anchor_candidate,
                anchor_slot=anchor_slot,
                case_seed=case_seed,
                width=width,
                height=height,
            )
        except (SynthesisInfeasibleError, ValidationError) as exc:
            last_error = exc
    raise SynthesisInfeasibleError(
        f"no feasible plan for {subset.value} case {case_index}: {last_error}"
    )


@dataclass(frozen=True)
class TilePatch:
    """Background pixels inpainted once around the anchor object.

    ``hole`` marks pixels belonging to the anchor itself; they are not
    background and are never copied.
    """

    pixels: np.ndarray
    hole: np.ndarray
    box: PixelBox

    def __post_init__(self) -> None:
        if self.pixels.shape[:2] != self.hole.shape:
            raise ValidationError("tile pixel and hole shapes must agree")


@dataclass(frozen=True)
class ExecutedCase:
    """Rendered candidate images plus the bookkeeping consistency checks need."""

    plan: CasePlan
    images: tuple[RasterImage, ...]
    object_masks: tuple[BinaryMask, ...]
    tile: TilePatch
    tile_boxes: tuple[PixelBox, ...]


def _expand_box(box: PixelBox, factor: float) -> PixelBox:
    cx = (box[0] + box[2]) / 2.0
    cy = (box[1] + box[3]) / 2.0
    half_w = (box[2] - box[0]) * factor / 2.0
    half_h = (box[3] - box[1]) * factor / 2.0
    return (
        int(round(cx - half_w)),
        int(round(cy - half_h)),
        int(round(cx + half_w)),
        int(round(cy + half_h)),
    )


def _clip_box(box: PixelBox, width: int, height: int) -> PixelBox:
    return (
        max(box[0], 0),
        max(box[1], 0),
        min(box[2], width),
        min(box[3], height),
    )


def _paste_sprite(
    pixels: np.ndarray,
    sprite: SpriteAsset,
    placement: Placement,
    width: int,
    height: int,
    coverage: np.ndarray,
) -> None:
    spx, alpha = _scaled_sprite(sprite, placement.scale)
    x0, y0, x1, y1 = placement_pixel_box(placement, sprite, width, height)
    region = pixels[y0:y1, x0:x1]
    region[alpha] = spx[alpha]
    region[alpha, 3] = 255
    coverage[y0:y1, x0:x1] |= alpha


def composite_layout(
    base: RasterImage, layout: CanvasLayout, library: SpriteLibrary
) -> tuple[RasterImage, BinaryMask]:
    """Paste a layout's sprites over a base canvas, lowest z first.

    Returns the composed image and the union of pasted alphas.
    """
    pixels = base.pixels.copy()
    coverage = np.zeros((base.height, base.width), dtype=bool)
    for placement in sorted(layout.placements, key=lambda p: p.z_order):
        sprite = library.get(placement.sprite_id)
        _paste_sprite(pixels, sprite, placement, layout.width, layout.height, coverage)
    return RasterImage(pixels), BinaryMask(coverage)


def execute_case(plan: CasePlan, library: SpriteLibrary, backend: Backend) -> ExecutedCase:
    """Render every candidate of a planned case with consistent backgrounds.

    The base background and the anchor-neighborhood tile are each inpainted
    once per case; candidates receive copies of the same tile pixels
    (translated for position subsets, in place otherwise), so backgrounds
    around the object agree pixel-for-pixel across candidates.  Only hole
    pixels left uncovered (an absent anchor) are inpainted per candidate.
    """
    caps = backend.capabilities()
    if not caps.inpaint:
        raise CapabilityError(f"backend {caps.name!r} cannot inpaint")
    w, h = plan.width, plan.height
    fill_seed = derive_seed(plan.case_seed, ("fill",))
    tile_seed = derive_seed(plan.case_seed, ("tile",))
    prompt = plan.candidates[0].layout.background_prompt

    blank = RasterImage.blank(w, h, (0, 0, 0, 255))
    everything = BinaryMask(np.ones((h, w), dtype=bool))
    base = backend.inpaint(blank, everything, prompt, fill_seed)

    # Tile: paste the anchor on the base, inpaint its 1.5x neighborhood once,
    # then keep those pixels (minus the anchor hole) for every candidate.
    anchor_layout = plan.candidates[plan.anchor_candidate].layout
    anchor_placement = anchor_layout.placements[plan.anchor_slot]
    anchor_sprite = library.get(anchor_placement.sprite_id)
    ref_box = placement_pixel_box(anchor_placement, anchor_sprite, w, h)
    ctx_pixels = base.pixels.copy()
    ctx_cover = np.zeros((h, w), dtype=bool)
    _paste_sprite(ctx_pixels, anchor_sprite, anchor_placement, w, h, ctx_cover)
    tile_box = _clip_box(_expand_box(ref_box, TILE_SCALE), w, h)
    tx0, ty0, tx1, ty1 = tile_box
    tile_mask = np.zeros((h, w), dtype=bool)
    tile_mask[ty0:ty1, tx0:tx1] = True
    tile_mask &= ~ctx_cover
    inpainted = backend.inpaint(RasterImage(ctx_pixels), BinaryMask(tile_mask), prompt, tile_seed)
    tile = TilePatch(
        pixels=inpainted.pixels[ty0:ty1, tx0:tx1, :3].copy(),
        hole=ctx_cover[ty0:ty1, tx0:tx1].copy(),
        box=tile_box,
    )

    relocates = plan.subset in (SubsetKind.ABSOLUTE_POSITION, SubsetKind.RELATIVE_POSITION)
    images = []
    masks = []
    tile_boxes = []
    for candidate in plan.candidates:
        if relocates:
            cand_placement = candidate.layout.placements[plan.anchor_slot]
            cand_box = placement_pixel_box(cand_placement, anchor_sprite, w, h)
            dx, dy = cand_box[0] - ref_box[0], cand_box[1] - ref_box[1]
        else:
            dx = dy = 0
        dest = (tile_box[0] + dx, tile_box[1] + dy, tile_box[2] + dx, tile_box[3] + dy)
        cx0, cy0, cx1, cy1 = _clip_box(dest, w, h)

        pixels = base.pixels.copy()
        hole_mask = np.zeros((h, w), dtype=bool)
        if cx1 > cx0 and cy1 > cy0:
            local = (
                slice(cy0 - dest[1], cy1 - dest[1]),
                slice(cx0 - dest[0], cx1 - dest[0]),
            )
            keep = ~tile.hole[local]
            pixels[cy0:cy1, cx0:cx1, :3][keep] = tile.pixels[local][keep]
            hole_mask[cy0:cy1, cx0:cx1] = tile.hole[local]

        coverage = np.zeros((h, w), dtype=bool)
        for placement in sorted(candidate.layout.placements, key=lambda p: p.z_order):
            sprite = library.get(placement.sprite_id)
            _paste_sprite(pixels, sprite, placement, w, h, coverage)
        hole_mask &= ~coverage

        image = RasterImage(pixels)
        if hole_mask.any():
            image = backend.inpaint(image, BinaryMask(hole_mask), prompt, fill_seed)
        images.append(image)
        masks.append(BinaryMask(coverage))
        tile_boxes.append(dest)

    return ExecutedCase(
        plan=plan,
        images=tuple(images),
        object_masks=tuple(masks),
        tile=tile,
        tile_boxes=tuple(tile_boxes),
    )


def _tile_local_view(
    executed: ExecutedCase, index: int
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate pixels mapped into tile-local coordinates.

    Returns (pixels, invalid): invalid marks tile positions that fall off
    the canvas or are covered by an object in this candidate.
    """
    th = executed.tile.box[3] - executed.tile.box[1]
    tw = executed.tile.box[2] - executed.tile.box[0]
    pixels = np.zeros((th, tw, 3), dtype=np.int16)
    invalid = np.ones((th, tw), dtype=bool)
    dest = executed.tile_boxes[index]
    w, h = executed.plan.width, executed.plan.height
    cx0, cy0, cx1, cy1 = _clip_box(dest, w, h)
    if cx1 <= cx0 or cy1 <= cy0:
        return pixels, invalid
    local = (slice(cy0 - dest[1], cy1 - dest[1]), slice(cx0 - dest[0], cx1 - dest[0]))
    image = executed.images[index].pixels
    covered = executed.object_masks[index].grid
    pixels[local] = image[cy0:cy1, cx0:cx1, :3]
    invalid[local] = covered[cy0:cy1, cx0:cx1]
    return pixels, invalid


def background_consistency(executed: ExecutedCase) -> float:
    """Worst pixel disagreement of shared background across candidates.

    For every candidate pair, compares tile-local background pixels that are
    visible in both candidates (inside the canvas, outside the anchor hole,
    not covered by any object in either candidate) and returns the maximum
    absolute channel difference, 0.0 meaning perfectly consistent.
    """
    views = [_tile_local_view(executed, i) for i in range(len(executed.images))]
    hole = executed.tile.hole
    worst = 0.0
    for i in range(len(views)):
        for j in range(i + 1, len(views)):
            valid = ~hole & ~views[i][1] & ~views[j][1]
            if not valid.any():
                continue
            diff = np.abs(views[i][0][valid] - views[j][0][valid])
            worst = max(worst, float(diff.max()))
    return worst


def synthesize_case(
    library: SpriteLibrary,
    subset: SubsetKind,
    case_index: int,
    run_seed: int,
    backend: Backend,
    width: int = DEFAULT_CANVAS,
    height: int = DEFAULT_CANVAS,
) -> ExecutedCase:
    """Plan and render one case end to end."""
    plan = plan_case(library, subset, case_index, run_seed, width, height)
    return execute_case(plan, library, backend)
