"""Attribute classifiers and caption generators for the six probe subsets.

Classification thresholds deliberately leave gaps between bands (the safety
margins); inputs falling inside a gap classify as ``None`` (unclassified)
rather than being forced into a neighboring band.
"""

from __future__ import annotations

import enum
from functools import lru_cache
from importlib import resources

__all__ = [
    "SizeLevel",
    "RelSizeRelation",
    "GridCell",
    "SpatialRelation",
    "ExistenceLabel",
    "SubsetKind",
    "Label",
    "canonical_labels",
    "classify_absolute_size",
    "classify_relative_size",
    "classify_absolute_position",
    "classify_relative_position",
    "classify_existence",
    "label_slug",
    "parse_label",
    "pluralize",
    "render_caption",
    "subset_cardinality",
    "template_table_version",
]


class SizeLevel(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


class RelSizeRelation(enum.Enum):
    SMALLER_THAN = "smaller_than"
    EQUAL_TO = "equal_to"
    LARGER_THAN = "larger_than"


class GridCell(enum.Enum):
    """Cells of the 3x3 grid, row-major from the top-left."""

    TOP_LEFT = (0, 0)
    TOP = (0, 1)
    TOP_RIGHT = (0, 2)
    LEFT = (1, 0)
    CENTER = (1, 1)
    RIGHT = (1, 2)
    BOTTOM_LEFT = (2, 0)
    BOTTOM = (2, 1)
    BOTTOM_RIGHT = (2, 2)

    @property
    def row(self) -> int:
        return self.value[0]

    @property
    def col(self) -> int:
        return self.value[1]

    @classmethod
    def from_row_col(cls, row: int, col: int) -> "GridCell":
        return _CELL_BY_RC[(row, col)]


_CELL_BY_RC = {cell.value: cell for cell in GridCell}


class SpatialRelation(enum.Enum):
    LEFT_OF = "left_of"
    RIGHT_OF = "right_of"
    ABOVE = "above"
    BELOW = "below"

    def inverse(self) -> "SpatialRelation":
        return _RELATION_INVERSE[self]


_RELATION_INVERSE = {
    SpatialRelation.LEFT_OF: SpatialRelation.RIGHT_OF,
    SpatialRelation.RIGHT_OF: SpatialRelation.LEFT_OF,
    SpatialRelation.ABOVE: SpatialRelation.BELOW,
    SpatialRelation.BELOW: SpatialRelation.ABOVE,
}


class ExistenceLabel(enum.Enum):
    NONE = "none"
    AT_LEAST_ONE = "at_least_one"


class SubsetKind(enum.Enum):
    ABSOLUTE_SIZE = "absolute_size"
    RELATIVE_SIZE = "relative_size"
    ABSOLUTE_POSITION = "absolute_position"
    RELATIVE_POSITION = "relative_position"
    EXISTENCE = "existence"
    COUNT = "count"

    @property
    def two_object(self) -> bool:
        return self in (SubsetKind.RELATIVE_SIZE, SubsetKind.RELATIVE_POSITION)


# A subset label is an enum member, or an int occurrence count in [1, 9].
Label = SizeLevel | RelSizeRelation | GridCell | SpatialRelation | ExistenceLabel | int

_CANONICAL_LABELS: dict[SubsetKind, tuple] = {
    SubsetKind.ABSOLUTE_SIZE: (SizeLevel.SMALL, SizeLevel.MEDIUM, SizeLevel.LARGE),
    SubsetKind.RELATIVE_SIZE: (
        RelSizeRelation.SMALLER_THAN,
        RelSizeRelation.EQUAL_TO,
        RelSizeRelation.LARGER_THAN,
    ),
    SubsetKind.ABSOLUTE_POSITION: tuple(GridCell),
    SubsetKind.RELATIVE_POSITION: (
        SpatialRelation.LEFT_OF,
        SpatialRelation.RIGHT_OF,
        SpatialRelation.ABOVE,
        SpatialRelation.BELOW,
    ),
    SubsetKind.EXISTENCE: (ExistenceLabel.NONE, ExistenceLabel.AT_LEAST_ONE),
    SubsetKind.COUNT: tuple(range(1, 10)),
}


def canonical_labels(subset: SubsetKind) -> tuple:
    """The subset's full label set in its canonical order.

    Size levels ascend, grid cells run row-major, counts ascend 1..9; this
    fixed order defines candidate index i throughout the toolkit.
    """
    return _CANONICAL_LABELS[subset]


def subset_cardinality(subset: SubsetKind) -> int:
    """Number of mutually exclusive labels the subset covers (K)."""
    return len(_CANONICAL_LABELS[subset])


def classify_absolute_size(p: float) -> SizeLevel | None:
    """Classify the area fraction an object occupies.

    ``p`` is the object's alpha-pixel count divided by the canvas pixel
    count.  Returns ``None`` inside the safety gaps (0.2, 0.4) and
    (0.6, 0.8).
    """
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"area fraction must lie in [0, 1], got {p}")
    if p <= 0.2:
        return SizeLevel.SMALL
    if 0.4 <= p <= 0.6:
        return SizeLevel.MEDIUM
    if p >= 0.8:
        return SizeLevel.LARGE
    return None


def classify_relative_size(area_a: float, area_b: float) -> RelSizeRelation | None:
    """Classify the area ratio R = area_a / area_b.

    Returns ``None`` inside the safety gaps (0.5, 0.9) and (1.1, 2).
    """
    if area_a <= 0 or area_b <= 0:
        raise ValueError("object areas must be positive")
    r = area_a / area_b
    if r <= 0.5:
        return RelSizeRelation.SMALLER_THAN
    if 0.9 <= r <= 1.1:
        return RelSizeRelation.EQUAL_TO
    if r >= 2.0:
        return RelSizeRelation.LARGER_THAN
    return None


def classify_absolute_position(center: tuple[float, float]) -> GridCell:
    """Map a normalized center point to its cell of the 3x3 grid.

    Points exactly on the far edges (x or y = 1.0) clamp into the last
    row/column so the grid tiles all of [0, 1]^2.
    """
    x, y = center
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"center must lie in [0, 1]^2, got {center}")
    col = min(int(x * 3.0), 2)
    row = min(int(y * 3.0), 2)
    return GridCell.from_row_col(row, col)


def classify_relative_position(
    center_a: tuple[float, float], center_b: tuple[float, float]
) -> SpatialRelation:
    """Relation of object A to object B from their center points.

    Dominant-axis rule: the axis with the larger separation decides;
    exact diagonal ties resolve to the horizontal relation.
    """
    dx = center_b[0] - center_a[0]
    dy = center_b[1] - center_a[1]
    if dx == 0.0 and dy == 0.0:
        raise ValueError("centers must be distinct")
    if abs(dx) >= abs(dy):
        return SpatialRelation.LEFT_OF if dx > 0 else SpatialRelation.RIGHT_OF
    return SpatialRelation.ABOVE if dy > 0 else SpatialRelation.BELOW


def classify_existence(object_count: int) -> ExistenceLabel:
    if object_count < 0:
        raise ValueError("object count must be non-negative")
    return ExistenceLabel.NONE if object_count == 0 else ExistenceLabel.AT_LEAST_ONE


def label_slug(label) -> str:
    """Stable string key for a label, as used in the template table."""
    if isinstance(label, int):
        return str(label)
    return label.value if isinstance(label.value, str) else label.name.lower()


def parse_label(subset: SubsetKind, slug: str):
    """Inverse of :func:`label_slug` within one subset's label space."""
    for label in canonical_labels(subset):
        if label_slug(label) == slug:
            return label
    raise ValueError(f"unknown {subset.value} label: {slug!r}")


_PLURAL_IRREGULAR = {
    "person": "people",
    "sheep": "sheep",
    "mouse": "mice",
    "scissors": "scissors",
    "skis": "skis",
}


def pluralize(noun: str) -> str:
    if noun in _PLURAL_IRREGULAR:
        return _PLURAL_IRREGULAR[noun]
    if noun.endswith("fe"):
        return noun[:-2] + "ves"
    if noun.endswith(("s", "x", "z", "ch", "sh")):
        return noun + "es"
    if noun.endswith("y") and noun[-2:-1] not in "aeiou":
        return noun[:-1] + "ies"
    return noun + "s"


@lru_cache(maxsize=1)
def _load_templates() -> tuple[int, dict[str, str]]:
    text = resources.files("finegrain").joinpath("templates.txt").read_text("utf-8")
    version = 0
    table: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "version":
            version = int(value)
        else:
            table[key] = value
    if version <= 0 or not table:
        raise RuntimeError("caption template table is missing or unversioned")
    return version, table


def template_table_version() -> int:
    return _load_templates()[0]


def render_caption(subset: SubsetKind, label, categories: tuple[str, ...] | list[str]) -> str:
    """Render the deterministic English caption for (subset, label, categories).

    Two-object subsets require two category names; the first fills ``{a}``
    and the second ``{b}``.
    """
    cats = tuple(categories)
    if subset.two_object:
        if len(cats) != 2:
            raise ValueError(f"{subset.value} captions need two categories, got {cats}")
    elif len(cats) != 1:
        raise ValueError(f"{subset.value} captions need one category, got {cats}")
    if label not in canonical_labels(subset):
        raise ValueError(f"label {label!r} is not valid for subset {subset.value}")
    _, table = _load_templates()
    key = f"{subset.value}.{label_slug(label)}"
    template = table[key]
    fields = {"a": cats[0], "a_plural": pluralize(cats[0])}
    if len(cats) == 2:
        fields["b"] = cats[1]
    return template.format(**fields)
