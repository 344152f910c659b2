"""Dataset persistence: write rendered cases to disk and read them back.

A dataset directory holds one ``manifest.json`` plus one PNG per candidate
image under ``images/<case_id>/``.  The manifest embeds every case plan and
a sha256 checksum per image, so a dataset is fully reproducible and
tamper-evident.  Writing the same cases twice produces byte-identical
manifests.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .core import RasterImage, raster_to_png_bytes, raster_from_png_bytes
from .semantics import SubsetKind, render_caption, subset_cardinality
from .synthesis import CasePlan, ExecutedCase

__all__ = [
    "MANIFEST_NAME",
    "MANIFEST_VERSION",
    "ManifestError",
    "CaseRecord",
    "DatasetReport",
    "iter_cases",
    "load_case_images",
    "read_manifest",
    "validate_dataset",
    "write_dataset",
]

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class ManifestError(Exception):
    """The manifest or the files it describes are invalid."""


@dataclass(frozen=True)
class CaseRecord:
    """One case as stored on disk: its plan plus image paths and checksums."""

    plan: CasePlan
    image_paths: tuple[str, ...]
    image_sha256: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "image_paths": list(self.image_paths),
            "image_sha256": list(self.image_sha256),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CaseRecord":
        return cls(
            plan=CasePlan.from_dict(data["plan"]),
            image_paths=tuple(data["image_paths"]),
            image_sha256=tuple(data["image_sha256"]),
        )


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_dataset(
    cases: Iterable[ExecutedCase], root: Path | str, run_seed: int
) -> dict:
    """Write rendered cases under ``root`` and return the manifest dict.

    Cases are sorted by case id before writing so the manifest layout does
    not depend on generation order.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for case in sorted(cases, key=lambda c: c.plan.case_id):
        case_dir = root / "images" / case.plan.case_id
        case_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        digests = []
        for index, image in enumerate(case.images):
            rel = f"images/{case.plan.case_id}/candidate_{index:02d}.png"
            data = raster_to_png_bytes(image)
            (root / rel).write_bytes(data)
            paths.append(rel)
            digests.append(_sha256(data))
        records.append(
            CaseRecord(
                plan=case.plan,
                image_paths=tuple(paths),
                image_sha256=tuple(digests),
            )
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "run_seed": run_seed,
        "case_count": len(records),
        "cases": [r.to_dict() for r in records],
    }
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (root / MANIFEST_NAME).write_text(text, encoding="utf-8")
    return manifest


def read_manifest(root: Path | str) -> dict:
    """Load and structurally check a dataset manifest."""
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise ManifestError(f"no {MANIFEST_NAME} under {root}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ManifestError("manifest root must be an object")
    version = manifest.get("version")
    if version != MANIFEST_VERSION:
        raise ManifestError(
            f"unsupported manifest version {version!r}, expected {MANIFEST_VERSION}"
        )
    for key in ("run_seed", "case_count", "cases"):
        if key not in manifest:
            raise ManifestError(f"manifest misses required key {key!r}")
    if manifest["case_count"] != len(manifest["cases"]):
        raise ManifestError("case_count disagrees with the case list")
    return manifest


def iter_cases(manifest: dict) -> Iterator[CaseRecord]:
    for entry in manifest["cases"]:
        try:
            yield CaseRecord.from_dict(entry)
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"malformed case record: {exc}") from exc


def load_case_images(root: Path | str, record: CaseRecord) -> tuple[RasterImage, ...]:
    """Load a case's candidate images, verifying checksums."""
    root = Path(root)
    images = []
    for rel, digest in zip(record.image_paths, record.image_sha256):
        path = root / rel
        if not path.is_file():
            raise ManifestError(f"missing image file: {rel}")
        data = path.read_bytes()
        actual = _sha256(data)
        if actual != digest:
            raise ManifestError(
                f"checksum mismatch for {rel}: manifest {digest[:12]}.., file {actual[:12]}.."
            )
        images.append(raster_from_png_bytes(data))
    return tuple(images)


@dataclass(frozen=True)
class DatasetReport:
    """Outcome of a dataset validation pass."""

    case_count: int
    subset_counts: dict
    problems: tuple[str, ...]

    @property
    def valid(self) -> bool:
        return not self.problems

    def to_text(self) -> str:
        lines = [f"cases: {self.case_count}"]
        for subset in SubsetKind:
            if subset.value in self.subset_counts:
                lines.append(f"  {subset.value}: {self.subset_counts[subset.value]}")
        if self.problems:
            lines.append(f"problems ({len(self.problems)}):")
            lines.extend(f"  - {p}" for p in self.problems)
        else:
            lines.append("no problems found")
        return "\n".join(lines)


def validate_dataset(root: Path | str, verify_images: bool = True) -> DatasetReport:
    """Check a dataset directory end to end.

    Verifies the manifest structure, per-case candidate cardinality, caption
    consistency with each plan's labels, and (optionally) image checksums.
    Problems are collected rather than raised so one pass reports them all.
    """
    root = Path(root)
    problems: list[str] = []
    subset_counts: dict[str, int] = {}
    case_count = 0
    try:
        manifest = read_manifest(root)
    except ManifestError as exc:
        return DatasetReport(0, {}, (str(exc),))

    seen_ids: set[str] = set()
    for entry in manifest["cases"]:
        try:
            record = CaseRecord.from_dict(entry)
        except (KeyError, ValueError) as exc:
            problems.append(f"malformed case record: {exc}")
            continue
        plan = record.plan
        case_count += 1
        subset_counts[plan.subset.value] = subset_counts.get(plan.subset.value, 0) + 1
        if plan.case_id in seen_ids:
            problems.append(f"{plan.case_id}: duplicate case id")
        seen_ids.add(plan.case_id)
        expected_k = subset_cardinality(plan.subset)
        if len(record.image_paths) != expected_k:
            problems.append(
                f"{plan.case_id}: {len(record.image_paths)} images, expected {expected_k}"
            )
        if len(record.image_sha256) != len(record.image_paths):
            problems.append(f"{plan.case_id}: checksum count disagrees with image count")
        for candidate in plan.candidates:
            expected = render_caption(plan.subset, candidate.label, plan.categories)
            if candidate.caption != expected:
                problems.append(
                    f"{plan.case_id}: caption for {candidate.label!r} does not "
                    f"match its label"
                )
        if verify_images:
            try:
                images = load_case_images(root, record)
            except ManifestError as exc:
                problems.append(f"{plan.case_id}: {exc}")
                continue
            for index, image in enumerate(images):
                if image.width != plan.width or image.height != plan.height:
                    problems.append(
                        f"{plan.case_id}: candidate {index} is "
                        f"{image.width}x{image.height}, plan says "
                        f"{plan.width}x{plan.height}"
                    )
    return DatasetReport(case_count, subset_counts, tuple(problems))
