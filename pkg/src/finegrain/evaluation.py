"""Symmetric image-text matching metrics and the 80-class probe.

Accuracy is strict-argmax on positive score matrices: a query is credited
only when its true partner's score is the unique row (or column) maximum.
Ties never score; they are counted separately so indifference is visible in
reports.  Case accuracy is the mean over the case's K queries, subset
accuracy the mean over cases (nested averaging), so every case weighs the
same regardless of K.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .backends import Backend
from .core import COCO_CLASSES, RasterImage, derive_seed
from .dataset import CaseRecord, iter_cases, load_case_images, read_manifest
from .semantics import SubsetKind, subset_cardinality
from .synthesis import CasePlan, ExecutedCase

__all__ = [
    "CLS_PROMPT_TEMPLATE",
    "EvalCase",
    "EvalReport",
    "EvaluationError",
    "EmbeddingScorer",
    "OracleScorer",
    "RandomScorer",
    "Scorer",
    "SubsetResult",
    "TableScorer",
    "chance_level",
    "class_prompts",
    "cls_acc",
    "dataset_checksum",
    "evaluate",
    "i2t_acc",
    "load_eval_cases",
    "t2i_acc",
]

# Prompt wrapped around each vocabulary class for the classification probe.
CLS_PROMPT_TEMPLATE = "a photo of a {}"


class EvaluationError(RuntimeError):
    """Scoring failed or produced an invalid score matrix."""


@dataclass(frozen=True)
class EvalCase:
    """One case as the harness sees it: captions, optional pixels, truth."""

    case_id: str
    subset: SubsetKind
    categories: tuple[str, ...]
    captions: tuple[str, ...]
    images: tuple[RasterImage, ...] | None = None

    def __post_init__(self) -> None:
        expected = subset_cardinality(self.subset)
        if len(self.captions) != expected:
            raise EvaluationError(
                f"{self.case_id}: {len(self.captions)} captions, expected {expected}"
            )
        if self.images is not None and len(self.images) != expected:
            raise EvaluationError(
                f"{self.case_id}: {len(self.images)} images, expected {expected}"
            )

    @property
    def k(self) -> int:
        return len(self.captions)

    @classmethod
    def from_plan(cls, plan: CasePlan) -> "EvalCase":
        return cls(
            case_id=plan.case_id,
            subset=plan.subset,
            categories=plan.categories,
            captions=plan.captions(),
        )

    @classmethod
    def from_executed(cls, executed: ExecutedCase) -> "EvalCase":
        plan = executed.plan
        return cls(
            case_id=plan.case_id,
            subset=plan.subset,
            categories=plan.categories,
            captions=plan.captions(),
            images=executed.images,
        )

    @classmethod
    def from_record(
        cls, root: Path | str, record: CaseRecord, load_images: bool = True
    ) -> "EvalCase":
        plan = record.plan
        images = load_case_images(root, record) if load_images else None
        return cls(
            case_id=plan.case_id,
            subset=plan.subset,
            categories=plan.categories,
            captions=plan.captions(),
            images=images,
        )


def load_eval_cases(root: Path | str, load_images: bool = True) -> list[EvalCase]:
    """Read every case of a dataset directory into eval form."""
    manifest = read_manifest(root)
    return [
        EvalCase.from_record(root, record, load_images=load_images)
        for record in iter_cases(manifest)
    ]


class Scorer(Protocol):
    """Anything that can score image/text pairs of a case."""

    name: str

    def score_case(self, case: EvalCase) -> np.ndarray:
        """K x K positive scores; rows are images, columns are captions."""
        ...

    def class_scores(self, case: EvalCase, prompts: Sequence[str]) -> np.ndarray:
        """K x len(prompts) positive scores of each image against prompts."""
        ...


class RandomScorer:
    """Uniform random scores, reproducible per (run seed, case id)."""

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self.name = f"random-{seed}"

    def _rng(self, case: EvalCase, stage: str) -> np.random.Generator:
        return np.random.default_rng(derive_seed(self.seed, (case.case_id, stage)))

    def score_case(self, case: EvalCase) -> np.ndarray:
        return self._rng(case, "match").uniform(0.1, 1.0, size=(case.k, case.k))

    def class_scores(self, case: EvalCase, prompts: Sequence[str]) -> np.ndarray:
        return self._rng(case, "cls").uniform(0.1, 1.0, size=(case.k, len(prompts)))


class OracleScorer:
    """Ground-truth scorer: the true pairing always wins by a margin."""

    name = "oracle"

    def score_case(self, case: EvalCase) -> np.ndarray:
        return np.ones((case.k, case.k)) + np.eye(case.k)

    def class_scores(self, case: EvalCase, prompts: Sequence[str]) -> np.ndarray:
        target = CLS_PROMPT_TEMPLATE.format(case.categories[0])
        try:
            index = list(prompts).index(target)
        except ValueError:
            raise EvaluationError(
                f"{case.case_id}: no prompt for category {case.categories[0]!r}"
            ) from None
        scores = np.ones((case.k, len(prompts)))
        scores[:, index] = 2.0
        return scores


class EmbeddingScorer:
    """Backend-embedding scorer: exp(tau * cosine) on real embeddings."""

    def __init__(self, backend: Backend, tau: float = 1.0) -> None:
        if tau <= 0.0:
            raise EvaluationError("temperature must be positive")
        self.backend = backend
        self.tau = tau
        self.name = f"embedding-{backend.capabilities().name}"

    def _cosine(self, images: Sequence[RasterImage], texts: Sequence[str]) -> np.ndarray:
        img = np.asarray(self.backend.embed_images(images), dtype=np.float64)
        txt = np.asarray(self.backend.embed_texts(texts), dtype=np.float64)
        img /= np.linalg.norm(img, axis=1, keepdims=True)
        txt /= np.linalg.norm(txt, axis=1, keepdims=True)
        return img @ txt.T

    def score_case(self, case: EvalCase) -> np.ndarray:
        if case.images is None:
            raise EvaluationError(f"{case.case_id}: embedding scoring needs images")
        return np.exp(self.tau * self._cosine(case.images, case.captions))

    def class_scores(self, case: EvalCase, prompts: Sequence[str]) -> np.ndarray:
        if case.images is None:
            raise EvaluationError(f"{case.case_id}: embedding scoring needs images")
        return np.exp(self.tau * self._cosine(case.images, list(prompts)))


class TableScorer:
    """Precomputed scores from a JSON table keyed by case id.

    Schema: ``{"name": ..., "match": {case_id: K x K}, "cls": {case_id: K x C}}``.
    """

    def __init__(self, match: dict, cls: dict, name: str = "table") -> None:
        self._match = match
        self._cls = cls
        self.name = name

    @classmethod
    def load_json(cls, path: Path | str) -> "TableScorer":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            match=data.get("match", {}),
            cls=data.get("cls", {}),
            name=str(data.get("name", "table")),
        )

    def score_case(self, case: EvalCase) -> np.ndarray:
        try:
            return np.asarray(self._match[case.case_id], dtype=np.float64)
        except KeyError:
            raise EvaluationError(f"score table has no entry for {case.case_id}") from None

    def class_scores(self, case: EvalCase, prompts: Sequence[str]) -> np.ndarray:
        try:
            return np.asarray(self._cls[case.case_id], dtype=np.float64)
        except KeyError:
            raise EvaluationError(
                f"score table has no cls entry for {case.case_id}"
            ) from None


def class_prompts(class_names: Sequence[str] = COCO_CLASSES) -> tuple[str, ...]:
    return tuple(CLS_PROMPT_TEMPLATE.format(name) for name in class_names)


def chance_level(subset: SubsetKind, metric: str, class_count: int = len(COCO_CLASSES)) -> float:
    """Expected accuracy of an uninformed scorer."""
    if metric in ("i2t", "t2i"):
        return 1.0 / subset_cardinality(subset)
    if metric == "cls":
        return 1.0 / class_count
    raise ValueError(f"unknown metric: {metric!r}")


def _check_matrix(case_id: str, matrix: np.ndarray, rows: int, cols: int) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (rows, cols):
        raise EvaluationError(
            f"{case_id}: score matrix is {matrix.shape}, expected {(rows, cols)}"
        )
    if not np.isfinite(matrix).all() or (matrix <= 0).any():
        raise EvaluationError(f"{case_id}: scores must be finite and positive")
    return matrix


def _strict_hits(scores: np.ndarray, targets: np.ndarray) -> tuple[int, int]:
    """(correct, ties) over rows: row counts only if its target column holds
    the unique maximum; rows whose maximum is shared count as ties."""
    correct = 0
    ties = 0
    for row, target in zip(scores, targets):
        top = row.max()
        winners = np.flatnonzero(row == top)
        if len(winners) > 1:
            ties += 1
        elif winners[0] == target:
            correct += 1
    return correct, ties


@dataclass(frozen=True)
class SubsetResult:
    """Accuracies of one subset."""

    subset: SubsetKind
    cases: int
    i2t: float
    t2i: float
    cls: float
    i2t_ties: int
    t2i_ties: int
    cls_ties: int

    def to_dict(self) -> dict:
        return {
            "subset": self.subset.value,
            "cases": self.cases,
            "i2t": self.i2t,
            "t2i": self.t2i,
            "cls": self.cls,
            "i2t_ties": self.i2t_ties,
            "t2i_ties": self.t2i_ties,
            "cls_ties": self.cls_ties,
        }


@dataclass(frozen=True)
class EvalReport:
    """Per-subset accuracies plus provenance of scorer and dataset."""

    scorer: str
    dataset_checksum: str
    results: tuple[SubsetResult, ...]

    def result_for(self, subset: SubsetKind) -> SubsetResult:
        for result in self.results:
            if result.subset is subset:
                return result
        raise KeyError(f"no result for {subset.value}")

    def to_dict(self) -> dict:
        return {
            "scorer": self.scorer,
            "dataset_checksum": self.dataset_checksum,
            "results": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = [
            f"scorer: {self.scorer}    dataset: {self.dataset_checksum[:12]}",
            f"{'subset':<20} {'cases':>6} {'i2t%':>8} {'t2i%':>8} {'cls%':>8}",
        ]
        for r in self.results:
            lines.append(
                f"{r.subset.value:<20} {r.cases:>6} {100 * r.i2t:>8.2f} "
                f"{100 * r.t2i:>8.2f} {100 * r.cls:>8.2f}"
            )
        if self.results:
            mean_i2t = float(np.mean([r.i2t for r in self.results]))
            mean_t2i = float(np.mean([r.t2i for r in self.results]))
            mean_cls = float(np.mean([r.cls for r in self.results]))
            total = sum(r.cases for r in self.results)
            lines.append(
                f"{'mean':<20} {total:>6} {100 * mean_i2t:>8.2f} "
                f"{100 * mean_t2i:>8.2f} {100 * mean_cls:>8.2f}"
            )
        return "\n".join(lines)


def dataset_checksum(cases: Iterable[EvalCase]) -> str:
    """Stable digest of the case ids and captions being evaluated."""
    h = hashlib.sha256()
    for case in sorted(cases, key=lambda c: c.case_id):
        h.update(case.case_id.encode("utf-8"))
        h.update(b"\x00")
        for caption in case.captions:
            h.update(caption.encode("utf-8"))
            h.update(b"\x00")
    return h.hexdigest()


def evaluate(
    cases: Iterable[EvalCase],
    scorer: Scorer,
    class_names: Sequence[str] = COCO_CLASSES,
    *,
    either_category: bool = False,
    checksum: str | None = None,
) -> EvalReport:
    """Score every case and aggregate per subset.

    ``either_category`` credits a classification when the winning prompt
    names any of a two-object case's categories instead of only the first;
    off by default so chance stays at 1/len(class_names) on every subset.
    """
    cases = list(cases)
    prompts = class_prompts(class_names)
    prompt_index = {p: i for i, p in enumerate(prompts)}

    sums: dict[SubsetKind, dict] = {}
    for case in cases:
        try:
            matrix = _check_matrix(case.case_id, scorer.score_case(case), case.k, case.k)
            logits = _check_matrix(
                case.case_id,
                scorer.class_scores(case, prompts),
                case.k,
                len(prompts),
            )
        except EvaluationError:
            raise
        except Exception as exc:
            raise EvaluationError(f"scorer failed on {case.case_id}: {exc}") from exc

        diag = np.arange(case.k)
        i2t_correct, i2t_ties = _strict_hits(matrix, diag)
        t2i_correct, t2i_ties = _strict_hits(matrix.T, diag)

        wanted = case.categories if either_category else case.categories[:1]
        targets = []
        for category in wanted:
            prompt = CLS_PROMPT_TEMPLATE.format(category)
            if prompt not in prompt_index:
                raise EvaluationError(
                    f"{case.case_id}: no prompt for category {category!r}"
                )
            targets.append(prompt_index[prompt])
        cls_correct = 0
        cls_ties = 0
        for row in logits:
            top = row.max()
            winners = np.flatnonzero(row == top)
            if len(winners) > 1:
                cls_ties += 1
            elif winners[0] in targets:
                cls_correct += 1

        acc = sums.setdefault(
            case.subset,
            {"cases": 0, "i2t": 0.0, "t2i": 0.0, "cls": 0.0, "it": 0, "tt": 0, "ct": 0},
        )
        acc["cases"] += 1
        acc["i2t"] += i2t_correct / case.k
        acc["t2i"] += t2i_correct / case.k
        acc["cls"] += cls_correct / case.k
        acc["it"] += i2t_ties
        acc["tt"] += t2i_ties
        acc["ct"] += cls_ties

    results = []
    for subset in SubsetKind:
        if subset not in sums:
            continue
        acc = sums[subset]
        n = acc["cases"]
        results.append(
            SubsetResult(
                subset=subset,
                cases=n,
                i2t=acc["i2t"] / n,
                t2i=acc["t2i"] / n,
                cls=acc["cls"] / n,
                i2t_ties=acc["it"],
                t2i_ties=acc["tt"],
                cls_ties=acc["ct"],
            )
        )
    return EvalReport(
        scorer=scorer.name,
        dataset_checksum=checksum if checksum is not None else dataset_checksum(cases),
        results=tuple(results),
    )


def i2t_acc(cases: Iterable[EvalCase], scorer: Scorer) -> float:
    """Image-to-text accuracy over all cases (nested mean)."""
    values = []
    for case in cases:
        matrix = _check_matrix(case.case_id, scorer.score_case(case), case.k, case.k)
        correct, _ = _strict_hits(matrix, np.arange(case.k))
        values.append(correct / case.k)
    if not values:
        raise EvaluationError("no cases to evaluate")
    return float(np.mean(values))


def t2i_acc(cases: Iterable[EvalCase], scorer: Scorer) -> float:
    """Text-to-image accuracy over all cases (nested mean)."""
    values = []
    for case in cases:
        matrix = _check_matrix(case.case_id, scorer.score_case(case), case.k, case.k)
        correct, _ = _strict_hits(matrix.T, np.arange(case.k))
        values.append(correct / case.k)
    if not values:
        raise EvaluationError("no cases to evaluate")
    return float(np.mean(values))


def cls_acc(
    cases: Iterable[EvalCase],
    scorer: Scorer,
    prompts: Sequence[str],
    *,
    either_category: bool = False,
) -> float:
    """Top-1 accuracy of each image against the class prompt list."""
    prompt_index = {p: i for i, p in enumerate(prompts)}
    values = []
    for case in cases:
        logits = _check_matrix(
            case.case_id, scorer.class_scores(case, prompts), case.k, len(prompts)
        )
        wanted = case.categories if either_category else case.categories[:1]
        targets = set()
        for category in wanted:
            prompt = CLS_PROMPT_TEMPLATE.format(category)
            if prompt not in prompt_index:
                raise EvaluationError(
                    f"{case.case_id}: no prompt for category {category!r}"
                )
            targets.add(prompt_index[prompt])
        correct = 0
        for row in logits:
            winners = np.flatnonzero(row == row.max())
            if len(winners) == 1 and winners[0] in targets:
                correct += 1
        values.append(correct / case.k)
    if not values:
        raise EvaluationError("no cases to evaluate")
    return float(np.mean(values))
