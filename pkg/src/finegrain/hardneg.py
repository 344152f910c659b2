"""Hard-negative-aware contrastive loss with analytic, checkable gradients.

The batch holds n_t trivial image/text pairs plus n_hn hard-negative items
drawn from synthesized candidate sets.  Hard negatives enter the loss only
through denominators: each trivial query must pick its partner not just
against the other trivial items but also against every hard negative in the
batch.  All similarities are cosine (product of norms) sharpened by a
temperature, so losses are invariant to rescaling any single embedding.

Gradients are derived by hand and verified against central finite
differences; :func:`gradcheck` runs that comparison as a batch suite.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ValidationError, derive_seed

__all__ = [
    "EMB_MAGIC",
    "EmbeddingBatch",
    "EmbeddingBatchSpec",
    "GradCheckReport",
    "Gradients",
    "HardNegBatchError",
    "LossConfig",
    "TemperatureParam",
    "assemble_batch",
    "build_hn_batch",
    "cosine_matrix",
    "finite_difference_grad",
    "grad_loss",
    "gradcheck",
    "loss_clip",
    "loss_hn",
    "loss_hn_i2t",
    "loss_hn_t2i",
    "loss_total",
    "random_batch",
    "read_embeddings",
    "similarity",
    "write_embeddings",
]

EMB_MAGIC = b"EMB1"


class HardNegBatchError(RuntimeError):
    """Batch construction could not satisfy the requested composition."""


@dataclass(frozen=True)
class TemperatureParam:
    """Temperature stored as its log so tau stays positive under updates."""

    log_tau: float

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    @classmethod
    def from_tau(cls, tau: float) -> "TemperatureParam":
        if tau <= 0.0:
            raise ValidationError("temperature must be positive")
        return cls(log_tau=float(np.log(tau)))

    @classmethod
    def clip_init(cls) -> "TemperatureParam":
        return cls.from_tau(100.0)


@dataclass(frozen=True)
class LossConfig:
    """Weight and batch composition for the combined loss."""

    lam: float = 0.2
    n_trivial: int = 2048
    n_hard_negative: int = 768

    def __post_init__(self) -> None:
        if self.lam < 0.0:
            raise ValidationError("lambda must be non-negative")
        if self.n_trivial < 1 or self.n_hard_negative < 0:
            raise ValidationError("batch sizes must be positive / non-negative")


@dataclass(frozen=True)
class EmbeddingBatch:
    """Embeddings of n_t trivial pairs followed by n_hn hard negatives.

    ``pairing`` maps trivial image i to its positive text column; it must be
    a bijection over the trivial indices (identity in the common case).
    ``hn_case_ids`` tags each hard-negative item with its source case.
    """

    images: np.ndarray
    texts: np.ndarray
    n_trivial: int
    pairing: tuple[int, ...]
    hn_case_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        images = np.asarray(self.images, dtype=np.float64)
        texts = np.asarray(self.texts, dtype=np.float64)
        if images.ndim != 2 or texts.ndim != 2:
            raise ValidationError("embeddings must be 2-d arrays")
        if images.shape != texts.shape:
            raise ValidationError("image and text embedding shapes must agree")
        total = images.shape[0]
        if not 1 <= self.n_trivial <= total:
            raise ValidationError("need at least one trivial pair")
        if sorted(self.pairing) != list(range(self.n_trivial)):
            raise ValidationError("pairing must be a bijection over trivial indices")
        if len(self.hn_case_ids) != total - self.n_trivial:
            raise ValidationError("one case tag per hard-negative item required")
        if not (np.isfinite(images).all() and np.isfinite(texts).all()):
            raise ValidationError("embeddings must be finite")
        if (np.linalg.norm(images, axis=1) == 0).any() or (
            np.linalg.norm(texts, axis=1) == 0
        ).any():
            raise ValidationError("zero-norm embeddings are not allowed")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "texts", texts)
        object.__setattr__(self, "pairing", tuple(int(p) for p in self.pairing))

    @property
    def n_hard_negative(self) -> int:
        return self.images.shape[0] - self.n_trivial

    @property
    def dim(self) -> int:
        return self.images.shape[1]


def similarity(e_img: np.ndarray, e_txt: np.ndarray, tau: float) -> float:
    """exp(tau * cosine) similarity of one image/text embedding pair."""
    e_img = np.asarray(e_img, dtype=np.float64)
    e_txt = np.asarray(e_txt, dtype=np.float64)
    ni = np.linalg.norm(e_img)
    nt = np.linalg.norm(e_txt)
    if ni == 0.0 or nt == 0.0:
        raise ValidationError("zero-norm embeddings have no direction")
    return float(np.exp(tau * float(e_img @ e_txt) / (ni * nt)))


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)


def cosine_matrix(batch: EmbeddingBatch) -> np.ndarray:
    """Cosine of every image row against every text row."""
    return _unit_rows(batch.images) @ _unit_rows(batch.texts).T


def _logsumexp(z: np.ndarray, axis: int) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _logits(batch: EmbeddingBatch, tau: float) -> np.ndarray:
    if tau <= 0.0:
        raise ValidationError("temperature must be positive")
    return tau * cosine_matrix(batch)


def loss_hn_i2t(batch: EmbeddingBatch, tau: float) -> float:
    """Sum over trivial images of cross-entropy against all texts in batch."""
    z = _logits(batch, tau)
    n_t = batch.n_trivial
    rows = np.arange(n_t)
    cols = np.asarray(batch.pairing)
    positives = z[rows, cols]
    return float((_logsumexp(z[:n_t, :], axis=1) - positives).sum())


def loss_hn_t2i(batch: EmbeddingBatch, tau: float) -> float:
    """Sum over trivial texts of cross-entropy against all images in batch."""
    z = _logits(batch, tau)
    n_t = batch.n_trivial
    rows = np.arange(n_t)
    cols = np.asarray(batch.pairing)
    positives = z[rows, cols]
    return float((_logsumexp(z[:, cols], axis=0) - positives).sum())


def loss_hn(batch: EmbeddingBatch, tau: float) -> float:
    return loss_hn_i2t(batch, tau) + loss_hn_t2i(batch, tau)


def loss_clip(batch: EmbeddingBatch, tau: float) -> float:
    """Standard symmetric contrastive loss over the trivial block only.

    Mean cross-entropy over rows and over columns, averaged; hard negatives
    take no part in this term.
    """
    z = _logits(batch, tau)
    n_t = batch.n_trivial
    zt = z[:n_t, :n_t]
    rows = np.arange(n_t)
    cols = np.asarray(batch.pairing)
    positives = zt[rows, cols]
    row_ce = (_logsumexp(zt, axis=1) - positives).mean()
    col_ce = (_logsumexp(zt[:, cols], axis=0) - positives).mean()
    return float((row_ce + col_ce) / 2.0)


def loss_total(batch: EmbeddingBatch, tau: float, lam: float) -> float:
    """Combined loss: plain contrastive term plus lam times the hn term."""
    if lam < 0.0:
        raise ValidationError("lambda must be non-negative")
    value = loss_clip(batch, tau)
    if lam > 0.0:
        value += lam * loss_hn(batch, tau)
    return float(value)


@dataclass(frozen=True)
class Gradients:
    """Analytic gradients of the total loss at one batch."""

    d_images: np.ndarray
    d_texts: np.ndarray
    d_log_tau: float
    loss: float


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=axis, keepdims=True)


def grad_loss(batch: EmbeddingBatch, tau: float, lam: float) -> Gradients:
    """Gradients of :func:`loss_total` w.r.t. every embedding and log-tau.

    Derivation sketch: with unit rows u_i, v_j, logits z_ij = tau * u_i.v_j,
    each loss term contributes a softmax-minus-target matrix G on the
    logits; then dL/du = tau * G V, dL/dv = tau * G^T U, and
    dL/dlog_tau = sum(G * z) since z scales linearly with tau.  Gradients
    through the row normalization project out the radial component.
    """
    if lam < 0.0:
        raise ValidationError("lambda must be non-negative")
    u = _unit_rows(batch.images)
    v = _unit_rows(batch.texts)
    z = tau * (u @ v.T)
    n_t = batch.n_trivial
    total = z.shape[0]
    rows = np.arange(n_t)
    cols = np.asarray(batch.pairing)

    g = np.zeros((total, total), dtype=np.float64)
    zt = z[:n_t, :n_t]
    # Plain contrastive term: softmax minus one-hot, averaged, both ways.
    pos_one_hot = np.zeros((n_t, n_t))
    pos_one_hot[rows, cols] = 1.0
    g[:n_t, :n_t] += (_softmax(zt, axis=1) - pos_one_hot) / (2.0 * n_t)
    g[:n_t, :n_t] += (_softmax(zt, axis=0) - pos_one_hot) / (2.0 * n_t)
    if lam > 0.0:
        # i2t: each trivial row's softmax runs over all texts.
        p_rows = _softmax(z[:n_t, :], axis=1)
        g[:n_t, :] += lam * p_rows
        g[rows, cols] -= lam
        # t2i: each paired text column's softmax runs over all images.
        p_cols = _softmax(z[:, cols], axis=0)
        g[:, cols] += lam * p_cols
        g[rows, cols] -= lam

    d_log_tau = float((g * z).sum())
    gu = tau * (g @ v)
    gv = tau * (g.T @ u)
    # Back through the normalization: remove the radial component, scale by
    # the original norm.
    norm_u = np.linalg.norm(batch.images, axis=1, keepdims=True)
    norm_v = np.linalg.norm(batch.texts, axis=1, keepdims=True)
    d_images = (gu - (gu * u).sum(axis=1, keepdims=True) * u) / norm_u
    d_texts = (gv - (gv * v).sum(axis=1, keepdims=True) * v) / norm_v
    return Gradients(
        d_images=d_images,
        d_texts=d_texts,
        d_log_tau=d_log_tau,
        loss=loss_total(batch, tau, lam),
    )


def finite_difference_grad(
    batch: EmbeddingBatch, tau: float, lam: float, h: float = 1e-4
) -> Gradients:
    """Central finite differences of :func:`loss_total`; the slow oracle."""

    def value(images: np.ndarray, texts: np.ndarray, log_tau: float) -> float:
        probe = EmbeddingBatch(
            images=images,
            texts=texts,
            n_trivial=batch.n_trivial,
            pairing=batch.pairing,
            hn_case_ids=batch.hn_case_ids,
        )
        return loss_total(probe, float(np.exp(log_tau)), lam)

    log_tau = float(np.log(tau))
    d_images = np.zeros_like(batch.images)
    d_texts = np.zeros_like(batch.texts)
    for matrix, grad in ((batch.images, d_images), (batch.texts, d_texts)):
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                plus = matrix.copy()
                minus = matrix.copy()
                plus[i, j] += h
                minus[i, j] -= h
                if matrix is batch.images:
                    up = value(plus, batch.texts, log_tau)
                    down = value(minus, batch.texts, log_tau)
                else:
                    up = value(batch.images, plus, log_tau)
                    down = value(batch.images, minus, log_tau)
                grad[i, j] = (up - down) / (2.0 * h)
    up = value(batch.images, batch.texts, log_tau + h)
    down = value(batch.images, batch.texts, log_tau - h)
    d_log_tau = (up - down) / (2.0 * h)
    return Gradients(
        d_images=d_images,
        d_texts=d_texts,
        d_log_tau=float(d_log_tau),
        loss=value(batch.images, batch.texts, log_tau),
    )


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float((np.abs(a - b) / scale).max())


def random_batch(
    rng: np.random.Generator, n_trivial: int, n_hard_negative: int, dim: int
) -> EmbeddingBatch:
    """Gaussian embeddings batch for tests and the gradient-check suite."""
    total = n_trivial + n_hard_negative
    return EmbeddingBatch(
        images=rng.standard_normal((total, dim)),
        texts=rng.standard_normal((total, dim)),
        n_trivial=n_trivial,
        pairing=tuple(range(n_trivial)),
        hn_case_ids=tuple(f"case-{i}" for i in range(n_hard_negative)),
    )


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of a finite-difference gradient verification suite."""

    batches: int
    tolerance: float
    max_rel_err: float
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> dict:
        return {
            "batches": self.batches,
            "tolerance": self.tolerance,
            "max_rel_err": self.max_rel_err,
            "failures": self.failures,
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def gradcheck(
    batches: int = 100,
    seed: int = 0,
    n_trivial: int = 6,
    n_hard_negative: int = 3,
    dim: int = 8,
    lam: float = 0.2,
    h: float = 1e-4,
    tolerance: float = 1e-5,
    inject_sign_flip: bool = False,
) -> GradCheckReport:
    """Compare analytic and finite-difference gradients on random batches.

    ``inject_sign_flip`` deliberately corrupts one analytic component per
    batch so the suite's ability to catch a wrong gradient can itself be
    demonstrated.
    """
    rng = np.random.default_rng(derive_seed(seed, ("gradcheck",)))
    worst = 0.0
    failures = 0
    for _ in range(batches):
        batch = random_batch(rng, n_trivial, n_hard_negative, dim)
        tau = float(rng.uniform(0.5, 8.0))
        analytic = grad_loss(batch, tau, lam)
        numeric = finite_difference_grad(batch, tau, lam, h)
        d_images = analytic.d_images.copy()
        if inject_sign_flip:
            d_images[0, 0] = -d_images[0, 0] - 1.0
        err = max(
            _rel_err(d_images, numeric.d_images),
            _rel_err(analytic.d_texts, numeric.d_texts),
            _rel_err(
                np.asarray([analytic.d_log_tau]), np.asarray([numeric.d_log_tau])
            ),
        )
        worst = max(worst, err)
        if err > tolerance:
            failures += 1
    return GradCheckReport(
        batches=batches, tolerance=tolerance, max_rel_err=worst, failures=failures
    )


@dataclass(frozen=True)
class EmbeddingBatchSpec:
    """Recipe for a batch: which pairs and which whole candidate sets.

    ``hn_items`` lists (case_id, candidate_index); whole sets only, so every
    hard negative arrives together with the candidates it must be
    distinguished from.
    """

    trivial_ids: tuple[str, ...]
    hn_items: tuple[tuple[str, int], ...]

    def to_dict(self) -> dict:
        return {
            "trivial_ids": list(self.trivial_ids),
            "hn_items": [[case_id, index] for case_id, index in self.hn_items],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmbeddingBatchSpec":
        return cls(
            trivial_ids=tuple(data["trivial_ids"]),
            hn_items=tuple((str(c), int(i)) for c, i in data["hn_items"]),
        )


def build_hn_batch(
    case_sizes: Mapping[str, int] | Iterable[tuple[str, int]],
    trivial_pool: Sequence[str],
    n_trivial: int,
    n_hard_negative: int,
    seed: int,
) -> EmbeddingBatchSpec:
    """Choose n_trivial pairs plus whole candidate sets totalling exactly
    n_hard_negative items.

    ``case_sizes`` maps case id to its candidate count K.  Sets are drawn in
    seeded random order; a set that would overflow the remaining quota is
    skipped.  Raises :class:`HardNegBatchError` when the pools cannot fill
    the request.
    """
    sizes = dict(case_sizes)
    if len(trivial_pool) < n_trivial:
        raise HardNegBatchError(
            f"trivial pool holds {len(trivial_pool)} items, need {n_trivial}"
        )
    rng = np.random.default_rng(derive_seed(seed, ("hn_batch",)))
    trivial_order = rng.permutation(len(trivial_pool))[:n_trivial]
    trivial_ids = tuple(trivial_pool[int(i)] for i in trivial_order)

    case_ids = sorted(sizes)
    order = rng.permutation(len(case_ids))
    remaining = n_hard_negative
    hn_items: list[tuple[str, int]] = []
    for index in order:
        if remaining == 0:
            break
        case_id = case_ids[int(index)]
        k = sizes[case_id]
        if k <= 0:
            raise HardNegBatchError(f"case {case_id!r} has no candidates")
        if k <= remaining:
            hn_items.extend((case_id, j) for j in range(k))
            remaining -= k
    if remaining != 0:
        raise HardNegBatchError(
            f"could not fill {n_hard_negative} hard negatives from whole "
            f"candidate sets; {remaining} short"
        )
    return EmbeddingBatchSpec(trivial_ids=trivial_ids, hn_items=tuple(hn_items))


def assemble_batch(
    spec: EmbeddingBatchSpec,
    image_vectors: Mapping[str, np.ndarray],
    text_vectors: Mapping[str, np.ndarray],
) -> EmbeddingBatch:
    """Materialize a batch spec into embeddings.

    Hard-negative items are looked up under the key ``"{case_id}#{index}"``.
    """
    keys = list(spec.trivial_ids) + [f"{c}#{i}" for c, i in spec.hn_items]
    try:
        images = np.stack([np.asarray(image_vectors[k], dtype=np.float64) for k in keys])
        texts = np.stack([np.asarray(text_vectors[k], dtype=np.float64) for k in keys])
    except KeyError as exc:
        raise HardNegBatchError(f"missing embedding for {exc.args[0]!r}") from None
    return EmbeddingBatch(
        images=images,
        texts=texts,
        n_trivial=len(spec.trivial_ids),
        pairing=tuple(range(len(spec.trivial_ids))),
        hn_case_ids=tuple(c for c, _ in spec.hn_items),
    )


def write_embeddings(path: Path | str, matrix: np.ndarray) -> None:
    """Write a matrix as magic, row/col counts, then row-major float32."""
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValidationError("embedding matrices must be 2-d")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix).tobytes())


def read_embeddings(path: Path | str) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != EMB_MAGIC:
        raise ValidationError(f"{path} is not an embedding matrix file")
    rows, cols = struct.unpack("<II", data[4:12])
    expected = 12 + rows * cols * 4
    if len(data) != expected:
        raise ValidationError(
            f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(data)}"
        )
    return np.frombuffer(data[12:], dtype="<f4").reshape(rows, cols).copy()
