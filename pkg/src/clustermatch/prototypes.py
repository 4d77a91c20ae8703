"""Prototype banks: the seen-class classifier and clustered target prototypes.

Seen prototypes form a normalized linear classifier trained with projected
SGD on frozen embeddings: cross-entropy on logits W^T z / temperature, with
every column renormalized to unit length after each step. Columns start at
the normalized class means, and the trainer never returns a bank whose
source accuracy is below that initialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import EmbeddingSet, FormatError, load_embeddings, save_embeddings

BANK_KINDS = ("seen", "target", "unseen", "combined")

COLUMN_NORM_TOL = 1e-5

# Seed-stream tag for the classifier trainer (mixed with the config seed).
HEAD_STREAM = 2


@dataclass(frozen=True)
class PrototypeBank:
    """d x k matrix of unit-norm prototype columns.

    k may be zero: a fully-matched target bank produces an empty unseen bank.
    """

    columns: np.ndarray
    kind: str

    def __post_init__(self):
        cols = np.ascontiguousarray(self.columns, dtype=np.float64)
        if cols.ndim != 2:
            raise ValueError(f"columns must be 2-D, got shape {cols.shape}")
        if self.kind not in BANK_KINDS:
            raise ValueError(f"kind must be one of {BANK_KINDS}, got {self.kind!r}")
        if cols.shape[1]:
            norms = np.linalg.norm(cols, axis=0)
            worst = int(np.argmax(np.abs(norms - 1.0)))
            if abs(norms[worst] - 1.0) > COLUMN_NORM_TOL:
                raise ValueError(
                    f"column {worst} has norm {norms[worst]:.6g}, expected 1 +/- {COLUMN_NORM_TOL}"
                )
        object.__setattr__(self, "columns", cols)

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    @property
    def count(self) -> int:
        return self.columns.shape[1]


def save_bank(bank: PrototypeBank, path) -> None:
    """Serialize a bank: columns as CEF rows plus a JSON sidecar for the kind."""
    path = Path(path)
    save_embeddings(EmbeddingSet(bank.columns.T.astype(np.float32)), path)
    Path(str(path) + ".json").write_text(json.dumps({"kind": bank.kind}) + "\n")


def load_bank(path) -> PrototypeBank:
    path = Path(path)
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise FormatError(f"missing bank sidecar {sidecar}")
    kind = json.loads(sidecar.read_text())["kind"]
    eset = load_embeddings(path)
    return PrototypeBank(eset.vectors.T.astype(np.float64), kind=kind)


def row_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class EpochSampler:
    """Yields shuffled mini-batch index arrays, reshuffling each epoch."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch = min(batch_size, n)
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next_batch(self) -> np.ndarray:
        if self.pos + self.batch > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        out = self.order[self.pos : self.pos + self.batch]
        self.pos += self.batch
        return out


def class_means(vectors: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-class mean vectors, shape (num_classes, d)."""
    sums = np.zeros((num_classes, vectors.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, vectors.astype(np.float64))
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        raise ValueError(f"class {int(np.argmin(counts))} has no samples")
    return sums / counts[:, None]


def _source_accuracy(z: np.ndarray, w: np.ndarray, labels: np.ndarray) -> float:
    return float(((z @ w).argmax(axis=1) == labels).mean())


def train_seen_prototypes(source: EmbeddingSet, config) -> PrototypeBank:
    """Train the normalized seen-class classifier on labeled source embeddings."""
    if source.labels is None:
        raise ValueError("source set must be labeled")
    labels = source.labels
    seen = int(labels.max()) + 1 if labels.size else 0
    if seen < 2:
        raise ValueError(f"need at least 2 seen classes, got {seen}")
    z = source.vectors.astype(np.float64)

    means = class_means(z, labels, seen)
    norms = np.linalg.norm(means, axis=1)
    if norms.min() < 1e-12:
        raise ValueError(f"class {int(np.argmin(norms))} has zero-norm mean")
    w_init = (means / norms[:, None]).T  # d x seen
    init_acc = _source_accuracy(z, w_init, labels)

    w = w_init.copy()
    rng = np.random.default_rng([config.seed, HEAD_STREAM])
    sampler = EpochSampler(source.count, config.batch_size, rng)
    onehot_rows = np.arange(sampler.batch)
    for _ in range(config.iterations):
        idx = sampler.next_batch()
        zb, yb = z[idx], labels[idx]
        probs = row_softmax(zb @ w / config.temperature)
        probs[onehot_rows[: len(idx)], yb] -= 1.0
        grad = zb.T @ probs / (len(idx) * config.temperature)
        w -= config.lr_head * grad
        w /= np.linalg.norm(w, axis=0, keepdims=True)

    if _source_accuracy(z, w, labels) < init_acc:
        w = w_init
    return PrototypeBank(w, kind="seen")


def target_prototypes(target: EmbeddingSet, k: int, config) -> PrototypeBank:
    """Cluster the target set and return unit-norm cluster prototypes."""
    from .kmeans import kmeans_fit, normalize_centroids

    result = kmeans_fit(
        target, k, seed=[config.seed, 1], max_iter=config.kmeans_max_iter, tol=config.kmeans_tol
    )
    return normalize_centroids(result, kind="target")
