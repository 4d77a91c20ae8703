"""Robust cluster-to-class matching.

Pipeline: count how many source samples of each seen class fall nearest to
each target prototype (the co-occurrence matrix), turn each class column
into a distribution with a column-wise softmax, threshold it to a binary
matching matrix, and declare every prototype with an all-zero row unseen.
Matching is deliberately not one-to-one: one class may claim several
prototypes (over-clustering) and several classes may share one prototype
(under-clustering).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingSet
from .prototypes import PrototypeBank


@dataclass(frozen=True)
class MatchResult:
    cooccurrence: np.ndarray  # k x seen, ints
    distribution: np.ndarray  # k x seen, column-stochastic
    matches: np.ndarray  # k x seen, binary
    unseen_prototype_indices: tuple[int, ...]
    class_to_prototypes: dict[int, tuple[int, ...]]

    def to_json_dict(self) -> dict:
        return {
            "cooccurrence": self.cooccurrence.tolist(),
            "distribution": self.distribution.tolist(),
            "matches": self.matches.tolist(),
            "unseen_prototype_indices": list(self.unseen_prototype_indices),
            "class_to_prototypes": {
                str(c): list(p) for c, p in self.class_to_prototypes.items()
            },
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MatchResult":
        return cls(
            np.asarray(d["cooccurrence"], dtype=np.int64),
            np.asarray(d["distribution"], dtype=np.float64),
            np.asarray(d["matches"], dtype=np.int8),
            tuple(d["unseen_prototype_indices"]),
            {int(c): tuple(p) for c, p in d["class_to_prototypes"].items()},
        )


def nearest_prototype(vectors: np.ndarray, bank: PrototypeBank) -> np.ndarray:
    """Index of the max-dot-product prototype per row; ties -> lowest index."""
    if vectors.shape[1] != bank.dim:
        raise ValueError(f"dimension mismatch: vectors d={vectors.shape[1]}, bank d={bank.dim}")
    return np.argmax(vectors.astype(np.float64) @ bank.columns, axis=1)


def co_occurrence(source: EmbeddingSet, target_protos: PrototypeBank) -> np.ndarray:
    """Count source samples per (nearest prototype, seen class) pair."""
    if source.labels is None:
        raise ValueError("source set must be labeled")
    seen = int(source.labels.max()) + 1
    nearest = nearest_prototype(source.vectors, target_protos)
    gamma = np.zeros((target_protos.count, seen), dtype=np.int64)
    np.add.at(gamma, (nearest, source.labels), 1)
    return gamma


def column_softmax(gamma: np.ndarray) -> np.ndarray:
    """Column-stochastic softmax of the count matrix, overflow-safe."""
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 1:
        raise ValueError(f"expected a 2-D matrix with at least one row, got shape {g.shape}")
    if g.size and g.min() < 0:
        raise ValueError("counts must be non-negative")
    e = np.exp(g - g.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def threshold_match(distribution: np.ndarray, tau: float) -> np.ndarray:
    """Binary matching matrix: 1 where the distribution is >= tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    return (np.asarray(distribution, dtype=np.float64) >= tau).astype(np.int8)


def split_prototypes(
    target_protos: PrototypeBank, matches: np.ndarray
) -> tuple[dict[int, tuple[int, ...]], PrototypeBank]:
    """Split the target bank into per-class matches and the unseen remainder."""
    m = np.asarray(matches)
    if m.shape[0] != target_protos.count:
        raise ValueError(
            f"matching matrix has {m.shape[0]} rows for {target_protos.count} prototypes"
        )
    unseen = np.flatnonzero(m.sum(axis=1) == 0)
    class_map = {
        j: tuple(int(i) for i in np.flatnonzero(m[:, j])) for j in range(m.shape[1])
    }
    w_unseen = PrototypeBank(target_protos.columns[:, unseen], kind="unseen")
    return class_map, w_unseen


def assemble_classifier(w_seen: PrototypeBank, w_unseen: PrototypeBank) -> PrototypeBank:
    """Concatenate seen columns then unseen columns into the combined classifier."""
    if w_unseen.count and w_seen.dim != w_unseen.dim:
        raise ValueError(f"dimension mismatch: seen d={w_seen.dim}, unseen d={w_unseen.dim}")
    if w_unseen.count == 0:
        return PrototypeBank(w_seen.columns.copy(), kind="combined")
    return PrototypeBank(np.hstack([w_seen.columns, w_unseen.columns]), kind="combined")


def match(source: EmbeddingSet, target_protos: PrototypeBank, tau: float) -> MatchResult:
    """Run the full co-occurrence -> softmax -> threshold -> split chain."""
    gamma = co_occurrence(source, target_protos)
    dist = column_softmax(gamma)
    m = threshold_match(dist, tau)
    class_map, _ = split_prototypes(target_protos, m)
    unseen = tuple(int(i) for i in np.flatnonzero(m.sum(axis=1) == 0))
    return MatchResult(gamma, dist, m, unseen, class_map)
