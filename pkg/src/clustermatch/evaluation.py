"""Seen accuracy, Hungarian-matched unseen accuracy, and the H-score.

Seen accuracy is exact-id agreement over samples whose ground truth is a
seen class; predicting a discovered id there is an error. Unseen accuracy
matches discovered ids to ground-truth unseen classes one-to-one with the
assignment solver and counts agreements; predictions of seen ids on unseen
samples can never be matched and score zero. The H-score is the harmonic
mean of the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import solve_assignment
from .data import ClassCatalog, PredictionSet


@dataclass(frozen=True)
class EvalReport:
    seen_accuracy: float | None
    unseen_accuracy: float | None
    h_score: float | None
    hungarian_map: tuple[tuple[int, int], ...]  # (predicted id, truth id)
    per_class: dict[int, tuple[int, int]]  # truth id -> (total, hits)
    discovered_class_count: int

    def to_json_dict(self) -> dict:
        return {
            "seen_accuracy": self.seen_accuracy,
            "unseen_accuracy": self.unseen_accuracy,
            "h_score": self.h_score,
            "discovered_class_count": self.discovered_class_count,
            "hungarian_map": [list(p) for p in self.hungarian_map],
            "per_class": {
                str(c): {"total": t, "hits": h} for c, (t, h) in sorted(self.per_class.items())
            },
        }


def h_score(seen: float, unseen: float) -> float:
    """Harmonic mean of the two accuracies; 0 when both vanish."""
    if not (0.0 <= seen <= 1.0 and 0.0 <= unseen <= 1.0):
        raise ValueError(f"accuracies must lie in [0, 1], got {seen}, {unseen}")
    if seen + unseen == 0.0:
        return 0.0
    return 2.0 * seen * unseen / (seen + unseen)


def seen_accuracy(pred: PredictionSet, truth: np.ndarray, catalog: ClassCatalog) -> float | None:
    """Exact-match accuracy over seen-truth samples; None when there are none."""
    truth = np.asarray(truth, dtype=np.int64)
    if truth.shape != pred.assignments.shape:
        raise ValueError("truth length does not match predictions")
    mask = truth < catalog.seen_count
    if not mask.any():
        return None
    return float((pred.assignments[mask] == truth[mask]).mean())


def unseen_accuracy(
    pred: PredictionSet, truth: np.ndarray, catalog: ClassCatalog
) -> tuple[float, tuple[tuple[int, int], ...]]:
    """Best one-to-one matching accuracy over unseen-truth samples.

    Returns the accuracy and the (discovered id, truth id) assignment pairs.
    """
    truth = np.asarray(truth, dtype=np.int64)
    if truth.shape != pred.assignments.shape:
        raise ValueError("truth length does not match predictions")
    mask = truth >= catalog.seen_count
    if not mask.any():
        raise ValueError("no ground-truth unseen samples")
    truth_ids = np.unique(truth[mask])
    discovered_ids = np.unique(pred.assignments[pred.assignments >= catalog.seen_count])
    if discovered_ids.size == 0:
        return 0.0, ()
    contingency = np.zeros((discovered_ids.size, truth_ids.size), dtype=np.float64)
    pred_index = {int(p): i for i, p in enumerate(discovered_ids)}
    truth_index = {int(t): j for j, t in enumerate(truth_ids)}
    for p, t in zip(pred.assignments[mask], truth[mask]):
        if p >= catalog.seen_count:
            contingency[pred_index[int(p)], truth_index[int(t)]] += 1
    result = solve_assignment(contingency, maximize=True)
    accuracy = result.total_cost / int(mask.sum())
    pairs = tuple(
        sorted((int(discovered_ids[r]), int(truth_ids[c])) for r, c in result.mapping)
    )
    return float(accuracy), pairs


def evaluate(pred: PredictionSet, truth: np.ndarray, catalog: ClassCatalog) -> EvalReport:
    """Full report; unseen metrics are None when the split has no unseen truth."""
    truth = np.asarray(truth, dtype=np.int64)
    seen_acc = seen_accuracy(pred, truth, catalog)
    seen_mask = truth < catalog.seen_count

    per_class: dict[int, tuple[int, int]] = {}
    for cls in np.unique(truth[seen_mask]):
        m = truth == cls
        per_class[int(cls)] = (int(m.sum()), int((pred.assignments[m] == cls).sum()))

    discovered = np.unique(pred.assignments[pred.assignments >= catalog.seen_count])
    unseen_acc = None
    pairs: tuple[tuple[int, int], ...] = ()
    if (~seen_mask).any():
        unseen_acc, pairs = unseen_accuracy(pred, truth, catalog)
        matched = dict((t, p) for p, t in pairs)
        for cls in np.unique(truth[~seen_mask]):
            m = truth == cls
            hit = 0
            if int(cls) in matched:
                hit = int((pred.assignments[m] == matched[int(cls)]).sum())
            per_class[int(cls)] = (int(m.sum()), hit)

    score = None
    if seen_acc is not None and unseen_acc is not None:
        score = h_score(seen_acc, unseen_acc)
    return EvalReport(
        seen_accuracy=seen_acc,
        unseen_accuracy=unseen_acc,
        h_score=score,
        hungarian_map=pairs,
        per_class=per_class,
        discovered_class_count=int(discovered.size),
    )
