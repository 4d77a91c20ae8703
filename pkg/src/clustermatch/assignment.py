"""Exact minimum-cost linear assignment.

One canonical contract for every caller: pass a cost matrix, get back the
globally optimal injective row->column map of size min(rows, cols).
Maximization problems set `maximize=True` instead of negating the matrix
themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class AssignmentResult:
    mapping: tuple[tuple[int, int], ...]  # (row, col) pairs, sorted by row
    total_cost: float


def solve_assignment(cost, maximize: bool = False) -> AssignmentResult:
    """Solve the rectangular linear assignment problem exactly.

    `total_cost` is the sum of the selected cells of the original matrix
    (even when maximizing).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise ValueError(f"cost must be a non-empty 2-D matrix, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix contains NaN or infinity")
    rows, cols = linear_sum_assignment(c, maximize=maximize)
    mapping = tuple(sorted(zip(rows.tolist(), cols.tolist())))
    return AssignmentResult(mapping, float(c[rows, cols].sum()))
