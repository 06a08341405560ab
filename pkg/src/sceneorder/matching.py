"""Minimum-cost injective assignment (Hungarian) and segment matching.

The solver is the O(n^3) potential/augmenting-path method. On top of it,
``hungarian`` canonicalizes ties: among all minimum-cost assignments it
returns the lexicographically smallest pair list, so equal-cost inputs
(common with 1-IoU costs saturating at 1) resolve deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InputError(ValueError):
    """Non-finite costs or malformed matching inputs."""


@dataclass(frozen=True)
class Assignment:
    pairs: tuple  # ((row, col), ...) sorted by row; |pairs| = min(n, m)
    total_cost: float

    def col_of(self) -> dict[int, int]:
        return {r: c for r, c in self.pairs}

    def row_of(self) -> dict[int, int]:
        return {c: r for r, c in self.pairs}


def _solve(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Optimal columns for an n x m cost matrix with n <= m (1-based internals)."""
    n, m = cost.shape
    INF = 1e18
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # row matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    cols = np.zeros(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            cols[p[j] - 1] = j - 1
    total = float(cost[np.arange(n), cols].sum())
    return cols, total


def _optimal_cost(cost: np.ndarray) -> float:
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return 0.0
    if cost.shape[0] <= cost.shape[1]:
        return _solve(cost)[1]
    return _solve(cost.T)[1]


def hungarian(cost) -> Assignment:
    """Minimum-total-cost assignment over an n x m cost matrix.

    Matches min(n, m) pairs; ties broken by lexicographic pair order
    (computed on the transposed matrix when n > m).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InputError(f"cost must be a matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise InputError("cost matrix contains NaN or Inf")
    transposed = cost.shape[0] > cost.shape[1]
    work = cost.T.copy() if transposed else cost.copy()
    n, m = work.shape
    if n == 0:
        return Assignment((), 0.0)

    best_total = _solve(work)[1]
    tol = 1e-9 * max(1.0, abs(best_total))

    # Fix pairs row by row, smallest feasible column first: yields the
    # lexicographically smallest optimal assignment.
    remaining_cols = list(range(m))
    fixed: list[tuple[int, int]] = []
    residual = best_total
    for i in range(n):
        sub_rows = slice(i + 1, n)
        for j in remaining_cols:
            rest_cols = [c for c in remaining_cols if c != j]
            rest = work[sub_rows][:, rest_cols]
            achievable = work[i, j] + _optimal_cost(rest)
            if abs(achievable - residual) <= tol:
                fixed.append((i, j))
                remaining_cols = rest_cols
                residual -= work[i, j]
                break
        else:
            raise RuntimeError("canonicalization failed to reproduce the optimal cost")

    if transposed:
        pairs = tuple(sorted((r, c) for c, r in fixed))
    else:
        pairs = tuple(fixed)
    return Assignment(pairs, best_total)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def match_segments(pred_masks, pred_conf, gt_masks) -> Assignment:
    """Hungarian over cost(i,j) = 1 - IoU(pred_i, gt_j).

    Confidences are accepted for interface parity with the inference path
    but do not enter the cost; an all-zero predicted mask simply scores
    IoU 0 against everything.
    """
    if len(gt_masks) == 0:
        raise InputError("match_segments needs at least one ground-truth mask")
    cost = np.empty((len(pred_masks), len(gt_masks)))
    for i, pm in enumerate(pred_masks):
        for j, gm in enumerate(gt_masks):
            cost[i, j] = 1.0 - mask_iou(pm, gm)
    return hungarian(cost)
