"""Linear assignment and the distance functions that feed it.

Cost matrices encode infeasible pairs with the sentinel :data:`GATE`.  The
solver returns a matching of feasible pairs only, choosing (in order of
priority) the largest number of pairs, then the smallest total cost, then
the lexicographically smallest sorted ``(row, col)`` sequence.
"""
from __future__ import annotations

from collections import deque
from typing import List, Tuple

import numpy as np

from .errors import DimensionMismatchError
from .model import BoundingBox

GATE = 1e9

Pairs = List[Tuple[int, int]]


def _shortest_augmenting_path(w: np.ndarray):
    """Min-cost perfect matching on a square matrix (``inf`` = forbidden).

    Jonker-Volgenant style: one Dijkstra-like augmentation per row with dual
    potentials.  Returns ``(row_to_col, u, v)`` where ``w - u[:,None] - v``
    is non-negative everywhere and zero on the matching.  A finite perfect
    matching must exist.
    """
    n = w.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)      # p[j]: 1-based row owning column j
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = w[i0 - 1] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            if not np.isfinite(delta):
                raise RuntimeError("no finite perfect matching exists")
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.intp)
    row_to_col[p[1:] - 1] = np.arange(n)
    return row_to_col, u[1:], v[1:]


def _reroute(tight, row_to_col, col_to_row, movable, i, j) -> bool:
    """Hand column ``j`` to row ``i`` along an alternating cycle of tight
    edges that only moves rows flagged ``movable``.  Mutates the matching and
    returns True on success."""
    target = row_to_col[i]
    start = col_to_row[j]
    if not movable[start]:
        return False
    pred = {start: None}
    seen_cols = np.zeros(len(row_to_col), dtype=bool)
    seen_cols[j] = True
    queue = deque([start])
    end = -1
    while queue and end < 0:
        r = queue.popleft()
        for c in np.flatnonzero(tight[r] & ~seen_cols):
            seen_cols[c] = True
            if c == target:
                end = r
                break
            owner = col_to_row[c]
            if movable[owner] and owner not in pred:
                pred[owner] = (r, c)
                queue.append(owner)
    if end < 0:
        return False
    moves = [(end, target)]
    r = end
    while pred[r] is not None:
        r_prev, c = pred[r]
        moves.append((r_prev, c))
        r = r_prev
    moves.append((i, j))
    for r, c in moves:
        row_to_col[r] = c
        col_to_row[c] = r
    return True


def solve_assignment(cost) -> Pairs:
    """Match rows to columns of a gated cost matrix.

    Entries ``>= GATE`` (or non-finite) are never matched.  Among matchings
    of the remaining pairs the result has maximum cardinality, then minimum
    total cost, then the lexicographically smallest ``(row, col)`` list.
    Returned pairs are sorted by row.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.size == 0:
        return []
    if c.ndim != 2:
        raise DimensionMismatchError(f"cost matrix must be 2-D, got shape {c.shape}")
    feasible = np.isfinite(c) & (c < GATE)
    rows = np.flatnonzero(feasible.any(axis=1))
    cols = np.flatnonzero(feasible.any(axis=0))
    if rows.size == 0:
        return []
    c = c[np.ix_(rows, cols)]
    feasible = feasible[np.ix_(rows, cols)]
    n, m = c.shape

    # Square reduction: real rows x real cols, one private "unmatched" column
    # per real row, one private "unmatched" row per real column, and a zero
    # block between the two sets of dummies.  Subtracting `bonus` from every
    # feasible pair makes cardinality dominate cost.
    fc = c[feasible]
    bonus = abs(float(fc.max())) + float(fc.max() - fc.min()) * min(n, m) + 1.0
    size = n + m
    w = np.full((size, size), np.inf)
    w[:n, :m] = np.where(feasible, c - bonus, np.inf)
    w[np.arange(n), m + np.arange(n)] = 0.0
    w[n + np.arange(m), np.arange(m)] = 0.0
    w[n:, m:] = 0.0

    row_to_col, u, v = _shortest_augmenting_path(w)

    # Every optimal matching lives on the tight edges of the optimal duals;
    # walk real rows in order and claim the smallest tight column possible.
    scale = max(1.0, float(np.abs(w[np.isfinite(w)]).max()))
    tight = (w - u[:, None] - v[None, :]) <= 1e-12 * scale
    col_to_row = np.empty(size, dtype=np.intp)
    col_to_row[row_to_col] = np.arange(size)
    movable = np.ones(size, dtype=bool)
    for i in range(n):
        movable[i] = False
        current = row_to_col[i]
        # candidate order: real columns ascending, then "unmatched"
        for j in np.flatnonzero(tight[i]):
            if j == current:
                break
            if _reroute(tight, row_to_col, col_to_row, movable, i, j):
                break

    return [(int(rows[i]), int(cols[row_to_col[i]])) for i in range(n) if row_to_col[i] < m]


def matching_cost(cost, pairs: Pairs) -> float:
    c = np.asarray(cost, dtype=np.float64)
    return float(sum(c[r, k] for r, k in pairs))


# -- distances -------------------------------------------------------------

def cosine_distance(a, b) -> float:
    """``1 - a.b`` for unit vectors, clamped to ``[0, 2]``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cannot compare embeddings of shape {a.shape} and {b.shape}")
    return float(min(2.0, max(0.0, 1.0 - float(np.dot(a, b)))))


def cosine_distance_matrix(a, b) -> np.ndarray:
    """Pairwise cosine distances between rows of ``a`` (n x D) and ``b`` (m x D)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    return np.clip(1.0 - a @ b.T, 0.0, 2.0)


def overlap_1d(a0, aw, b0, bw):
    """Length of ``[a0, a0+aw] & [b0, b0+bw]``, never more than either width
    (``(x + w) - x`` can round above ``w``)."""
    return np.clip(np.minimum(np.minimum(a0 + aw, b0 + bw) - np.maximum(a0, b0),
                              np.minimum(aw, bw)), 0.0, None)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = float(overlap_1d(a.x, a.w, b.x, b.w) * overlap_1d(a.y, a.h, b.y, b.h))
    if inter <= 0.0:
        return 0.0
    return min(1.0, inter / (a.area + b.area - inter))


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between two sequences of boxes (or ``[x, y, w, h]`` arrays)."""
    def as_arr(boxes):
        if isinstance(boxes, np.ndarray):
            return boxes.reshape(-1, 4).astype(np.float64)
        return np.array([bx.as_list() if isinstance(bx, BoundingBox) else list(bx) for bx in boxes],
                        dtype=np.float64).reshape(-1, 4)

    A, B = as_arr(a), as_arr(b)
    iw = overlap_1d(A[:, 0][:, None], A[:, 2][:, None], B[:, 0][None], B[:, 2][None])
    ih = overlap_1d(A[:, 1][:, None], A[:, 3][:, None], B[:, 1][None], B[:, 3][None])
    inter = iw * ih
    union = (A[:, 2] * A[:, 3])[:, None] + (B[:, 2] * B[:, 3])[None] - inter
    return np.minimum(inter / union, 1.0)
