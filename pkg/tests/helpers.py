"""Independent reference implementations and small fixture builders.

Nothing here calls into the code under test except for the plain data
types, so these can serve as oracles.
"""
from __future__ import annotations

import itertools
from typing import Dict, List, Optional, Sequence, Tuple

import mpmath as mp
import numpy as np

from taolink.model import BoundingBox, GroundTruthTrack, Member, Track

GATE = 1e9


# -- assignment ------------------------------------------------------------

def brute_force_assignment(cost) -> List[Tuple[int, int]]:
    """Enumerate every partial matching over feasible entries.

    Preference: most pairs, then least total cost, then the
    lexicographically smallest row-sorted pair list.
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape if cost.ndim == 2 else (0, 0)
    best = None

    def key(pairs):
        return (-len(pairs), sum(cost[r, c] for r, c in pairs), pairs)

    def rec(r, used, pairs):
        nonlocal best
        if r == n:
            cand = list(pairs)
            if best is None or key(cand) < key(best):
                best = cand
            return
        rec(r + 1, used, pairs)
        for c in range(m):
            if c not in used and cost[r, c] < GATE:
                pairs.append((r, c))
                used.add(c)
                rec(r + 1, used, pairs)
                used.discard(c)
                pairs.pop()

    rec(0, set(), [])
    return best or []


def pair_cost(cost, pairs) -> float:
    cost = np.asarray(cost, dtype=float)
    return float(sum(cost[r, c] for r, c in pairs))


# -- boxes and tracks ------------------------------------------------------

def box(x, y, w, h) -> BoundingBox:
    return BoundingBox(float(x), float(y), float(w), float(h))


def make_track(track_id: int, frames: Dict[int, BoundingBox], *, video_id: int = 1,
               category_id: int = 1, score: float = 0.9,
               embedding: Optional[np.ndarray] = None, scores: Optional[Sequence[float]] = None,
               ) -> Track:
    members = []
    for k, f in enumerate(sorted(frames)):
        s = score if scores is None else scores[k]
        members.append(Member(f, video_id * 1000 + f, frames[f], s, None, embedding))
    return Track(track_id, video_id, category_id, members)


def make_gt(gt_id: int, frames: Dict[int, BoundingBox], *, video_id: int = 1,
            category_id: int = 1) -> GroundTruthTrack:
    return GroundTruthTrack(gt_id, video_id, category_id, dict(frames))


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def partition_from_tracks(tracks) -> set:
    """Tracks as a set of frozensets of det ids."""
    return {frozenset(m.det_id for m in t.members) for t in tracks}


def partition_from_truth(dataset) -> set:
    groups: Dict[int, set] = {}
    for det_id, gid in dataset.det_truth.items():
        groups.setdefault(gid, set()).add(det_id)
    return {frozenset(g) for g in groups.values()}


# -- Kalman reference in extended precision -------------------------------

def kalman_reference(mean, cov, measured: BoundingBox, dt, Q, R, min_area, min_aspect, dps=40):
    """Straight-line textbook predict + update evaluated with mpmath.

    Returns ``(pred_mean, pred_cov, post_mean, post_cov)`` as float arrays.
    Applies the same documented floors on area and aspect as the filter.
    """
    with mp.workdps(dps):
        def M(a):
            return mp.matrix(np.asarray(a, dtype=float).tolist())

        F = mp.eye(7)
        F[0, 4] = F[1, 5] = F[2, 6] = mp.mpf(dt)
        x = M(np.asarray(mean, dtype=float).reshape(-1, 1))
        xp = F * x
        if xp[2] < min_area:
            xp[2] = mp.mpf(min_area)
        Pp = F * M(cov) * F.T + M(Q) * dt
        Hm = mp.zeros(4, 7)
        for i in range(4):
            Hm[i, i] = 1
        S = Hm * Pp * Hm.T + M(R)
        K = Pp * Hm.T * mp.inverse(S)
        bx, by, bw, bh = (mp.mpf(v) for v in (measured.x, measured.y, measured.w, measured.h))
        z = mp.matrix([bx + bw / 2, by + bh / 2, bw * bh, bw / bh])
        xu = xp + K * (z - Hm * xp)
        if xu[2] < min_area:
            xu[2] = mp.mpf(min_area)
        if xu[3] < min_aspect:
            xu[3] = mp.mpf(min_aspect)
        Pu = (mp.eye(7) - K * Hm) * Pp

        def A(m, shape):
            return np.array([[float(m[i, j]) for j in range(m.cols)] for i in range(m.rows)]).reshape(shape)

        return A(xp, (7,)), A(Pp, (7, 7)), A(xu, (7,)), A(Pu, (7, 7))


# -- AP by hand ------------------------------------------------------------

def ap_101(flags: Sequence[bool], n_gt: int) -> float:
    """Plain-Python 101-point interpolated AP."""
    tp = fp = 0
    prec, rec = [], []
    for f in flags:
        tp += f
        fp += not f
        prec.append(tp / (tp + fp))
        rec.append(tp / n_gt)
    total = 0.0
    for k in range(101):
        r = k / 100
        total += max((p for p, q in zip(prec, rec) if q >= r - 1e-12), default=0.0)
    return total / 101


def all_partial_matchings(n, m):
    """Every set of disjoint (row, col) pairs of an n x m grid."""
    cells = list(itertools.product(range(n), range(m)))
    for k in range(min(n, m) + 1):
        for combo in itertools.combinations(cells, k):
            rows = {r for r, _ in combo}
            cols = {c for _, c in combo}
            if len(rows) == k and len(cols) == k:
                yield list(combo)
