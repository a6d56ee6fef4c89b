"""Track-level evaluation: spatio-temporal track IoU, per-category track AP
and the "track oracle" that links detections through ground-truth identity.

Evaluation is a simplified federated protocol: a category is scored only on
videos where it has ground-truth tracks, and predictions of that category in
other videos are ignored rather than counted as false positives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .assign import GATE, iou_matrix, overlap_1d, solve_assignment
from .errors import GridMismatchError, VideoMismatchError
from .model import (
    BoundingBox,
    EmbeddingStore,
    GroundTruthTrack,
    Member,
    SequenceDataset,
    Track,
)
from .parallel import renumber

RECALL_POINTS = np.arange(101) / 100.0
# recall k/n that equals a grid point mathematically must reach it numerically
RECALL_SLACK = 1e-12

AnyTrack = Union[Track, GroundTruthTrack]


def _box_map(t: AnyTrack) -> Dict[int, BoundingBox]:
    return t.boxes() if isinstance(t, Track) else t.boxes


def track_iou(p: AnyTrack, g: AnyTrack) -> float:
    """Summed per-frame intersection over summed per-frame union.

    Frames where only one side has a box add that box's area to the union.
    """
    if p.video_id != g.video_id:
        raise VideoMismatchError(f"tracks from videos {p.video_id} and {g.video_id}")
    pb, gb = _box_map(p), _box_map(g)
    inter = union = 0.0
    for f in pb.keys() | gb.keys():
        a, b = pb.get(f), gb.get(f)
        if a is not None and b is not None:
            i = float(overlap_1d(a.x, a.w, b.x, b.w) * overlap_1d(a.y, a.h, b.y, b.h))
            inter += i
            union += a.area + b.area - i
        else:
            union += (a or b).area
    return min(1.0, inter / union) if union > 0 else 0.0


def _dense(tracks: Sequence[AnyTrack], n_frames: int) -> np.ndarray:
    arr = np.full((len(tracks), n_frames, 4), np.nan)
    for k, t in enumerate(tracks):
        for f, b in _box_map(t).items():
            arr[k, f] = (b.x, b.y, b.w, b.h)
    return arr


def track_iou_matrix(preds: Sequence[AnyTrack], gts: Sequence[AnyTrack]) -> np.ndarray:
    """Vectorised :func:`track_iou` for tracks of one video."""
    if not preds or not gts:
        return np.zeros((len(preds), len(gts)))
    n_frames = 1 + max(max(_box_map(t)) for t in list(preds) + list(gts))
    P, G = _dense(preds, n_frames), _dense(gts, n_frames)
    p_area = np.nan_to_num(P[..., 2] * P[..., 3])          # (np, F)
    g_area = np.nan_to_num(G[..., 2] * G[..., 3])          # (ng, F)
    with np.errstate(invalid="ignore"):
        iw = overlap_1d(P[..., 0][:, None], P[..., 2][:, None], G[..., 0][None], G[..., 2][None])
        ih = overlap_1d(P[..., 1][:, None], P[..., 3][:, None], G[..., 1][None], G[..., 3][None])
    inter = np.nan_to_num(iw * ih)                           # (np, ng, F)
    union = p_area[:, None] + g_area[None] - inter
    inter_sum = inter.sum(axis=2)
    union_sum = union.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union_sum > 0, np.minimum(inter_sum / union_sum, 1.0), 0.0)
    return out


def average_precision(is_tp: Sequence[bool], n_gt: int) -> float:
    """101-point interpolated AP of a score-ordered TP/FP sequence."""
    if n_gt <= 0:
        raise ValueError("average precision needs at least one ground-truth item")
    flags = np.asarray(is_tp, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS - RECALL_SLACK, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(q.mean())


@dataclass
class EvalReport:
    per_category: Dict[int, float]
    mAP: float
    per_video: Dict[int, Dict[str, int]]
    iou_threshold: float
    oracle: bool = False

    def to_dict(self) -> dict:
        return {
            "config": {"iou_threshold": self.iou_threshold, "oracle": self.oracle,
                       "federated": "categories scored only on videos with their ground truth"},
            "mAP": self.mAP,
            "per_category": [{"category_id": c, "AP": ap} for c, ap in sorted(self.per_category.items())],
            "per_video": [{"video_id": v, **d} for v, d in sorted(self.per_video.items())],
        }

    def table(self) -> str:
        lines = [f"{'category':>10} {'AP':>8}"]
        for c, ap in sorted(self.per_category.items()):
            lines.append(f"{c:>10} {ap * 100:>8.2f}")
        lines.append(f"{'mAP':>10} {self.mAP * 100:>8.2f}")
        lines.append("")
        lines.append(f"{'video':>10} {'TP':>6} {'FP':>6} {'missed':>6} {'ignored':>7}")
        for v, d in sorted(self.per_video.items()):
            lines.append(f"{v:>10} {d['tp']:>6} {d['fp']:>6} {d['missed_gt']:>6} {d['ignored']:>7}")
        mode = "oracle" if self.oracle else "tracker"
        lines.append(f"(IoU >= {self.iou_threshold:g}, {mode} mode)")
        return "\n".join(lines)


def evaluate(pred: Iterable[Track], gt: Iterable[GroundTruthTrack], iou_thresh: float = 0.5,
             oracle: bool = False) -> EvalReport:
    """Per-category track AP at ``iou_thresh`` and their mean.

    Predictions are taken in descending score order (ties by track id, then
    video) and greedily claim the unclaimed same-video ground-truth track
    of their category with the highest track IoU at or above the threshold.
    """
    pred = list(pred)
    gt = list(gt)
    gt_by_cat: Dict[int, List[GroundTruthTrack]] = {}
    for g in gt:
        gt_by_cat.setdefault(g.category_id, []).append(g)

    per_video: Dict[int, Dict[str, int]] = {}

    def stats(vid):
        return per_video.setdefault(vid, {"tp": 0, "fp": 0, "missed_gt": 0, "ignored": 0})

    for g in gt:
        stats(g.video_id)
    for t in pred:
        stats(t.video_id)

    per_category: Dict[int, float] = {}
    scored = set()
    for cat in sorted(gt_by_cat):
        gts = gt_by_cat[cat]
        videos = {g.video_id for g in gts}
        cands = [t for t in pred if t.category_id == cat and t.video_id in videos]
        scored.update(id(t) for t in cands)
        cands.sort(key=lambda t: (-t.score, t.track_id, t.video_id))

        ious: Dict[int, tuple] = {}
        for vid in sorted(videos):
            vp = [t for t in cands if t.video_id == vid]
            vg = sorted((g for g in gts if g.video_id == vid), key=lambda g: g.gt_track_id)
            ious[vid] = (vg, {id(t): row for t, row in zip(vp, track_iou_matrix(vp, vg))})

        claimed = {vid: np.zeros(len(ious[vid][0]), dtype=bool) for vid in videos}
        flags = []
        for t in cands:
            vg, rows = ious[t.video_id]
            row = np.where(claimed[t.video_id], -1.0, rows[id(t)])
            k = int(np.argmax(row)) if len(row) else -1
            hit = k >= 0 and row[k] >= iou_thresh
            if hit:
                claimed[t.video_id][k] = True
            flags.append(hit)
            stats(t.video_id)["tp" if hit else "fp"] += 1
        for vid in videos:
            stats(vid)["missed_gt"] += int((~claimed[vid]).sum())
        per_category[cat] = average_precision(flags, len(gts))

    for t in pred:
        if id(t) not in scored:
            stats(t.video_id)["ignored"] += 1

    mAP = float(np.mean(list(per_category.values()))) if per_category else 0.0
    return EvalReport(per_category, mAP, per_video, iou_thresh, oracle)


def oracle_tracks(dataset: SequenceDataset, gt: Optional[Sequence[GroundTruthTrack]] = None,
                  store: Optional[EmbeddingStore] = None, iou_gate: float = 0.5) -> List[Track]:
    """Link detections by ground-truth identity.

    On every frame detections are assigned to same-category ground-truth
    boxes with IoU >= ``iou_gate`` (cost ``1 - IoU``); matched detections
    join that ground-truth track's oracle track and the rest become
    singleton tracks.  Ids are renumbered 1..N in video order.
    """
    gt = list(dataset.ground_truth or ()) if gt is None else list(gt)
    for g in gt:
        if g.video_id not in dataset.videos:
            raise GridMismatchError(f"ground-truth track {g.gt_track_id} is on video {g.video_id}, "
                                    f"which the detections do not cover")
        n = dataset.num_frames(g.video_id)
        if any(not 0 <= f < n for f in g.boxes):
            raise GridMismatchError(f"ground-truth track {g.gt_track_id} uses frames outside the "
                                    f"detection grid of video {g.video_id}")

    per_video = []
    for vid in dataset.videos:
        vgt = sorted((g for g in gt if g.video_id == vid), key=lambda g: g.gt_track_id)
        linked = {g.gt_track_id: Track(0, vid, g.category_id) for g in vgt}
        singles = []
        for fi in range(dataset.num_frames(vid)):
            dets = dataset.frame_detections(vid, fi)
            here = [g for g in vgt if fi in g.boxes]
            pairs = []
            if dets and here:
                ious = iou_matrix([d.box for d in dets], [g.boxes[fi] for g in here])
                same = (np.array([d.category_id for d in dets])[:, None]
                        == np.array([g.category_id for g in here])[None, :])
                cost = np.where(same & (ious >= iou_gate), 1.0 - ious, GATE)
                pairs = solve_assignment(cost)
            matched = {}
            for r, c in pairs:
                matched[r] = here[c]
            for k, d in enumerate(dets):
                emb = store[d.embedding_ref] if store is not None and d.embedding_ref is not None else None
                member = Member.from_detection(d, emb)
                if k in matched:
                    linked[matched[k].gt_track_id].add(member)
                else:
                    singles.append(Track(0, vid, d.category_id, [member]))
        per_video.append([t for t in linked.values() if len(t)] + singles)
    return renumber(per_video)
