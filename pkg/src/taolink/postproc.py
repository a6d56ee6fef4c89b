"""Post-processing between raw tracks and final results.

* :func:`post_associate` re-links temporally disjoint tracklets whose mean
  appearance embeddings are close.
* :func:`merge_ensembles` mixes the track sets of two detectors.
* :func:`concat_embeddings` / :func:`concat_stores` fuse two embedding
  models so that the dot product becomes the average of both similarities.
* :func:`filter_categories` applies a category whitelist.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, List, Optional, Sequence, TypeVar

import numpy as np

from .assign import cosine_distance_matrix
from .errors import (
    ConfigError,
    DimensionMismatchError,
    EmptyWhitelistError,
    MissingMeanEmbeddingError,
)
from .eval import track_iou
from .model import EmbeddingStore, SequenceDataset, Track

INV_SQRT2 = 1.0 / math.sqrt(2.0)


# -- embedding fusion ------------------------------------------------------

def concat_embeddings(a, b, dim_a: Optional[int] = None, dim_b: Optional[int] = None) -> np.ndarray:
    """``(a / sqrt2, b / sqrt2)`` for unit ``a`` and ``b``; the result is unit
    norm and its dot products average the two models' dot products."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if dim_a is not None and a.shape[0] != dim_a:
        raise DimensionMismatchError(f"first embedding has dim {a.shape[0]}, expected {dim_a}")
    if dim_b is not None and b.shape[0] != dim_b:
        raise DimensionMismatchError(f"second embedding has dim {b.shape[0]}, expected {dim_b}")
    return np.concatenate([a, b]) * INV_SQRT2


def concat_stores(a: EmbeddingStore, b: EmbeddingStore) -> EmbeddingStore:
    """Row-wise :func:`concat_embeddings` of two stores indexed alike."""
    if len(a) != len(b):
        raise DimensionMismatchError(f"stores hold {len(a)} and {len(b)} rows")
    return EmbeddingStore(np.hstack([a.vectors, b.vectors]) * INV_SQRT2)


# -- post association --------------------------------------------------------

@dataclass
class PaConfig:
    similarity_threshold: float = 0.3      # cosine distance, merge when <=
    max_gap: Optional[int] = None          # empty keyframes allowed between tracklets
    require_same_category: bool = True

    def __post_init__(self):
        if not 0.0 <= self.similarity_threshold < 2.0:
            raise ConfigError(f"similarity_threshold must be in [0, 2), got {self.similarity_threshold}")
        if self.max_gap is not None and (int(self.max_gap) != self.max_gap or self.max_gap < 0):
            raise ConfigError(f"max_gap must be a non-negative integer or None, got {self.max_gap}")

    @classmethod
    def from_dict(cls, d: dict) -> "PaConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown post-association option(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _post_associate_video(tracks: List[Track], cfg: PaConfig) -> List[Track]:
    n = len(tracks)
    if n < 2:
        return tracks
    means = []
    for t in tracks:
        if not t.has_embedding:
            raise MissingMeanEmbeddingError(f"track {t.track_id} has no mean embedding")
        means.append(t.mean_embedding)
    means = np.stack(means)
    start = np.array([t.start for t in tracks])
    end = np.array([t.end for t in tracks])
    ids = np.array([t.track_id for t in tracks])
    cats = np.array([t.category_id for t in tracks])
    alive = np.ones(n, dtype=bool)

    def pair_ok(rows, cols):
        ok = end[rows][:, None] < start[cols][None, :]
        if cfg.max_gap is not None:
            ok &= (start[cols][None, :] - end[rows][:, None] - 1) <= cfg.max_gap
        if cfg.require_same_category:
            ok &= cats[rows][:, None] == cats[cols][None, :]
        return ok & alive[rows][:, None] & alive[cols][None, :]

    everyone = np.arange(n)
    dist = cosine_distance_matrix(means, means)
    valid = pair_ok(everyone, everyone)

    while True:
        cand = valid & (dist <= cfg.similarity_threshold)
        ii, jj = np.nonzero(cand)
        if ii.size == 0:
            break
        order = np.lexsort((ids[jj], start[jj], ids[ii], start[ii], dist[ii, jj]))
        i, j = int(ii[order[0]]), int(jj[order[0]])

        keep = tracks[i]
        merged = Track(keep.track_id, keep.video_id, keep.category_id,
                       list(keep.members) + list(tracks[j].members))
        tracks[i] = merged
        alive[j] = False
        means[i] = merged.mean_embedding
        end[i] = merged.end

        valid[j, :] = False
        valid[:, j] = False
        dist[i, :] = dist[:, i] = cosine_distance_matrix(means[i], means)[0]
        valid[i, :] = pair_ok(np.array([i]), everyone)[0]
        valid[:, i] = pair_ok(everyone, np.array([i]))[:, 0]

    return [t for t, a in zip(tracks, alive) if a]


def post_associate(tracks: Sequence[Track], cfg: Optional[PaConfig] = None) -> List[Track]:
    """Greedily re-link time-disjoint tracklets by mean-embedding distance.

    The closest admissible pair (distance ``<= similarity_threshold``) is
    merged first, the merged tracklet's mean embedding is recomputed, and the
    loop repeats until no pair qualifies.  Ties go to the pair whose earlier
    tracklet starts first, then to smaller track ids.  The merged track keeps
    the earlier tracklet's id.  Input tracks are not modified.
    """
    cfg = cfg or PaConfig()
    by_video = {}
    for t in tracks:
        by_video.setdefault(t.video_id, []).append(t.copy())
    out = []
    for vid in by_video:
        out.extend(_post_associate_video(by_video[vid], cfg))
    return out


# -- ensembles -------------------------------------------------------------

def merge_ensembles(results_a: Sequence[Track], results_b: Sequence[Track],
                    dedup_iou: Optional[float] = None) -> List[Track]:
    """Union of two track sets with B's ids shifted past A's largest id.

    With ``dedup_iou`` set, a track is dropped when a track of the other
    source in the same video and category overlaps it with track IoU
    ``>= dedup_iou`` and has a higher score (A wins exact ties).
    """
    offset = max((t.track_id for t in results_a), default=-1) + 1
    merged = [(0, t.copy()) for t in results_a] + [(1, t.copy(t.track_id + offset)) for t in results_b]
    if dedup_iou is None or not results_a or not results_b:
        return [t for _, t in merged]
    if not 0.0 < dedup_iou <= 1.0:
        raise ConfigError(f"dedup_iou must be in (0, 1], got {dedup_iou}")

    order = sorted(range(len(merged)),
                   key=lambda k: (-merged[k][1].score, merged[k][0], merged[k][1].track_id))
    kept: List[int] = []
    for k in order:
        src, t = merged[k]
        dup = any(merged[q][0] != src
                  and merged[q][1].video_id == t.video_id
                  and merged[q][1].category_id == t.category_id
                  and track_iou(t, merged[q][1]) >= dedup_iou
                  for q in kept)
        if not dup:
            kept.append(k)
    keep = set(kept)
    return [t for k, (_, t) in enumerate(merged) if k in keep]


# -- category whitelist ----------------------------------------------------

T = TypeVar("T")


def filter_categories(items: Iterable[T], whitelist) -> List[T]:
    """Keep items (detections or tracks) whose ``category_id`` is whitelisted."""
    whitelist = set(whitelist)
    if not whitelist:
        raise EmptyWhitelistError("category whitelist is empty")
    return [x for x in items if x.category_id in whitelist]


def filter_dataset(dataset: SequenceDataset, whitelist) -> SequenceDataset:
    return dataset.replace(detections=filter_categories(dataset.detections, whitelist))
