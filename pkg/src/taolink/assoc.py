"""Appearance-only online tracker on the keyframe grid.

DeepSORT's matching with every geometric term removed: each track keeps a
gallery of its most recent member embeddings, the cost of a (track,
detection) pair is the smallest cosine distance between the detection and
any gallery entry, and tracks are matched in a cascade ordered by how many
keyframes they have gone unmatched.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, fields
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np

from .assign import GATE, cosine_distance_matrix, solve_assignment
from .errors import ConfigError, EmptyGalleryError, MissingEmbeddingError
from .model import Detection, EmbeddingStore, Member, SequenceDataset, Track
from .parallel import per_video, renumber


@dataclass
class AssocConfig:
    max_cosine_distance: float = 0.4
    gallery_budget: int = 30
    max_age: int = 10
    min_score: float = 0.0
    category_gated: bool = True
    cascade: bool = True

    def __post_init__(self):
        if not 0.0 < self.max_cosine_distance <= 2.0:
            raise ConfigError(f"max_cosine_distance must be in (0, 2], got {self.max_cosine_distance}")
        if int(self.gallery_budget) != self.gallery_budget or self.gallery_budget < 1:
            raise ConfigError(f"gallery_budget must be a positive integer, got {self.gallery_budget}")
        if int(self.max_age) != self.max_age or self.max_age < 0:
            raise ConfigError(f"max_age must be a non-negative integer, got {self.max_age}")
        if not 0.0 <= self.min_score <= 1.0:
            raise ConfigError(f"min_score must be in [0, 1], got {self.min_score}")

    @classmethod
    def from_dict(cls, d: dict) -> "AssocConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown appearance tracker option(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "AssocConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrackState:
    track: Track
    gallery: Deque[np.ndarray]
    last_seen: int
    misses: int = 0

    @classmethod
    def start(cls, track: Track, embedding: np.ndarray, frame_index: int,
              budget: int) -> "TrackState":
        return cls(track, deque([embedding], maxlen=budget), frame_index)

    def gallery_matrix(self) -> np.ndarray:
        return np.stack(self.gallery)


def gallery_distance(state: TrackState, embedding) -> float:
    """Nearest-neighbour cosine distance from ``embedding`` to the gallery."""
    if not state.gallery:
        raise EmptyGalleryError(f"track {state.track.track_id} has an empty gallery")
    return float(cosine_distance_matrix(state.gallery_matrix(), embedding).min())


def _embedding(det: Detection, store: Optional[EmbeddingStore]) -> np.ndarray:
    if det.embedding_ref is None or store is None:
        raise MissingEmbeddingError(f"detection {det.det_id} has no embedding")
    return store[det.embedding_ref]


def cost_matrix(active: Sequence[TrackState], dets: Sequence[Detection],
                det_embeddings: np.ndarray, cfg: AssocConfig) -> np.ndarray:
    """Gated gallery-distance costs, tracks as rows."""
    cost = np.full((len(active), len(dets)), GATE)
    if not active or not dets:
        return cost
    det_cats = np.array([d.category_id for d in dets])
    for r, state in enumerate(active):
        dist = cosine_distance_matrix(state.gallery_matrix(), det_embeddings).min(axis=0)
        ok = dist <= cfg.max_cosine_distance
        if cfg.category_gated:
            ok &= det_cats == state.track.category_id
        cost[r, ok] = dist[ok]
    return cost


def associate_frame(active: Sequence[TrackState], dets: Sequence[Detection],
                    store: Optional[EmbeddingStore], cfg: AssocConfig,
                    ) -> Tuple[List[Tuple[int, int]], List[int], List[int]]:
    """Match one keyframe's detections to the active tracks.

    Returns ``(matches, unmatched_tracks, unmatched_dets)`` as indices into
    ``active`` and ``dets``.
    """
    if dets:
        embs = np.stack([_embedding(d, store) for d in dets])
    else:
        embs = np.zeros((0, 1))
    cost = cost_matrix(active, dets, embs, cfg)

    if cfg.cascade:
        levels = sorted({s.misses for s in active})
        groups = [[r for r, s in enumerate(active) if s.misses == lvl] for lvl in levels]
    else:
        groups = [list(range(len(active)))]

    matches: List[Tuple[int, int]] = []
    remaining = list(range(len(dets)))
    for rows in groups:
        if not remaining:
            break
        sub = cost[np.ix_(rows, remaining)]
        pairs = solve_assignment(sub)
        taken = set()
        for r, c in pairs:
            matches.append((rows[r], remaining[c]))
            taken.add(remaining[c])
        remaining = [c for c in remaining if c not in taken]

    matched_rows = {r for r, _ in matches}
    unmatched_tracks = [r for r in range(len(active)) if r not in matched_rows]
    return sorted(matches), unmatched_tracks, remaining


def track_video(dataset: SequenceDataset, video_id: int, store: Optional[EmbeddingStore],
                cfg: Optional[AssocConfig] = None) -> List[Track]:
    """Run the appearance tracker over one video's keyframes.

    Every detection passing ``min_score`` lands in exactly one track; every
    unmatched detection starts a new track immediately.  Track ids are
    1-based in creation order.
    """
    cfg = cfg or AssocConfig()
    n_frames = dataset.num_frames(video_id)
    active: List[TrackState] = []
    created: List[Track] = []

    for fi in range(n_frames):
        dets = [d for d in dataset.frame_detections(video_id, fi) if d.score >= cfg.min_score]
        matches, unmatched_tracks, unmatched_dets = associate_frame(active, dets, store, cfg)

        for r, c in matches:
            state, det = active[r], dets[c]
            emb = _embedding(det, store)
            state.track.add(Member.from_detection(det, emb))
            state.gallery.append(emb)
            state.last_seen = fi
            state.misses = 0

        survivors = [active[r] for r, _ in matches]
        for r in unmatched_tracks:
            state = active[r]
            state.misses += 1
            if state.misses <= cfg.max_age:
                survivors.append(state)

        for c in unmatched_dets:
            det = dets[c]
            emb = _embedding(det, store)
            track = Track(len(created) + 1, video_id, det.category_id,
                          [Member.from_detection(det, emb)])
            created.append(track)
            survivors.append(TrackState.start(track, emb, fi, cfg.gallery_budget))

        # keep creation order so cascade groups see tracks deterministically
        survivors.sort(key=lambda s: s.track.track_id)
        active = survivors

    return created


def _track_one(payload, video_id):
    dataset, store, cfg = payload
    return track_video(dataset, video_id, store, cfg)


def track_dataset(dataset: SequenceDataset, store: Optional[EmbeddingStore],
                  cfg: Optional[AssocConfig] = None, jobs: int = 1) -> List[Track]:
    """Track every video; ids are renumbered 1..N in video order."""
    cfg = cfg or AssocConfig()
    results = per_video(_track_one, (dataset, store, cfg), list(dataset.videos), jobs)
    return renumber(results)
