"""Core domain types: boxes, detections, tracks, datasets and embeddings.

Embeddings are plain 1-D float64 numpy arrays of unit L2 norm.  Nothing in
this module performs I/O.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionMismatchError,
    NoEmbeddingsError,
    OverlapError,
    RefError,
    UnknownVideoError,
    ZeroVectorError,
)

DEFAULT_DIM = 256
ZERO_NORM = 1e-12


def normalize(values, dim: Optional[int] = None) -> np.ndarray:
    """Return ``values`` scaled to unit L2 norm as a float64 vector.

    Raises ZeroVectorError for (near) zero or non-finite input and
    DimensionMismatchError when ``dim`` is given and does not match.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ZeroVectorError("embedding contains non-finite entries")
    norm = float(np.linalg.norm(v))
    if norm < ZERO_NORM:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm:g}")
    return v / norm


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in ``[x, y, w, h]`` pixel convention."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"box origin must be finite, got ({self.x}, {self.y})")
        if not (self.w > 0 and self.h > 0) or not (math.isfinite(self.w) and math.isfinite(self.h)):
            raise ValueError(f"degenerate box with w={self.w}, h={self.h}")

    @classmethod
    def from_xywh(cls, xywh: Sequence[float]) -> "BoundingBox":
        x, y, w, h = (float(v) for v in xywh)
        return cls(x, y, w, h)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> List[float]:
        return [self.x, self.y, self.w, self.h]

    def as_xyxy(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)


@dataclass(frozen=True)
class Detection:
    det_id: int
    video_id: int
    frame_index: int
    image_id: int
    box: BoundingBox
    category_id: int
    score: float
    embedding_ref: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection {self.det_id}: score {self.score} outside [0, 1]")
        if self.frame_index < 0:
            raise ValueError(f"detection {self.det_id}: negative frame_index")


@dataclass(frozen=True)
class Member:
    """One (frame, box) entry of a track."""

    frame_index: int
    image_id: int
    box: BoundingBox
    score: float
    det_id: Optional[int] = None
    embedding: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @classmethod
    def from_detection(cls, det: Detection, embedding: Optional[np.ndarray] = None) -> "Member":
        return cls(det.frame_index, det.image_id, det.box, det.score, det.det_id, embedding)


class Track:
    """Ordered set of members of one video sharing an identity.

    At most one member per frame.  ``score`` is always the mean of member
    scores and ``mean_embedding`` is maintained incrementally from a running
    sum of member embeddings.
    """

    def __init__(self, track_id: int, video_id: int, category_id: int,
                 members: Iterable[Member] = ()):
        self.track_id = int(track_id)
        self.video_id = int(video_id)
        self.category_id = int(category_id)
        self.members: List[Member] = []
        self._frames: List[int] = []
        self._emb_sum: Optional[np.ndarray] = None
        self._emb_count = 0
        for m in members:
            self.add(m)

    def __repr__(self) -> str:
        return (f"Track(id={self.track_id}, video={self.video_id}, cat={self.category_id}, "
                f"frames={self.start}-{self.end}, n={len(self)})")

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[Member]:
        return iter(self.members)

    def add(self, member: Member) -> None:
        pos = bisect.bisect_left(self._frames, member.frame_index)
        if pos < len(self._frames) and self._frames[pos] == member.frame_index:
            raise OverlapError(
                f"track {self.track_id} already has a member on frame {member.frame_index}")
        self._frames.insert(pos, member.frame_index)
        self.members.insert(pos, member)
        if member.embedding is not None:
            e = np.asarray(member.embedding, dtype=np.float64)
            if self._emb_sum is None:
                self._emb_sum = e.copy()
            else:
                if e.shape != self._emb_sum.shape:
                    raise DimensionMismatchError(
                        f"track {self.track_id}: embedding dim {e.shape[0]} != {self._emb_sum.shape[0]}")
                self._emb_sum += e
            self._emb_count += 1

    def remove(self, frame_index: int) -> Member:
        pos = bisect.bisect_left(self._frames, frame_index)
        if pos == len(self._frames) or self._frames[pos] != frame_index:
            raise KeyError(frame_index)
        del self._frames[pos]
        member = self.members.pop(pos)
        if member.embedding is not None:
            self._emb_count -= 1
            if self._emb_count == 0:
                self._emb_sum = None
            else:
                self._emb_sum -= member.embedding
        return member

    @property
    def frames(self) -> List[int]:
        return list(self._frames)

    @property
    def start(self) -> Optional[int]:
        return self._frames[0] if self._frames else None

    @property
    def end(self) -> Optional[int]:
        return self._frames[-1] if self._frames else None

    @property
    def score(self) -> float:
        if not self.members:
            return 0.0
        return sum(m.score for m in self.members) / len(self.members)

    @property
    def has_embedding(self) -> bool:
        return self._emb_count > 0

    @property
    def mean_embedding(self) -> Optional[np.ndarray]:
        if self._emb_sum is None:
            return None
        return normalize(self._emb_sum)

    def boxes(self) -> Dict[int, BoundingBox]:
        return {m.frame_index: m.box for m in self.members}

    def copy(self, track_id: Optional[int] = None) -> "Track":
        return Track(self.track_id if track_id is None else track_id,
                     self.video_id, self.category_id, self.members)


def track_mean_embedding(track: Track) -> np.ndarray:
    """Renormalized mean of member embeddings, recomputed from scratch."""
    embs = [m.embedding for m in track.members if m.embedding is not None]
    if not embs:
        raise NoEmbeddingsError(f"track {track.track_id} has no member embeddings")
    return normalize(np.sum(np.stack(embs), axis=0))


@dataclass
class GroundTruthTrack:
    gt_track_id: int
    video_id: int
    category_id: int
    boxes: Dict[int, BoundingBox]

    def __post_init__(self):
        if not self.boxes:
            raise ValueError(f"ground-truth track {self.gt_track_id} is empty")


@dataclass(frozen=True)
class Video:
    video_id: int
    name: str
    image_ids: Tuple[int, ...]
    fps: float = 1.0


class EmbeddingStore:
    """Table of unit embeddings addressed by row index.

    ``raw`` keeps the float32 rows exactly as they were read or created so a
    store can be written back bit-exactly; ``vectors`` holds the normalized
    float64 rows used for matching.
    """

    def __init__(self, raw):
        raw = np.asarray(raw, dtype=np.float32)
        if raw.ndim != 2:
            raise DimensionMismatchError(f"embedding table must be 2-D, got shape {raw.shape}")
        self.raw = raw
        vec = raw.astype(np.float64)
        norms = np.linalg.norm(vec, axis=1) if len(vec) else np.zeros(0)
        bad = np.flatnonzero(~np.isfinite(norms) | (norms < ZERO_NORM))
        if bad.size:
            raise ZeroVectorError(f"embedding row {int(bad[0])} cannot be normalized")
        self.vectors = vec / norms[:, None] if len(vec) else vec
        self.vectors.setflags(write=False)

    @classmethod
    def empty(cls, dim: int = DEFAULT_DIM) -> "EmbeddingStore":
        return cls(np.zeros((0, dim), dtype=np.float32))

    @property
    def dim(self) -> int:
        return int(self.raw.shape[1])

    def __len__(self) -> int:
        return int(self.raw.shape[0])

    def __getitem__(self, ref: int) -> np.ndarray:
        if not 0 <= ref < len(self):
            raise RefError(f"embedding row {ref} out of range (count={len(self)})")
        return self.vectors[ref]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return self.raw.shape == other.raw.shape and bool(np.array_equal(self.raw, other.raw))


class SequenceDataset:
    """Videos, their ordered frames, detections and optional ground truth.

    ``frame_index`` of a detection is its position in the video's frame
    list; for the usual 1 FPS data that list is the keyframe grid.
    """

    def __init__(self, videos: Sequence[Video], detections: Sequence[Detection] = (),
                 ground_truth: Optional[Sequence[GroundTruthTrack]] = None,
                 categories: Optional[Iterable[int]] = None,
                 det_truth: Optional[Dict[int, int]] = None):
        self.videos: Dict[int, Video] = {}
        self.images: Dict[int, Tuple[int, int]] = {}
        for v in videos:
            if v.video_id in self.videos:
                raise RefError(f"duplicate video_id {v.video_id}")
            self.videos[v.video_id] = v
            for fi, image_id in enumerate(v.image_ids):
                if image_id in self.images:
                    raise RefError(f"image_id {image_id} listed twice")
                self.images[image_id] = (v.video_id, fi)

        self.detections: List[Detection] = list(detections)
        self._by_frame: Dict[Tuple[int, int], List[Detection]] = {}
        self._by_id: Dict[int, Detection] = {}
        for d in self.detections:
            if d.det_id in self._by_id:
                raise RefError(f"duplicate det_id {d.det_id}")
            where = self.images.get(d.image_id)
            if where is None:
                raise RefError(f"detection {d.det_id} references unknown image_id {d.image_id}")
            if where != (d.video_id, d.frame_index):
                raise RefError(f"detection {d.det_id} disagrees with image {d.image_id} placement")
            self._by_id[d.det_id] = d
            self._by_frame.setdefault((d.video_id, d.frame_index), []).append(d)

        self.ground_truth: Optional[List[GroundTruthTrack]] = None
        if ground_truth is not None:
            self.ground_truth = list(ground_truth)
            for g in self.ground_truth:
                v = self.videos.get(g.video_id)
                if v is None:
                    raise RefError(f"ground-truth track {g.gt_track_id} references unknown video {g.video_id}")
                for fi in g.boxes:
                    if not 0 <= fi < len(v.image_ids):
                        raise RefError(f"ground-truth track {g.gt_track_id} uses invalid frame {fi}")

        cats = set(categories or ())
        cats.update(d.category_id for d in self.detections)
        cats.update(g.category_id for g in self.ground_truth or ())
        self.categories: Tuple[int, ...] = tuple(sorted(cats))
        # det_id -> gt_track_id for synthetic data; never serialized
        self.det_truth: Dict[int, int] = {k: v for k, v in (det_truth or {}).items() if k in self._by_id}

    def __eq__(self, other) -> bool:
        if not isinstance(other, SequenceDataset):
            return NotImplemented
        return (list(self.videos.values()) == list(other.videos.values())
                and self.detections == other.detections
                and self.ground_truth == other.ground_truth
                and self.categories == other.categories)

    def video(self, video_id: int) -> Video:
        try:
            return self.videos[video_id]
        except KeyError:
            raise UnknownVideoError(f"unknown video {video_id}") from None

    def num_frames(self, video_id: int) -> int:
        return len(self.video(video_id).image_ids)

    def frame_detections(self, video_id: int, frame_index: int) -> List[Detection]:
        return list(self._by_frame.get((video_id, frame_index), ()))

    def detection(self, det_id: int) -> Detection:
        return self._by_id[det_id]

    def video_detections(self, video_id: int) -> List[Detection]:
        self.video(video_id)
        return [d for d in self.detections if d.video_id == video_id]

    def video_ground_truth(self, video_id: int) -> List[GroundTruthTrack]:
        return [g for g in self.ground_truth or () if g.video_id == video_id]

    def image_id(self, video_id: int, frame_index: int) -> int:
        return self.video(video_id).image_ids[frame_index]

    def locate(self, image_id: int) -> Tuple[int, int]:
        try:
            return self.images[image_id]
        except KeyError:
            raise RefError(f"unknown image_id {image_id}") from None

    def replace(self, detections: Optional[Sequence[Detection]] = None,
                ground_truth: Optional[Sequence[GroundTruthTrack]] = ...) -> "SequenceDataset":
        """Copy with detections and/or ground truth swapped out."""
        return SequenceDataset(
            list(self.videos.values()),
            self.detections if detections is None else detections,
            self.ground_truth if ground_truth is ... else ground_truth,
            self.categories,
            self.det_truth,
        )

    def subset(self, video_ids: Iterable[int]) -> "SequenceDataset":
        keep = set(video_ids)
        return SequenceDataset(
            [v for v in self.videos.values() if v.video_id in keep],
            [d for d in self.detections if d.video_id in keep],
            None if self.ground_truth is None else [g for g in self.ground_truth if g.video_id in keep],
            self.categories,
            self.det_truth,
        )
