"""SORT baseline: constant-velocity Kalman filter plus IoU assignment.

State is ``(cx, cy, s, r, vcx, vcy, vs)`` with ``s`` the box area and ``r``
the aspect ratio ``w / h``; the measurement is ``(cx, cy, s, r)``.  Noise
defaults follow the original SORT code.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import List, Optional

import numpy as np

from .assign import GATE, iou_matrix, solve_assignment
from .errors import ConfigError, SingularInnovationError
from .model import BoundingBox, Member, SequenceDataset, Track
from .parallel import per_video, renumber

STATE_DIM = 7
MEAS_DIM = 4
MIN_AREA = 1e-6
MIN_ASPECT = 1e-6
MAX_CONDITION = 1e12

H = np.hstack([np.eye(MEAS_DIM), np.zeros((MEAS_DIM, STATE_DIM - MEAS_DIM))])


@dataclass
class SortConfig:
    iou_gate: float = 0.3
    max_age: int = 1
    min_hits: int = 3
    process_noise: float = 1.0
    measurement_noise: float = 1.0
    initial_noise: float = 10.0
    category_gated: bool = True

    def __post_init__(self):
        if not 0.0 < self.iou_gate <= 1.0:
            raise ConfigError(f"iou_gate must be in (0, 1], got {self.iou_gate}")
        if int(self.max_age) != self.max_age or self.max_age < 0:
            raise ConfigError(f"max_age must be a non-negative integer, got {self.max_age}")
        if int(self.min_hits) != self.min_hits or self.min_hits < 1:
            raise ConfigError(f"min_hits must be a positive integer, got {self.min_hits}")
        for name in ("process_noise", "measurement_noise", "initial_noise"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SortConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown SORT option(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SortConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    # SORT convention: small process noise on velocities, larger measurement
    # noise on area/aspect, very uncertain initial velocities.
    def Q(self) -> np.ndarray:
        return np.diag([1.0, 1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-4]) * self.process_noise

    def R(self) -> np.ndarray:
        return np.diag([1.0, 1.0, 10.0, 10.0]) * self.measurement_noise

    def P0(self) -> np.ndarray:
        return np.diag([1.0, 1.0, 1.0, 1.0, 1e3, 1e3, 1e3]) * self.initial_noise


@dataclass
class KalmanBoxState:
    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def from_box(cls, box: BoundingBox, P0: np.ndarray) -> "KalmanBoxState":
        mean = np.zeros(STATE_DIM)
        mean[:MEAS_DIM] = box_to_measurement(box)
        return cls(mean, P0.copy())

    def box(self) -> BoundingBox:
        return measurement_to_box(self.mean[:MEAS_DIM])


def box_to_measurement(box: BoundingBox) -> np.ndarray:
    return np.array([box.x + box.w / 2.0, box.y + box.h / 2.0, box.w * box.h, box.w / box.h])


def measurement_to_box(z) -> BoundingBox:
    cx, cy, s, r = (float(v) for v in z)
    s = max(s, MIN_AREA)
    r = max(r, MIN_ASPECT)
    w = np.sqrt(s * r)
    h = s / w
    return BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h)


def transition(dt: float) -> np.ndarray:
    F = np.eye(STATE_DIM)
    F[0, 4] = F[1, 5] = F[2, 6] = dt
    return F


def kf_predict(state: KalmanBoxState, dt: float = 1.0, Q: Optional[np.ndarray] = None,
               ) -> KalmanBoxState:
    """Constant-velocity prediction over ``dt`` frames; area floored at a
    small positive value."""
    if Q is None:
        Q = SortConfig().Q()
    F = transition(dt)
    mean = F @ state.mean
    mean[2] = max(mean[2], MIN_AREA)
    cov = F @ state.covariance @ F.T + Q * dt
    return KalmanBoxState(mean, 0.5 * (cov + cov.T))


def kf_update(state: KalmanBoxState, measured: BoundingBox, R: Optional[np.ndarray] = None,
              ) -> KalmanBoxState:
    """Standard Kalman correction with a box measurement.

    Raises SingularInnovationError when the innovation covariance is
    numerically singular instead of falling back to a pseudo-inverse.
    """
    if R is None:
        R = SortConfig().R()
    P = state.covariance
    S = H @ P @ H.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > MAX_CONDITION:
        raise SingularInnovationError("innovation covariance is singular")
    K = np.linalg.solve(S, H @ P).T          # P H^T S^-1, S symmetric
    innovation = box_to_measurement(measured) - H @ state.mean
    mean = state.mean + K @ innovation
    mean[2] = max(mean[2], MIN_AREA)
    mean[3] = max(mean[3], MIN_ASPECT)
    cov = (np.eye(STATE_DIM) - K @ H) @ P
    return KalmanBoxState(mean, 0.5 * (cov + cov.T))


class _SortTrack:
    def __init__(self, track: Track, state: KalmanBoxState):
        self.track = track
        self.state = state
        self.hits = 1
        self.time_since_update = 0


def sort_track_video(dataset: SequenceDataset, video_id: int,
                     cfg: Optional[SortConfig] = None) -> List[Track]:
    """Run SORT over every frame of one video.

    Frames are one index apart, so ``dt = 1``; the same code serves full
    frame-rate and keyframe-grid datasets.  Only tracks matched at least
    ``min_hits`` times are returned, with all their members.
    """
    cfg = cfg or SortConfig()
    Q, R, P0 = cfg.Q(), cfg.R(), cfg.P0()
    active: List[_SortTrack] = []
    created: List[_SortTrack] = []

    for fi in range(dataset.num_frames(video_id)):
        for t in active:
            t.state = kf_predict(t.state, 1.0, Q)
        dets = dataset.frame_detections(video_id, fi)

        cost = np.full((len(active), len(dets)), GATE)
        if active and dets:
            ious = iou_matrix([t.state.box() for t in active], [d.box for d in dets])
            ok = ious >= cfg.iou_gate
            if cfg.category_gated:
                ok &= (np.array([t.track.category_id for t in active])[:, None]
                       == np.array([d.category_id for d in dets])[None, :])
            cost[ok] = 1.0 - ious[ok]
        pairs = solve_assignment(cost)

        matched_t = set()
        matched_d = set()
        for r, c in pairs:
            t, det = active[r], dets[c]
            t.state = kf_update(t.state, det.box, R)
            t.track.add(Member.from_detection(det))
            t.hits += 1
            t.time_since_update = 0
            matched_t.add(r)
            matched_d.add(c)

        survivors = []
        for r, t in enumerate(active):
            if r not in matched_t:
                t.time_since_update += 1
            if t.time_since_update <= cfg.max_age:
                survivors.append(t)
        for c, det in enumerate(dets):
            if c in matched_d:
                continue
            t = _SortTrack(Track(len(created) + 1, video_id, det.category_id,
                                 [Member.from_detection(det)]),
                           KalmanBoxState.from_box(det.box, P0))
            created.append(t)
            survivors.append(t)
        active = survivors

    return [t.track for t in created if t.hits >= cfg.min_hits]


def _sort_one(payload, video_id):
    dataset, cfg = payload
    return sort_track_video(dataset, video_id, cfg)


def sort_track_dataset(dataset: SequenceDataset, cfg: Optional[SortConfig] = None,
                       jobs: int = 1) -> List[Track]:
    cfg = cfg or SortConfig()
    return renumber(per_video(_sort_one, (dataset, cfg), list(dataset.videos), jobs))


def project_tracks(tracks, source: SequenceDataset, target: SequenceDataset) -> List[Track]:
    """Re-key tracks from ``source`` frames onto ``target`` frames by image id.

    Members on images absent from ``target`` (e.g. non-keyframes) are
    dropped, and tracks left empty disappear.
    """
    out = []
    for t in tracks:
        members = []
        for m in t.members:
            where = target.images.get(m.image_id)
            if where is None:
                continue
            members.append(Member(where[1], m.image_id, m.box, m.score, m.det_id, m.embedding))
        if members:
            out.append(Track(t.track_id, target.images[members[0].image_id][0], t.category_id, members))
    return out
