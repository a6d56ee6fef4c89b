"""Seeded synthetic tracking scenarios.

A world of boxes moving at constant velocity inside the image (reflecting
off the borders, plus an optional global camera shake) is rendered at
``keyframe_stride`` world frames per keyframe.  Ground truth lives on the
keyframes; detections are noisy copies of the ground-truth boxes with random
misses and false positives, and every true detection carries an embedding
near its identity's prototype.

Random draws come from independent child streams of ``SeedSequence(seed)``:

====== ==================================================================
stream draws, in order
====== ==================================================================
0      world, per video: per identity ``category, w, h, x0, y0, angle,
       speed``; then ``frames x 2`` camera offsets
1      prototypes, per video: candidate directions until all are separated
2      keyframe detections, per video, per keyframe, per identity:
       ``miss, dx, dy, dw, dh, score, noise[D]``; then ``n_fp`` and per
       false positive ``w, h, x, y, category, score, direction[D]``
3      non-keyframe detections (``full_rate`` only), same layout as 2
====== ==================================================================

Every value is drawn whether or not it ends up used (a missed box still
consumes its jitter and noise), so changing a rate never reshuffles the
remaining draws.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import SpecError
from .model import (
    BoundingBox,
    Detection,
    EmbeddingStore,
    GroundTruthTrack,
    SequenceDataset,
    Video,
)

IMAGE_ID_STRIDE = 100_000
MAX_PROTOTYPE_TRIES = 10_000
MIN_BOX_SIDE = 1.0


@dataclass
class ScenarioSpec:
    seed: int = 0
    n_videos: int = 2
    frames_per_video: int = 600
    keyframe_stride: int = 30
    n_identities: int = 5
    n_categories: int = 3
    image_width: float = 1280.0
    image_height: float = 720.0
    box_size: Tuple[float, float] = (40.0, 120.0)
    speed: Tuple[float, float] = (0.5, 3.0)          # pixels per world frame
    camera_jitter: float = 0.0
    miss_rate: float = 0.0
    fp_rate: float = 0.0                             # expected false positives per frame
    box_jitter: float = 0.0
    tp_score: Tuple[float, float] = (0.5, 1.0)
    fp_score: Tuple[float, float] = (0.05, 0.5)
    embedding_dim: int = 256
    prototype_separation: float = 0.8                # min pairwise cosine distance
    embedding_noise: float = 0.0                     # expected norm of the noise vector
    full_rate: bool = False

    def __post_init__(self):
        for name in ("box_size", "speed", "tp_score", "fp_score"):
            val = getattr(self, name)
            if len(val) != 2:
                raise SpecError(f"{name} must be a (low, high) pair")
            setattr(self, name, (float(val[0]), float(val[1])))
        self.validate()

    def validate(self) -> None:
        def check(cond, msg):
            if not cond:
                raise SpecError(msg)

        for name in ("n_videos", "frames_per_video", "keyframe_stride", "n_identities",
                     "n_categories", "embedding_dim"):
            v = getattr(self, name)
            check(isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 1,
                  f"{name} must be a positive integer, got {v!r}")
        check(isinstance(self.seed, (int, np.integer)) and self.seed >= 0,
              f"seed must be a non-negative integer, got {self.seed!r}")
        for name in ("miss_rate", "fp_rate"):
            v = getattr(self, name)
            check(0.0 <= v <= 1.0, f"{name} must be in [0, 1], got {v}")
        for name in ("camera_jitter", "box_jitter", "embedding_noise"):
            v = getattr(self, name)
            check(v >= 0.0, f"{name} must be >= 0, got {v}")
        lo, hi = self.box_size
        check(0 < lo <= hi < min(self.image_width, self.image_height),
              f"box_size {self.box_size} must fit inside the image")
        check(0 <= self.speed[0] <= self.speed[1], f"bad speed range {self.speed}")
        for name in ("tp_score", "fp_score"):
            lo, hi = getattr(self, name)
            check(0.0 <= lo <= hi <= 1.0, f"{name} must lie in [0, 1], got {(lo, hi)}")
        check(0.0 <= self.prototype_separation <= 2.0,
              f"prototype_separation must be in [0, 2], got {self.prototype_separation}")

    @property
    def n_keyframes(self) -> int:
        return -(-self.frames_per_video // self.keyframe_stride)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise SpecError(f"unknown scenario field(s): {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ScenarioSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def reflect(p, length):
    """Fold positions into ``[0, length]`` as if bouncing off both ends."""
    period = 2.0 * length
    m = np.mod(p, period)
    return length - np.abs(m - length)


def _prototypes(rng: np.random.Generator, n: int, dim: int, separation: float) -> np.ndarray:
    protos: List[np.ndarray] = []
    tries = 0
    while len(protos) < n:
        tries += 1
        if tries > MAX_PROTOTYPE_TRIES * n:
            raise SpecError(f"could not place {n} prototypes in {dim}-d with cosine "
                            f"distance >= {separation}")
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(1.0 - float(v @ p) >= separation for p in protos):
            protos.append(v)
    return np.array(protos)


@dataclass
class _World:
    categories: np.ndarray        # (n_ids,)
    sizes: np.ndarray             # (n_ids, 2)  w, h
    boxes: np.ndarray             # (frames, n_ids, 4) x, y, w, h


def _simulate(rng: np.random.Generator, spec: ScenarioSpec) -> _World:
    n = spec.n_identities
    T = spec.frames_per_video
    cats = np.empty(n, dtype=int)
    sizes = np.empty((n, 2))
    start = np.empty((n, 2))
    vel = np.empty((n, 2))
    for k in range(n):
        cats[k] = rng.integers(1, spec.n_categories + 1)
        w = rng.uniform(*spec.box_size)
        h = rng.uniform(*spec.box_size)
        sizes[k] = (w, h)
        start[k] = (rng.uniform(0, spec.image_width - w), rng.uniform(0, spec.image_height - h))
        angle = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(*spec.speed)
        vel[k] = speed * np.cos(angle), speed * np.sin(angle)
    cam = rng.normal(0.0, 1.0, size=(T, 2)) * spec.camera_jitter

    t = np.arange(T)[:, None]
    boxes = np.empty((T, n, 4))
    for k in range(n):
        x = start[k, 0] + vel[k, 0] * t[:, 0] + cam[:, 0]
        y = start[k, 1] + vel[k, 1] * t[:, 0] + cam[:, 1]
        boxes[:, k, 0] = reflect(x, spec.image_width - sizes[k, 0])
        boxes[:, k, 1] = reflect(y, spec.image_height - sizes[k, 1])
        boxes[:, k, 2:] = sizes[k]
    return _World(cats, sizes, boxes)


def _render_frame(rng, spec: ScenarioSpec, world: _World, frame: int, protos: np.ndarray):
    """Yield ``(identity or None, box, category, score, embedding)`` tuples."""
    D = spec.embedding_dim
    out = []
    for k in range(spec.n_identities):
        miss = rng.random() < spec.miss_rate
        jitter = rng.normal(0.0, 1.0, 4) * spec.box_jitter
        score = rng.uniform(*spec.tp_score)
        noise = rng.normal(0.0, 1.0, D) * (spec.embedding_noise / np.sqrt(D))
        if miss:
            continue
        x, y, w, h = world.boxes[frame, k] + jitter
        box = BoundingBox(float(x), float(y), float(max(w, MIN_BOX_SIDE)), float(max(h, MIN_BOX_SIDE)))
        emb = protos[k] + noise
        out.append((k, box, int(world.categories[k]), float(score), emb))
    n_fp = rng.poisson(spec.fp_rate)
    for _ in range(n_fp):
        w = rng.uniform(*spec.box_size)
        h = rng.uniform(*spec.box_size)
        x = rng.uniform(0, spec.image_width - w)
        y = rng.uniform(0, spec.image_height - h)
        cat = int(rng.integers(1, spec.n_categories + 1))
        score = rng.uniform(*spec.fp_score)
        direction = rng.standard_normal(D)
        out.append((None, BoundingBox(float(x), float(y), float(w), float(h)), cat, float(score), direction))
    return out


def generate(spec: ScenarioSpec) -> Tuple[SequenceDataset, EmbeddingStore]:
    """Build a dataset with ground truth and its embedding store.

    Without ``full_rate`` the dataset frames are the keyframes.  With it,
    every world frame is a dataset frame (ground truth still only on the
    keyframes); keyframe detections, their ids and embedding rows are the
    same in both modes.
    """
    spec.validate()
    seq = np.random.SeedSequence(int(spec.seed))
    world_rng, proto_rng, key_rng, full_rng = (np.random.default_rng(s) for s in seq.spawn(4))
    stride = spec.keyframe_stride
    key_frames = list(range(0, spec.frames_per_video, stride))

    videos: List[Video] = []
    gts: List[GroundTruthTrack] = []
    rendered: Dict[Tuple[int, int], list] = {}       # (video_id, world frame) -> detections
    next_gt = 1
    gt_ids: Dict[Tuple[int, int], int] = {}
    for v in range(spec.n_videos):
        video_id = v + 1
        world = _simulate(world_rng, spec)
        protos = _prototypes(proto_rng, spec.n_identities, spec.embedding_dim,
                             spec.prototype_separation)
        if spec.full_rate:
            frames = list(range(spec.frames_per_video))
            fps = 30.0
        else:
            frames = key_frames
            fps = 30.0 / stride
        frame_pos = {f: i for i, f in enumerate(frames)}
        videos.append(Video(video_id, f"synth-{video_id:03d}",
                            tuple(video_id * IMAGE_ID_STRIDE + f for f in frames), fps))
        for k in range(spec.n_identities):
            gt_ids[(video_id, k)] = next_gt
            gts.append(GroundTruthTrack(
                next_gt, video_id, int(world.categories[k]),
                {frame_pos[f]: BoundingBox(*(float(c) for c in world.boxes[f, k])) for f in key_frames}))
            next_gt += 1
        for f in key_frames:
            rendered[(video_id, f)] = _render_frame(key_rng, spec, world, f, protos)
        if spec.full_rate:
            for f in frames:
                if f % stride:
                    rendered[(video_id, f)] = _render_frame(full_rng, spec, world, f, protos)

    # keyframe detections first so their ids and rows do not depend on full_rate
    order = sorted(rendered, key=lambda vf: (vf[1] % stride != 0, vf[0], vf[1]))
    dets: List[Detection] = []
    rows: List[np.ndarray] = []
    truth: Dict[int, int] = {}
    positions = {v.video_id: {img - v.video_id * IMAGE_ID_STRIDE: i for i, img in enumerate(v.image_ids)}
                 for v in videos}
    for video_id, f in order:
        for ident, box, cat, score, emb in rendered[(video_id, f)]:
            det_id = len(dets) + 1
            dets.append(Detection(det_id, video_id, positions[video_id][f],
                                  video_id * IMAGE_ID_STRIDE + f, box, cat, score, len(rows)))
            rows.append(emb / np.linalg.norm(emb))
            if ident is not None:
                truth[det_id] = gt_ids[(video_id, ident)]
    dets.sort(key=lambda d: (d.video_id, d.frame_index, d.det_id))

    raw = np.array(rows, dtype=np.float32) if rows else np.zeros((0, spec.embedding_dim), np.float32)
    dataset = SequenceDataset(videos, dets, gts, range(1, spec.n_categories + 1), truth)
    return dataset, EmbeddingStore(raw)


@dataclass(frozen=True)
class Gap:
    """Delete detections of some identities on frames ``[start, stop)``."""

    video_id: int
    start: int
    stop: int
    gt_track_ids: Optional[Tuple[int, ...]] = None


def fragment_tracks(dataset: SequenceDataset, gap_spec: Sequence[Gap]) -> SequenceDataset:
    """Remove true detections inside the gap windows so every affected
    identity splits into at least two runs.  Ground truth is unchanged."""
    if not dataset.det_truth:
        if gap_spec:
            raise SpecError("fragment_tracks needs a synthetic dataset with detection truth")
        return dataset
    drop = set()
    for gap in gap_spec:
        n = dataset.num_frames(gap.video_id)
        if gap.start >= gap.stop:
            raise SpecError(f"empty gap window [{gap.start}, {gap.stop})")
        if gap.start <= 0 and gap.stop >= n:
            raise SpecError(f"gap [{gap.start}, {gap.stop}) would empty video {gap.video_id}")
        ids = gap.gt_track_ids
        if ids is None:
            ids = tuple(g.gt_track_id for g in dataset.video_ground_truth(gap.video_id))
        for gid in ids:
            frames = sorted(d.frame_index for d in dataset.video_detections(gap.video_id)
                            if dataset.det_truth.get(d.det_id) == gid)
            if not any(f < gap.start for f in frames) or not any(f >= gap.stop for f in frames):
                raise SpecError(f"gap [{gap.start}, {gap.stop}) does not split identity {gid} "
                                f"of video {gap.video_id}")
            drop.update(d.det_id for d in dataset.video_detections(gap.video_id)
                        if dataset.det_truth.get(d.det_id) == gid
                        and gap.start <= d.frame_index < gap.stop)
    return dataset.replace(detections=[d for d in dataset.detections if d.det_id not in drop])


def restrict_identities(dataset: SequenceDataset, keep_gt_ids, keep_false_positives: bool = True,
                        ) -> SequenceDataset:
    """Drop true detections of identities outside ``keep_gt_ids``."""
    keep = set(keep_gt_ids)
    out = []
    for d in dataset.detections:
        gid = dataset.det_truth.get(d.det_id)
        if gid is None:
            if keep_false_positives:
                out.append(d)
        elif gid in keep:
            out.append(d)
    return dataset.replace(detections=out)
