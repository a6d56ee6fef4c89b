from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import box, brute_force_assignment, partition_from_tracks, partition_from_truth, unit
from taolink.assign import GATE
from taolink.assoc import (
    AssocConfig,
    TrackState,
    associate_frame,
    cost_matrix,
    gallery_distance,
    track_dataset,
    track_video,
)
from taolink.errors import ConfigError, EmptyGalleryError, MissingEmbeddingError, UnknownVideoError
from taolink.model import Detection, EmbeddingStore, SequenceDataset, Track, Video
from taolink.synth import ScenarioSpec, generate


def state(gallery, misses=0, category=1, track_id=1):
    return TrackState(Track(track_id, 1, category), deque(gallery, maxlen=30), 0, misses)


def frame_dets(embs, categories=None):
    """Detections on frame 0 of video 1 with embedding rows 0..n-1."""
    categories = categories or [1] * len(embs)
    dets = [Detection(k + 1, 1, 0, 100, box(k, 0, 5, 5), c, 0.9, k)
            for k, c in enumerate(categories)]
    return dets, EmbeddingStore(np.asarray(embs, dtype=np.float32))


def test_config_validation():
    for bad in ({"max_cosine_distance": 0}, {"max_cosine_distance": 2.5}, {"gallery_budget": 0},
                {"max_age": -1}, {"min_score": 2}, {"bogus": 1}):
        with pytest.raises(ConfigError):
            AssocConfig.from_dict(bad)
    assert AssocConfig.from_dict(AssocConfig().to_dict()) == AssocConfig()


def test_gallery_distance_examples():
    e = unit([1, 0])
    f = unit([0, 1])
    assert gallery_distance(state([e]), e) == 0.0
    assert gallery_distance(state([e, f]), e) == 0.0
    assert gallery_distance(state([e]), f) == 1.0
    with pytest.raises(EmptyGalleryError):
        gallery_distance(state([]), e)


def test_one_track_one_det_matched():
    e = unit([1, 0, 0])
    dets, store = frame_dets([e])
    matches, ut, ud = associate_frame([state([e])], dets, store, AssocConfig())
    assert matches == [(0, 0)] and ut == [] and ud == []


def test_far_det_is_gated():
    e = unit([1, 0])
    far = unit([0.1, 1.0])          # cosine distance about 0.9
    dets, store = frame_dets([far])
    matches, ut, ud = associate_frame([state([e])], dets, store, AssocConfig())
    assert matches == [] and ut == [0] and ud == [0]


def test_category_gate():
    e = unit([1, 0])
    dets, store = frame_dets([e], categories=[2])
    assert associate_frame([state([e])], dets, store, AssocConfig())[0] == []
    assert associate_frame([state([e])], dets, store,
                           AssocConfig(category_gated=False))[0] == [(0, 0)]


def test_missing_embedding():
    d = Detection(1, 1, 0, 100, box(0, 0, 1, 1), 1, 0.9, None)
    with pytest.raises(MissingEmbeddingError):
        associate_frame([], [d], None, AssocConfig())


def test_cascade_fresher_track_claims_first():
    # the stale track is closer, but the fresh one is within the gate
    det = unit([1, 0.0])
    fresh = state([unit([1, 0.5])], misses=0)
    stale = state([det], misses=2)
    dets, store = frame_dets([det])
    assert associate_frame([stale, fresh], dets, store, AssocConfig())[0] == [(1, 0)]
    assert associate_frame([stale, fresh], dets, store, AssocConfig(cascade=False))[0] == [(0, 0)]


@pytest.mark.parametrize("seed", range(60))
def test_three_by_three_matches_brute_force_within_group(seed):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(3, 6))
    track_embs = [unit(v) for v in base]
    det_embs = [unit(base[k] + rng.normal(scale=0.6, size=6)) for k in rng.permutation(3)]
    dets, store = frame_dets(det_embs)
    active = [state([e]) for e in track_embs]
    cfg = AssocConfig(max_cosine_distance=0.5)
    matches, _, _ = associate_frame(active, dets, store, cfg)
    cost = cost_matrix(active, dets, store.vectors, cfg)
    # the oracle builds its own gated cost from scratch
    oracle = np.full((3, 3), GATE)
    for i, t in enumerate(track_embs):
        for j in range(3):
            d = 1 - float(t @ store[j])
            if d <= 0.5:
                oracle[i, j] = d
    np.testing.assert_allclose(np.where(cost < GATE, cost, 0), np.where(oracle < GATE, oracle, 0),
                               atol=1e-12)
    assert matches == brute_force_assignment(oracle)


def two_frame_dataset(embs_by_frame, categories=None):
    videos = [Video(1, "v", tuple(100 + f for f in range(len(embs_by_frame))))]
    dets, rows = [], []
    for f, embs in enumerate(embs_by_frame):
        for e in embs:
            dets.append(Detection(len(dets) + 1, 1, f, 100 + f, box(len(dets), 0, 5, 5),
                                  1, 0.9, len(rows)))
            rows.append(e)
    return SequenceDataset(videos, dets), EmbeddingStore(np.array(rows, dtype=np.float32))


def test_track_video_examples():
    e, f = unit([1, 0]), unit([0, 1])
    ds, store = two_frame_dataset([[e], [e]])
    (t,) = track_video(ds, 1, store)
    assert len(t) == 2
    ds, store = two_frame_dataset([[e, f], [f, e]])
    tracks = track_video(ds, 1, store)
    assert partition_from_tracks(tracks) == {frozenset({1, 4}), frozenset({2, 3})}
    with pytest.raises(UnknownVideoError):
        track_video(ds, 5, store)


def test_retirement_and_max_age():
    e = unit([1, 0])
    f = unit([0, 1])
    frames = [[e], [f], [f], [e]]
    ds, store = two_frame_dataset(frames)
    # max_age=1: e-track misses two frames and retires, so frame 3 starts a new one
    assert len(track_video(ds, 1, store, AssocConfig(max_age=1))) == 3
    assert len(track_video(ds, 1, store, AssocConfig(max_age=2))) == 2


def test_gallery_budget_evicts_oldest():
    # steps of 50 degrees (distance 0.357) away and then straight back to the start
    angles = np.radians([0, 50, 100, 0])
    embs = [[unit([np.cos(a), np.sin(a)])] for a in angles]
    ds, store = two_frame_dataset(embs)
    # budget 1 only remembers 100 degrees, which is far from 0
    assert len(track_video(ds, 1, store, AssocConfig(gallery_budget=1))) == 2
    assert len(track_video(ds, 1, store, AssocConfig(gallery_budget=3))) == 1


def test_min_score_filter():
    e = unit([1, 0])
    ds, store = two_frame_dataset([[e], [e]])
    low = [Detection(d.det_id, d.video_id, d.frame_index, d.image_id, d.box, d.category_id,
                     0.1 if d.det_id == 2 else 0.9, d.embedding_ref) for d in ds.detections]
    ds = ds.replace(detections=low)
    (t,) = track_video(ds, 1, store, AssocConfig(min_score=0.5))
    assert [m.det_id for m in t.members] == [1]


def test_zero_noise_recovers_ground_truth_partition():
    spec = ScenarioSpec(seed=11, n_videos=2, frames_per_video=600, n_identities=5)
    ds, store = generate(spec)
    tracks = track_dataset(ds, store)
    assert partition_from_tracks(tracks) == partition_from_truth(ds)


def test_tiny_gate_gives_singletons():
    ds, store = generate(ScenarioSpec(seed=2, n_videos=1, frames_per_video=300,
                                      embedding_noise=0.2, embedding_dim=32))
    tracks = track_dataset(ds, store, AssocConfig(max_cosine_distance=1e-9))
    assert all(len(t) == 1 for t in tracks)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.5), st.floats(0.0, 0.4), st.floats(0.0, 1.0),
       st.booleans(), st.booleans())
def test_tracker_invariants(seed, noise, miss, fp, gated, cascade):
    spec = ScenarioSpec(seed=seed, n_videos=2, frames_per_video=240, n_identities=4,
                        embedding_noise=noise, miss_rate=miss, fp_rate=fp, embedding_dim=32)
    ds, store = generate(spec)
    cfg = AssocConfig(category_gated=gated, cascade=cascade, max_age=3)
    tracks = track_dataset(ds, store, cfg)
    seen = [m.det_id for t in tracks for m in t.members]
    assert sorted(seen) == sorted(d.det_id for d in ds.detections)
    for t in tracks:
        assert len(set(t.frames)) == len(t)
        if gated:
            assert {ds.detection(m.det_id).category_id for m in t.members} == {t.category_id}
    assert sorted(t.track_id for t in tracks) == list(range(1, len(tracks) + 1))
    again = track_dataset(ds, store, cfg)
    assert [(t.track_id, [m.det_id for m in t.members]) for t in again] == \
           [(t.track_id, [m.det_id for m in t.members]) for t in tracks]


def test_jobs_do_not_change_output():
    ds, store = generate(ScenarioSpec(seed=4, n_videos=3, frames_per_video=300,
                                      embedding_noise=0.3, fp_rate=0.5, embedding_dim=32))
    one = track_dataset(ds, store, jobs=1)
    many = track_dataset(ds, store, jobs=3)
    assert [(t.track_id, t.video_id, [m.det_id for m in t.members]) for t in one] == \
           [(t.track_id, t.video_id, [m.det_id for m in t.members]) for t in many]
