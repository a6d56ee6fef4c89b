"""Mixing two result sets, and what the track oracle does and does not bound.

Two streams each find three of five identities per video.  Their union
finds all five.  The second half shows the oracle: it links detections by
ground truth, but keeps every detection it cannot match as a singleton, so
a tracker that silently drops those can score above it.

    python3 demos/ensemble_and_oracle.py
"""
from taolink import ScenarioSpec, SortConfig, evaluate, generate, merge_ensembles, oracle_tracks
from taolink import sort_track_dataset, track_dataset
from taolink.synth import restrict_identities


def main():
    ds, store = generate(ScenarioSpec(seed=21, n_videos=3, frames_per_video=600, n_identities=5,
                                      embedding_dim=64))
    keep_a, keep_b = set(), set()
    for v in ds.videos:
        gids = sorted(g.gt_track_id for g in ds.video_ground_truth(v))
        keep_a.update(gids[:3])
        keep_b.update(gids[2:])
    a = track_dataset(restrict_identities(ds, keep_a), store)
    b = track_dataset(restrict_identities(ds, keep_b), store)
    gt = ds.ground_truth
    print(f"stream A {evaluate(a, gt).mAP:.3f}  stream B {evaluate(b, gt).mAP:.3f}")
    print(f"A + B                  {evaluate(merge_ensembles(a, b), gt).mAP:.3f}")
    print(f"A + B, dedup IoU 0.5   {evaluate(merge_ensembles(a, b, dedup_iou=0.5), gt).mAP:.3f}")

    print()
    for jitter in (0.0, 4.0, 8.0):
        noisy, st = generate(ScenarioSpec(seed=5, n_videos=2, frames_per_video=600,
                                          box_size=(40.0, 70.0), box_jitter=jitter,
                                          fp_rate=0.5, miss_rate=0.1, embedding_noise=0.2,
                                          embedding_dim=64))
        gt = noisy.ground_truth
        print(f"box jitter {jitter:3.0f}px:  oracle {evaluate(oracle_tracks(noisy), gt).mAP:.3f}  "
              f"appearance {evaluate(track_dataset(noisy, st), gt).mAP:.3f}  "
              f"SORT {evaluate(sort_track_dataset(noisy, SortConfig()), gt).mAP:.3f}")


if __name__ == "__main__":
    main()
