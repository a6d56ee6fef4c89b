"""Why link on appearance when objects move far between annotated frames.

At one keyframe per second a fast object jumps more than its own width, so
the boxes of consecutive keyframes barely overlap and an IoU-gated Kalman
tracker (SORT) starts a new track almost every frame.  Run on every video
frame, SORT is fine again.  Embeddings do not care how far the object moved.

    python3 demos/motion_vs_appearance.py
"""
from taolink import (AssocConfig, ScenarioSpec, SortConfig, evaluate, generate, oracle_tracks,
                     sort_track_dataset, track_dataset)
from taolink.sortbase import project_tracks


def main():
    for speed in ((0.1, 0.3), (1.0, 2.0), (4.0, 6.0)):
        spec = ScenarioSpec(seed=3, n_videos=3, frames_per_video=600, n_identities=5,
                            box_size=(40.0, 80.0), speed=speed, embedding_noise=0.15,
                            miss_rate=0.1, fp_rate=0.3, box_jitter=2.0, embedding_dim=128)
        keys, store = generate(spec)
        full, _ = generate(ScenarioSpec(**{**spec.to_dict(), "full_rate": True}))

        appearance = evaluate(track_dataset(keys, store, AssocConfig()), keys.ground_truth).mAP
        sort_keys = evaluate(sort_track_dataset(keys, SortConfig()), keys.ground_truth).mAP
        # SORT on every frame, then read its tracks back on the keyframes; it
        # may coast for 30 frames, the same one second max_age=1 gives at 1 fps
        sort_full = evaluate(project_tracks(sort_track_dataset(full, SortConfig(max_age=30)),
                                            full, keys), keys.ground_truth).mAP
        oracle = evaluate(oracle_tracks(keys), keys.ground_truth).mAP
        px = spec.keyframe_stride * speed[1]
        print(f"speed up to {px:5.0f} px/keyframe:  appearance {appearance:.3f}  "
              f"SORT@1fps {sort_keys:.3f}  SORT@30fps {sort_full:.3f}  oracle {oracle:.3f}")


if __name__ == "__main__":
    main()
