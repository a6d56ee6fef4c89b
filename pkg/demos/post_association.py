"""Re-linking fragments after a long occlusion.

Every identity disappears for five keyframes.  The online tracker retires
tracks after ``max_age`` missed frames, so each identity comes out as two
tracklets, neither long enough to match its ground truth.  Post association
compares tracklet mean embeddings and glues the halves back together.

    python3 demos/post_association.py
"""
from taolink import AssocConfig, PaConfig, ScenarioSpec, evaluate, generate, post_associate, track_dataset
from taolink.synth import Gap, fragment_tracks


def main():
    spec = ScenarioSpec(seed=1, n_videos=2, frames_per_video=900, n_identities=4,
                        embedding_noise=0.2, fp_rate=0.2, embedding_dim=64)
    ds, store = generate(spec)
    ds = fragment_tracks(ds, [Gap(v, 12, 17) for v in ds.videos])
    tracks = track_dataset(ds, store, AssocConfig(max_age=2))
    print(f"online tracker: {len(tracks):3d} tracks, mAP {evaluate(tracks, ds.ground_truth).mAP:.3f}")
    for tau in (0.05, 0.1, 0.2, 0.3, 0.5):
        merged = post_associate(tracks, PaConfig(similarity_threshold=tau))
        print(f"PA tau={tau:<4}:    {len(merged):3d} tracks, mAP {evaluate(merged, ds.ground_truth).mAP:.3f}")


if __name__ == "__main__":
    main()
