"""Appearance-only multi-object tracking with tracklet post-association,
ensemble mixing and track-mAP evaluation."""

__version__ = "0.1.0"

from .assign import GATE, cosine_distance, iou, solve_assignment
from .assoc import AssocConfig, associate_frame, gallery_distance, track_dataset, track_video
from .errors import TaoLinkError
from .eval import EvalReport, evaluate, oracle_tracks, track_iou
from .ingest import load_dataset, read_results, write_dataset, write_results
from .model import (
    BoundingBox,
    Detection,
    EmbeddingStore,
    GroundTruthTrack,
    Member,
    SequenceDataset,
    Track,
    Video,
    normalize,
    track_mean_embedding,
)
from .postproc import (
    PaConfig,
    concat_embeddings,
    filter_categories,
    merge_ensembles,
    post_associate,
)
from .sortbase import SortConfig, kf_predict, kf_update, sort_track_dataset, sort_track_video
from .synth import Gap, ScenarioSpec, fragment_tracks, generate
