"""Two-stream joint matching for few-shot action recognition on frame-feature sequences."""

from .bgm import PerfectMatching, km_loss, km_loss_grad, km_match, video_similarity_km
from .episodic import (
    Episode,
    EvalConfig,
    EvalReport,
    FusionWeights,
    class_prototype_scores,
    classify,
    evaluate,
    fuse_scores,
    sample_episode,
)
from .featurestore import (
    FeatureSequence,
    FeatureStore,
    Modality,
    SynthConfig,
    VideoRecord,
    gen_synthetic,
    load_store,
    save_store,
)
from .mcl import AdapterParams, Adapters, adapter_backward, adapter_forward, infonce_grad, infonce_loss
from .otm import AlignmentPath, dtw, ota_loss, ota_loss_grad, video_distance_ota
from .simkernels import cosine, cross_attention_similarity, frame_distance_matrix, frame_similarity_matrix
from .trainer import TrainConfig, retrieval_probe, train

__version__ = "0.1.0"
