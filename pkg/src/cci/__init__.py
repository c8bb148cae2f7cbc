"""Cluster-based concept importance for contrastive vision-language encoders.

A numpy inference stack for ViT image encoders with per-cluster attention
attenuation, K-means concept grouping of patch embeddings, similarity-drop
importance maps, a deletion/insertion faithfulness harness, a
foreground/background error taxonomy, and geometric variant generation.
"""

from .cluster import ClusterSet, cluster_masks, kmeans
from .diagnose import ErrorRecord, FgMask, aggregate_taxonomy, binarize_heatmap, classify, iou, load_fg_mask
from .encoder import ClusterMask, EncodedImage, TokenSequence, VitEncoder, encode, patch_tokens
from .faithfulness import (
    FaithfulnessCurve,
    StepSchedule,
    ZeroShotResult,
    dataset_curves,
    deletion_curve,
    insertion_curve,
    retrieval_curve,
    zero_shot,
)
from .importance import (
    ImportanceMap,
    ImportanceScore,
    compute_cci,
    cosine,
    render_overlay,
    upsample,
)
from .judge import HttpJudge, HttpJudgeConfig, JudgeError, OfflineJudge
from .model_io import (
    ModelBundle,
    ModelFormatError,
    TextEmbeddingBank,
    ViTConfig,
    load_model,
    load_text_bank,
    new_random_bundle,
    preprocess,
    save_model,
    save_text_bank,
)
from .transforms import TransformSpec, apply, make_subset, regenerate

__version__ = "0.1.0"

__all__ = [
    "ClusterMask",
    "ClusterSet",
    "EncodedImage",
    "ErrorRecord",
    "FaithfulnessCurve",
    "FgMask",
    "HttpJudge",
    "HttpJudgeConfig",
    "ImportanceMap",
    "ImportanceScore",
    "JudgeError",
    "ModelBundle",
    "ModelFormatError",
    "OfflineJudge",
    "StepSchedule",
    "TextEmbeddingBank",
    "TokenSequence",
    "TransformSpec",
    "ViTConfig",
    "VitEncoder",
    "ZeroShotResult",
    "aggregate_taxonomy",
    "apply",
    "binarize_heatmap",
    "classify",
    "cluster_masks",
    "compute_cci",
    "cosine",
    "dataset_curves",
    "deletion_curve",
    "encode",
    "insertion_curve",
    "iou",
    "kmeans",
    "load_fg_mask",
    "load_model",
    "load_text_bank",
    "make_subset",
    "new_random_bundle",
    "patch_tokens",
    "preprocess",
    "regenerate",
    "render_overlay",
    "retrieval_curve",
    "save_model",
    "save_text_bank",
    "upsample",
    "zero_shot",
]
