"""Style-content disentanglement toolkit for precomputed embeddings."""

from .alignment import (
    AlignmentHead,
    TrainConfig,
    alignment_loss,
    load_head,
    loss_gradient,
    save_head,
    train_alignment,
)
from .decoupler import (
    StyleVectors,
    confidence_alpha,
    decouple_batch,
    fuse,
    normalize,
    project_rows,
    project_style,
)
from .evaluation import (
    MetricsReport,
    RelevanceSpec,
    adjusted_rand_index,
    average_precision_at_k,
    clustering_accuracy,
    evaluate_retrieval,
    kmeans,
    recall_at_k,
    spearman_rho,
    style_score,
)
from .pipeline import RunConfig, load_config, run_ablation, run_pipeline
from .retrieval import RankedList, RetrievalIndex, batch_retrieve, build_index, query_topk
from .store import (
    EmbeddingSet,
    FeatureRole,
    JoinedTable,
    ManifestRecord,
    align_sets,
    load_embedding_set,
    load_manifest,
    write_embedding_set,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentHead",
    "EmbeddingSet",
    "FeatureRole",
    "JoinedTable",
    "ManifestRecord",
    "MetricsReport",
    "RankedList",
    "RelevanceSpec",
    "RetrievalIndex",
    "RunConfig",
    "StyleVectors",
    "TrainConfig",
    "adjusted_rand_index",
    "alignment_loss",
    "align_sets",
    "average_precision_at_k",
    "batch_retrieve",
    "build_index",
    "clustering_accuracy",
    "confidence_alpha",
    "decouple_batch",
    "evaluate_retrieval",
    "fuse",
    "kmeans",
    "load_config",
    "load_embedding_set",
    "load_head",
    "load_manifest",
    "loss_gradient",
    "normalize",
    "project_rows",
    "project_style",
    "query_topk",
    "recall_at_k",
    "run_ablation",
    "run_pipeline",
    "save_head",
    "spearman_rho",
    "style_score",
    "train_alignment",
    "write_embedding_set",
]
