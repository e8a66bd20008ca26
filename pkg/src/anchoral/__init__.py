"""Anchored pool filtering for pool-based active learning on large,
imbalanced classification datasets, with the standard baselines and an
experiment runner."""

from .anchors import AnchorSet, kmeanspp_sample, select_anchors
from .config import (ConfigError, ExperimentConfig, effective_config_dict,
                     effective_config_json, parse_config, parse_config_dict)
from .data import (Dataset, DatasetState, InfeasibleSpecError, LabelStore,
                   SyntheticSpec, build_initial_split, dataset_content_hash,
                   generate_synthetic, generate_synthetic_task, load_dataset_dir,
                   load_embeddings, load_labels, save_dataset_dir,
                   write_embeddings, write_labels)
from .filters import (AnchorALFilter, NoOpFilter, RandomSubsetFilter, SealsFilter,
                      Subpool, anchoral_filter, make_filter)
from .index import (ExactIndex, HnswIndex, IndexParams, NeighborHit, build_index,
                    cosine_similarity, exact_knn)
from .model import SoftmaxClassifier, macro_f1, per_class_f1, softmax
from .runner import (ExperimentResult, RoundRecord, Summary, aggregate_runs,
                     auc_trapezoid, budget_matched, median_iqr, read_rounds_csv,
                     run_experiment, truncate_result, write_rounds_csv)
from .strategies import (BadgeStrategy, EntropyStrategy, KMeansDiversityStrategy,
                         RandomStrategy, badge_select, entropy, entropy_select,
                         kmeans_diversity_select, make_strategy, random_select)

__version__ = "0.1.0"

__all__ = [
    "AnchorALFilter", "AnchorSet", "BadgeStrategy", "ConfigError", "Dataset",
    "DatasetState", "EntropyStrategy", "ExactIndex", "ExperimentConfig",
    "ExperimentResult", "HnswIndex", "IndexParams", "InfeasibleSpecError",
    "KMeansDiversityStrategy", "LabelStore", "NeighborHit", "NoOpFilter",
    "RandomStrategy", "RandomSubsetFilter", "RoundRecord", "SealsFilter",
    "SoftmaxClassifier", "Subpool", "Summary", "SyntheticSpec",
    "aggregate_runs", "anchoral_filter", "auc_trapezoid", "badge_select",
    "budget_matched", "build_index", "build_initial_split", "cosine_similarity",
    "dataset_content_hash", "effective_config_dict", "effective_config_json",
    "entropy", "entropy_select", "exact_knn", "generate_synthetic",
    "generate_synthetic_task", "kmeans_diversity_select", "kmeanspp_sample",
    "load_dataset_dir", "load_embeddings", "load_labels", "macro_f1",
    "make_filter", "make_strategy", "median_iqr", "parse_config",
    "parse_config_dict", "per_class_f1", "random_select", "read_rounds_csv",
    "run_experiment", "save_dataset_dir", "select_anchors", "softmax",
    "truncate_result", "write_embeddings", "write_labels", "write_rounds_csv",
]
