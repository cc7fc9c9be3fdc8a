"""Multimodal emotion label pipeline: encoders + attention fusion over
pre-extracted feature streams, k-fold evaluation, multi-source label
refinement with a human-review loop, and variant ensembling.

The HTTP review service lives in ecmf.service (imported lazily so the
numeric core does not depend on the web stack).
"""

from __future__ import annotations

from .dataset import (
    Dataset,
    EmotionLabel,
    FeatureStream,
    LABELS,
    MODALITIES,
    Modality,
    NUM_CLASSES,
    Sample,
    StreamSchema,
    StreamSpec,
    default_schema,
    infer_schema,
    ingest,
    load_labels,
    save_labels,
    synth_clean_labels,
    synth_generate,
    write_manifest,
)
from .ensemble import (
    TrainedVariant,
    VariantSpec,
    ensemble_metrics,
    ensemble_predict,
    ensemble_predict_many,
    make_variants,
    random_ablation_subsets,
    train_variants,
)
from .errors import EcmfError, RuntimeFailure, ValidationFailure
from .fusion import (
    FusionModel,
    ModelConfig,
    forward,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .metrics import MetricsReport, compute_metrics, confusion_matrix, format_waf, weighted_f_score
from .preprocess import FoldSplit, NormStats, apply_norm, fit_norm, make_folds
from .refinement import (
    LabelSource,
    ReviewDecision,
    SourceVote,
    VoteRecord,
    append_review,
    apply_decisions,
    apply_review,
    decide,
    export_labels,
    load_external_source,
    load_vote_records,
    refine,
    refined_labels,
    replay_log,
    review_stats,
    save_label_source,
    save_vote_records,
    train_weak_classifier,
)
from .training import CvReport, TrainConfig, TrainedModel, TrainReport, evaluate, run_cv, train_one

__version__ = "0.1.0"
