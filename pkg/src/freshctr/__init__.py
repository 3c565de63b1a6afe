"""Incremental CTR training: warm-started students distilled from a daily teacher."""

from .datagen import TrendEvent, WorldConfig, WorldTruth, generate_stream, inject_event, slice_window
from .distill import KdConfig, binary_ce, kd_loss, kd_loss_grad, precompute_soft_targets, soften
from .estimator import CtrNetClassifier
from .evaluate import MetricsReport, age_bucket_report, auc, compare_regimes, log_loss
from .nn_core import (
    CtrModel,
    FieldSpec,
    ModelSpec,
    OptimizerState,
    OutOfVocabularyError,
    Vocabulary,
    apply_gradients,
    backward,
    forward,
    init_model,
    lookup_indices,
    predict,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .pipeline import DeploymentRegistry, Regime, Schedule, measure_training_cost, run_pipeline, train_student, train_teacher
from .records import Dataset, Impression
from .training import TrainConfig
from .warmstart import expand_vocabulary, scratch_start, warm_start

__version__ = "0.1.0"
