"""Contrastive information transfer from a ranking teacher to a
pre-ranking student, with a multi-stage cascade simulator, synthetic
click-log generator, and ranking-metric suite."""

from .cascade import CascadeConfig, CascadeResult, evaluate_cascade, run_cascade
from .data import (
    Candidate,
    GenConfig,
    Request,
    generate_corpus,
    generate_requests,
    load_dataset,
    partition_dataset,
    sample_negatives,
    save_dataset,
)
from .errors import (
    CascadeCitError,
    ConfigError,
    ContractError,
    DataError,
    InputError,
    NumericError,
    ShapeError,
)
from .labeling import LabelSet, TrainingPolicy, click_labels, make_policy, teacher_top_u_labels
from .losses import (
    CitBatch,
    LossBundle,
    cit_loss,
    combined_loss,
    cross_entropy,
    kd_loss,
    mi_lower_bound_estimate,
    pairwise_loss,
)
from .metrics import MetricsReport, RankedList, auc, gauc, gauc_report, ndcg_at_k, recall_at_u
from .models import (
    ModelConfig,
    ModelParams,
    build_model,
    forward,
    forward_frozen,
    load_checkpoint,
    save_checkpoint,
    score_candidates,
    validate_pair,
    vector_product_forward,
)
from .rng import Rng
from .tensor import AdamState, DenseMatrix, adam_step, dense_backward, dense_forward, finite_diff_check, matmul
from .trainer import Checkpoint, TrainConfig, evaluate_model, train_student, train_teacher

__version__ = "0.1.0"
