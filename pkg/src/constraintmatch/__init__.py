"""Semi-constrained clustering: pairwise-constraint training with soft
pseudo-constraints mined from informative predictions over unconstrained data.
"""

from .data import (AugmentationPolicy, ConstraintPair, Dataset, NoiseConfig,
                   augment, default_policy, dense_constraints, flip_constraints,
                   load_constraints, load_dataset, make_blobs,
                   sample_constraints, save_constraints, save_dataset)
from .evaluation import (Contingency, EvalReport, aggregate_folds, evaluate,
                         hungarian)
from .experiments import (ExperimentSpec, ablation_suite, build_splits,
                          grid_select, run, suite_spec)
from .losses import PairBatch, alignment, combined_loss, cross_entropy_loss, mcl_loss
from .network import (ClusterHead, OptimizerState, init_optimizer,
                      load_checkpoint, predict_labels, save_checkpoint, sgd_step)
from .pseudo import (PseudoConstraint, SelectionConfig, harden, jsd,
                     make_pseudo_constraints, mode_flip, normalized_entropy,
                     select)
from .training import (TrainConfig, TrainTrace, TrainingDiverged,
                       apply_pseudo_noise, train, train_naive_pl,
                       validation_constraint_loss)

__version__ = "0.1.0"

__all__ = [
    "AugmentationPolicy", "ClusterHead", "ConstraintPair", "Contingency",
    "Dataset", "EvalReport", "ExperimentSpec", "NoiseConfig", "OptimizerState",
    "PairBatch", "PseudoConstraint", "SelectionConfig", "TrainConfig",
    "TrainTrace", "TrainingDiverged", "ablation_suite", "aggregate_folds",
    "alignment", "apply_pseudo_noise", "augment", "build_splits",
    "combined_loss", "cross_entropy_loss", "default_policy",
    "dense_constraints", "evaluate", "flip_constraints", "grid_select",
    "harden", "hungarian", "init_optimizer", "jsd", "load_checkpoint",
    "load_constraints", "load_dataset", "make_blobs", "make_pseudo_constraints",
    "mcl_loss", "mode_flip", "normalized_entropy", "predict_labels", "run",
    "sample_constraints", "save_checkpoint", "save_constraints", "save_dataset",
    "select", "sgd_step", "suite_spec", "train", "train_naive_pl",
    "validation_constraint_loss",
]
