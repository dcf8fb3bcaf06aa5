from .grid_search import DEFAULT_LATTICE, GridSearchResult, search_weights, validation_map_score
from .loop import (
    EmptyDatasetError,
    PreparedFrame,
    TrainConfig,
    TrainResult,
    compute_task_losses,
    prepare_frames,
    save_training_checkpoint,
    train,
    write_curve_csv,
)
from .losses import TASKS, ce_loss, focal_loss, l1_loss, mtl_loss_adaptive, mtl_loss_fixed
from .optim import AdamState, StepSchedule, adam_step
from .targets import anchor_statistics, assign_anchor_targets, assign_point_targets
from .weights import MODES, LossWeighting

__all__ = [
    "DEFAULT_LATTICE",
    "EmptyDatasetError",
    "GridSearchResult",
    "LossWeighting",
    "MODES",
    "PreparedFrame",
    "AdamState",
    "StepSchedule",
    "TASKS",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "anchor_statistics",
    "assign_anchor_targets",
    "assign_point_targets",
    "ce_loss",
    "compute_task_losses",
    "focal_loss",
    "l1_loss",
    "mtl_loss_adaptive",
    "mtl_loss_fixed",
    "prepare_frames",
    "save_training_checkpoint",
    "search_weights",
    "train",
    "validation_map_score",
    "write_curve_csv",
]
