from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .controller import ControllerResult, EarlyStopConfig, TrainLog, controller_run
from .losses import LossConfig, LossResult, compute_loss
from .optim import Optimizer
from .trainer import AlignmentTerm, EpochStats, Trainer, TrainerConfig

__all__ = [
    "AlignmentTerm", "Checkpoint", "CheckpointError", "ControllerResult", "EarlyStopConfig",
    "EpochStats", "LossConfig", "LossResult", "Optimizer", "TrainLog", "Trainer", "TrainerConfig",
    "compute_loss", "controller_run", "load_checkpoint", "save_checkpoint",
]
