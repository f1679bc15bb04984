from .checkpoint import Checkpoint, load_checkpoint, load_model, save_checkpoint
from .curriculum import CurriculumSchedule, Stage, curriculum_rho, draw_rho, draw_rhos
from .losses import LossConfig, loss_graph, loss_graph_batch, loss_sim, total_loss
from .train import TrainConfig, Trainer, TrainingSet, ValidationSet, evaluate, train, validation_set

__all__ = [
    "Checkpoint", "load_checkpoint", "load_model", "save_checkpoint",
    "CurriculumSchedule", "Stage", "curriculum_rho", "draw_rho", "draw_rhos",
    "LossConfig", "loss_graph", "loss_graph_batch", "loss_sim", "total_loss",
    "TrainConfig", "Trainer", "TrainingSet", "ValidationSet", "evaluate", "train", "validation_set",
]
