"""Spline-branch networks, sequential-task training, and forgetting analysis."""

__version__ = "0.1.0"

from .ledger import ForgettingLedger, compute_forgetting
from .network import KanNetwork, backward, forward, init_kan, init_mlp
from .spline import KnotGrid, eval_basis, eval_basis_derivative, fit_coefficients
from .support import SupportProfile, measure_supports, pairwise_overlap
from .tasks import TaskDataset, gen_binary_tasks, gen_decimal_tasks
from .training import TrainConfig, train_sequence

__all__ = [
    "__version__",
    "ForgettingLedger",
    "compute_forgetting",
    "KanNetwork",
    "backward",
    "forward",
    "init_kan",
    "init_mlp",
    "KnotGrid",
    "eval_basis",
    "eval_basis_derivative",
    "fit_coefficients",
    "SupportProfile",
    "measure_supports",
    "pairwise_overlap",
    "TaskDataset",
    "gen_binary_tasks",
    "gen_decimal_tasks",
    "TrainConfig",
    "train_sequence",
]
