"""Losses, decoupled-weight-decay Adam, quadratic-anchor regularization, and
the sequential-task training loop.

Training is full batch by default (one optimizer step per epoch), which
keeps runs bit-reproducible from the seed alone; a batch size can be set
for larger tasks and then batch order is drawn from a seeded stream.  The
loop snapshots the network after each task and fills in the complete
checkpoint-by-task loss matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError, UsageError
from .ledger import ForgettingLedger
from .network import (
    KanNetwork,
    MlpNetwork,
    backward,
    forward,
    mlp_backward,
    mlp_forward,
)
from .tasks import TaskDataset, task_accuracy

__all__ = [
    "TrainConfig",
    "EwcConfig",
    "EwcState",
    "AdamwState",
    "mse_loss",
    "cross_entropy_loss",
    "adamw_step",
    "fisher_estimate",
    "ewc_penalty",
    "evaluate_loss",
    "SequenceResult",
    "train_sequence",
]


@dataclass(frozen=True)
class EwcConfig:
    lam: float = 0.1
    memory_tasks: int = 1  # how many preceding tasks feed the Fisher memory

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise UsageError("EWC lambda must be >= 0")
        if self.memory_tasks < 1:
            raise UsageError("EWC memory depth must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs_per_task: int = 50
    loss_kind: str = "mse"  # "mse" | "cross_entropy"
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    seed: int = 0
    batch_size: int | None = None  # None: full batch
    ewc: EwcConfig | None = None
    record_curves: bool = True  # per-epoch loss on every task
    reset_optimizer_per_task: bool = False  # default: one optimizer lifetime

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise UsageError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs_per_task < 0:
            raise UsageError("epochs_per_task must be >= 0")
        if self.loss_kind not in ("mse", "cross_entropy"):
            raise UsageError(f"unknown loss_kind {self.loss_kind!r}")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise UsageError(f"betas must lie in [0, 1), got {self.betas}")
        if self.batch_size is not None and self.batch_size < 1:
            raise UsageError("batch_size must be >= 1 when set")


@dataclass
class AdamwState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamwState":
        return cls(np.zeros(n), np.zeros(n), 0)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean over all entries of squared error; gradient 2*(pred-target)/count."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise UsageError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def cross_entropy_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax of the true class, max-shifted for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise UsageError(
            f"logits {logits.shape} and labels {labels.shape} do not pair up"
        )
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise UsageError(
            f"label out of range [0, {logits.shape[1]}): {labels.min()}..{labels.max()}"
        )
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(batch), labels]))
    softmax = np.exp(shifted - log_z[:, None])
    grad = softmax
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch


def adamw_step(
    state: AdamwState, params: np.ndarray, grads: np.ndarray, cfg: TrainConfig
) -> np.ndarray:
    """One decoupled-weight-decay step; mutates ``state``, returns new params.

    Decay is applied first (params * (1 - lr*wd)), then the bias-corrected
    moment update.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.ndim != 1:
        raise UsageError("params and grads must be equal-length vectors")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise TrainingError(f"non-finite gradient at flat index {bad[0]}")

    beta1, beta2 = cfg.betas
    state.step_count += 1
    state.first_moment = beta1 * state.first_moment + (1 - beta1) * grads
    state.second_moment = beta2 * state.second_moment + (1 - beta2) * grads**2
    m_hat = state.first_moment / (1 - beta1**state.step_count)
    v_hat = state.second_moment / (1 - beta2**state.step_count)
    decayed = params * (1.0 - cfg.learning_rate * cfg.weight_decay)
    return decayed - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def _net_forward(net, batch):
    if isinstance(net, KanNetwork):
        return forward(net, batch)
    if isinstance(net, MlpNetwork):
        return mlp_forward(net, batch)
    raise UsageError(f"unsupported network type {type(net).__name__}")


def _net_backward_flat(net, trace, output_grad) -> np.ndarray:
    if isinstance(net, KanNetwork):
        return backward(net, trace, output_grad).flatten()
    return mlp_backward(net, trace, output_grad).flatten()


def _loss_fn(loss_kind: str):
    return mse_loss if loss_kind == "mse" else cross_entropy_loss


def evaluate_loss(net, task: TaskDataset, loss_kind: str) -> tuple[float, np.ndarray]:
    """Plain data loss of the network on one task (no regularizers)."""
    trace = _net_forward(net, task.inputs)
    loss, _ = _loss_fn(loss_kind)(trace.output, task.targets)
    return loss, trace.output


@dataclass
class EwcState:
    fisher_diag: np.ndarray
    anchor_params: np.ndarray
    memory: list[TaskDataset] = field(default_factory=list)

    def __post_init__(self) -> None:
        if np.any(self.fisher_diag < 0):
            raise UsageError("fisher_diag must be entrywise >= 0")
        if self.fisher_diag.shape != self.anchor_params.shape:
            raise UsageError("fisher_diag and anchor_params shapes differ")


def fisher_estimate(net, memory: list[TaskDataset], loss_kind: str) -> np.ndarray:
    """Diagonal curvature proxy: mean over memory samples of squared
    per-sample loss gradients."""
    if not memory:
        raise UsageError("fisher estimate needs a non-empty memory")
    total = np.zeros(net.n_parameters)
    count = 0
    fn = _loss_fn(loss_kind)
    for task in memory:
        for row in range(task.n_samples):
            inputs = task.inputs[row : row + 1]
            targets = np.asarray(task.targets)[row : row + 1]
            trace = _net_forward(net, inputs)
            _, output_grad = fn(trace.output, targets)
            flat = _net_backward_flat(net, trace, output_grad)
            total += flat**2
            count += 1
    return total / count


def ewc_penalty(
    params: np.ndarray, state: EwcState, lam: float
) -> tuple[float, np.ndarray]:
    """(lam/2) * sum fisher * (params - anchor)^2 and its gradient."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != state.anchor_params.shape:
        raise UsageError("params shape does not match EWC anchor")
    delta = params - state.anchor_params
    value = 0.5 * lam * float(np.sum(state.fisher_diag * delta**2))
    return value, lam * state.fisher_diag * delta


@dataclass
class SequenceResult:
    checkpoints: list  # deep snapshots, one per task
    ledger: ForgettingLedger
    initial_losses: np.ndarray  # [T]: losses of the untrained network
    epoch_losses: np.ndarray  # [total_epochs, T]: per-epoch loss on every task
    epoch_task: np.ndarray  # [total_epochs]: task index being trained
    final_net: object


def train_sequence(net, tasks: list[TaskDataset], cfg: TrainConfig) -> SequenceResult:
    """Train through the task list, snapshotting after each task.

    The incoming network is not mutated.  By default one optimizer state
    lives through the whole sequence (its second-moment memory damps
    updates to coordinates earlier tasks trained); set
    ``reset_optimizer_per_task`` to start each task from fresh moments.
    Every epoch records the current loss on all tasks, which yields the
    loss-vs-epoch curves for the whole sequence.
    """
    if not tasks:
        raise UsageError("task list is empty")
    expected = net.dims[0]
    for task in tasks:
        if task.inputs.shape[1] != expected:
            raise UsageError(
                f"task {task.task_index} has {task.inputs.shape[1]} input columns, "
                f"network expects {expected}"
            )

    work = net.copy()
    n_tasks = len(tasks)
    loss_fn = _loss_fn(cfg.loss_kind)
    initial_losses = np.array(
        [evaluate_loss(work, t, cfg.loss_kind)[0] for t in tasks]
    )
    loss_matrix = np.full((n_tasks, n_tasks), np.nan)
    acc_matrix = np.full((n_tasks, n_tasks), np.nan)
    checkpoints = []
    epoch_losses = []
    epoch_task = []
    ewc_state: EwcState | None = None
    opt = AdamwState.zeros(work.n_parameters)

    for pos, task in enumerate(tasks):
        if cfg.reset_optimizer_per_task:
            opt = AdamwState.zeros(work.n_parameters)
        batch_rng = np.random.default_rng([cfg.seed, pos])
        for epoch in range(cfg.epochs_per_task):
            if cfg.batch_size is None:
                slices = [np.arange(task.n_samples)]
            else:
                order = batch_rng.permutation(task.n_samples)
                slices = [
                    order[i : i + cfg.batch_size]
                    for i in range(0, task.n_samples, cfg.batch_size)
                ]
            for chosen in slices:
                inputs = task.inputs[chosen]
                targets = np.asarray(task.targets)[chosen]
                trace = _net_forward(work, inputs)
                loss, output_grad = loss_fn(trace.output, targets)
                grads = _net_backward_flat(work, trace, output_grad)
                if cfg.ewc is not None and ewc_state is not None:
                    pen, pen_grad = ewc_penalty(work.flatten(), ewc_state, cfg.ewc.lam)
                    loss += pen
                    grads += pen_grad
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at task {task.task_index}, epoch {epoch}"
                    )
                work.load_flat(adamw_step(opt, work.flatten(), grads, cfg))
            if cfg.record_curves:
                epoch_losses.append(
                    [evaluate_loss(work, t, cfg.loss_kind)[0] for t in tasks]
                )
                epoch_task.append(task.task_index)

        snapshot = work.copy()
        checkpoints.append(snapshot)
        for i, other in enumerate(tasks):
            loss_i, outputs = evaluate_loss(snapshot, other, cfg.loss_kind)
            loss_matrix[pos, i] = loss_i
            try:
                acc_matrix[pos, i] = task_accuracy(other, outputs)
            except UsageError:
                pass  # kinds without a decoding rule keep NaN accuracy

        if cfg.ewc is not None:
            memory = tasks[max(0, pos + 1 - cfg.ewc.memory_tasks) : pos + 1]
            ewc_state = EwcState(
                fisher_diag=fisher_estimate(work, memory, cfg.loss_kind),
                anchor_params=work.flatten(),
                memory=list(memory),
            )

    return SequenceResult(
        checkpoints=checkpoints,
        ledger=ForgettingLedger(loss_matrix, acc_matrix),
        initial_losses=initial_losses,
        epoch_losses=np.asarray(epoch_losses, dtype=np.float64).reshape(
            -1, n_tasks
        ),
        epoch_task=np.asarray(epoch_task, dtype=np.int64),
        final_net=work,
    )
