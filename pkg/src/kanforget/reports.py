"""Retention-ratio experiment procedures.

Three report families, all built on the same primitives:

* pair retention: train task i then task j from a fresh network, measure
  each task's supports on its own checkpoint, and form the ratio of
  forgetting to the maximal branch overlap;
* cumulative retention: train the full task sequence and form the ratio
  of forgetting to the summed later-task overlap per earlier task;
* dimension retention: train an image-classification sequence at varying
  quantization/resolution and form log10(forgetting) over the intrinsic
  dimension of the inputs.

Supports are always measured on each task's own checkpoint with that
task's data, on one shared bin axis per run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .ledger import ForgettingLedger
from .network import init_kan
from .support import (
    build_overlap_matrix,
    measure_supports,
    pairwise_overlap,
    support_axis,
)
from .tasks import (
    ImagePreprocessSpec,
    TaskDataset,
    build_image_tasks,
    gen_decimal_tasks,
    intrinsic_dimension,
    preprocess_images,
)
from .training import TrainConfig, train_sequence

__all__ = [
    "coefficient_of_variation",
    "PairRetentionResult",
    "run_pair_retention",
    "CumulativeRetentionResult",
    "run_cumulative_retention",
    "DimensionRetentionRow",
    "run_dimension_retention_cell",
    "RATIO_LOG_BASE",
]

RATIO_LOG_BASE = 10  # base of the log in the dimension-ratio report


def coefficient_of_variation(values) -> float:
    """Population standard deviation over the magnitude of the mean."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0 or np.any(~np.isfinite(values)):
        raise UsageError("CV needs a non-empty, finite value list")
    mean = values.mean()
    if mean == 0:
        raise UsageError("CV undefined for zero-mean values")
    return float(values.std() / abs(mean))


@dataclass
class PairRetentionResult:
    grid_size: int
    seed: int
    rows: list[dict] = field(default_factory=list)

    def ratios(self) -> list[float]:
        return [r["ratio"] for r in self.rows if r["ratio"] is not None]

    def cv(self) -> float:
        return coefficient_of_variation(self.ratios())


def run_pair_retention(
    grid_size: int,
    seed: int,
    dims: list[int] = (2, 3, 2),
    epochs: int = 100,
    learning_rate: float = 1e-3,
    weight_decay: float = 1e-4,
    threshold: float = 1e-2,
    bins: int = 400,
    batch_size: int | None = 1,
    tasks: list[TaskDataset] | None = None,
) -> PairRetentionResult:
    """Consecutive-pair runs over the decimal tasks.

    For each pair (i, i+1): fresh network, train i then i+1, measure both
    supports on a shared axis, and report forgetting over max overlap.
    Rows with an overlap below one bin width get a null ratio.
    """
    tasks = list(tasks) if tasks is not None else gen_decimal_tasks()
    cfg = TrainConfig(
        learning_rate=learning_rate,
        weight_decay=weight_decay,
        epochs_per_task=epochs,
        loss_kind="mse",
        seed=seed,
        batch_size=batch_size,
    )
    result = PairRetentionResult(grid_size=grid_size, seed=seed)
    for first, second in zip(tasks, tasks[1:]):
        net = init_kan(list(dims), grid_size=grid_size, seed=seed)
        run = train_sequence(net, [first, second], cfg)
        ckpt_i, ckpt_j = run.checkpoints
        axis = support_axis(
            [ckpt_i, ckpt_j], [first, second], pad_to=(net.grid.range_lo, net.grid.range_hi)
        )
        profile_i = measure_supports(ckpt_i, first, threshold, bins, axis=axis)
        profile_j = measure_supports(ckpt_j, second, threshold, bins, axis=axis)
        delta, _ = pairwise_overlap(profile_i, profile_j)
        forgetting = float(run.ledger.forgetting()[0])
        if delta < profile_i.bin_width:
            ratio = None
            if abs(forgetting) > 0:
                flag = "zero-overlap-with-nonzero-forgetting"
            else:
                flag = "zero-overlap"
        else:
            ratio = forgetting / delta
            flag = ""
        result.rows.append(
            {
                "task_i": first.task_index,
                "task_j": second.task_index,
                "grid": grid_size,
                "F_i": forgetting,
                "delta": delta,
                "ratio": ratio,
                "flag": flag,
            }
        )
    return result


@dataclass
class CumulativeRetentionResult:
    grid_size: int
    seed: int
    rows: list[dict] = field(default_factory=list)
    ledger: ForgettingLedger | None = None

    def ratios(self) -> list[float]:
        return [r["ratio"] for r in self.rows if r["ratio"] is not None]

    def cv(self) -> float:
        return coefficient_of_variation(self.ratios())


def run_cumulative_retention(
    grid_size: int,
    seed: int,
    dims: list[int] = (2, 3, 2),
    epochs: int = 100,
    learning_rate: float = 1e-3,
    weight_decay: float = 1e-4,
    threshold: float = 1e-2,
    bins: int = 400,
    batch_size: int | None = 1,
    tasks: list[TaskDataset] | None = None,
) -> CumulativeRetentionResult:
    """Full-sequence run: forgetting over summed later-task overlaps.

    Supports come from each task's own checkpoint; the final-task row has
    no later tasks and is omitted.
    """
    tasks = list(tasks) if tasks is not None else gen_decimal_tasks()
    cfg = TrainConfig(
        learning_rate=learning_rate,
        weight_decay=weight_decay,
        epochs_per_task=epochs,
        loss_kind="mse",
        seed=seed,
        batch_size=batch_size,
    )
    net = init_kan(list(dims), grid_size=grid_size, seed=seed)
    run = train_sequence(net, tasks, cfg)
    axis = support_axis(
        run.checkpoints, tasks, pad_to=(net.grid.range_lo, net.grid.range_hi)
    )
    profiles = [
        measure_supports(ckpt, task, threshold, bins, axis=axis)
        for ckpt, task in zip(run.checkpoints, tasks)
    ]
    overlap = build_overlap_matrix(profiles)
    forgetting = run.ledger.forgetting()
    bin_width = profiles[0].bin_width

    result = CumulativeRetentionResult(grid_size=grid_size, seed=seed, ledger=run.ledger)
    for i in range(1, len(tasks)):
        total = float(overlap.cumulative[i - 1])
        f_i = float(forgetting[i - 1])
        ratio = f_i / total if total >= bin_width else None
        result.rows.append(
            {
                "task_i": tasks[i - 1].task_index,
                "later_tasks": "+".join(str(t.task_index) for t in tasks[i:]),
                "grid": grid_size,
                "F_i": f_i,
                "sum_mu": total,
                "ratio": ratio,
            }
        )
    return result


@dataclass
class DimensionRetentionRow:
    quantize_levels: int
    shape: tuple[int, int]
    intrinsic_dim: float
    forgetting_first_task: float
    ratio: float | None  # log10(F_1) / d; None when F_1 <= 0
    seed: int


def run_dimension_retention_cell(
    images: np.ndarray,
    labels: np.ndarray,
    quantize_levels: int,
    shape: tuple[int, int],
    seed: int,
    hidden_dims: list[int] = (),
    grid_size: int = 10,
    epochs: int = 10,
    learning_rate: float = 1e-3,
    weight_decay: float = 1e-4,
    batch_size: int | None = 20,
    n_per_class: int = 100,
) -> DimensionRetentionRow:
    """One (Q, S) cell of the dimension-ratio experiment.

    Quantizes/resizes the corpus, trains the classifier through the 5-task
    class-incremental sequence, and reports log10 of first-task forgetting
    over the intrinsic dimension of the preprocessed inputs.
    """
    spec = ImagePreprocessSpec(quantize_levels, tuple(shape))
    flat = preprocess_images(images, spec)
    tasks = build_image_tasks(flat, labels, n_per_class=n_per_class, seed=seed)
    dims = [spec.pixel_count, *hidden_dims, 10]
    net = init_kan(dims, grid_size=grid_size, seed=seed)
    cfg = TrainConfig(
        learning_rate=learning_rate,
        weight_decay=weight_decay,
        epochs_per_task=epochs,
        loss_kind="cross_entropy",
        seed=seed,
        batch_size=batch_size,
        record_curves=False,  # the ratio only needs the checkpoint ledger
    )
    run = train_sequence(net, tasks, cfg)
    f_1 = float(run.ledger.forgetting()[0])
    d = intrinsic_dimension(spec)
    ratio = float(np.log10(f_1) / d) if f_1 > 0 else None
    return DimensionRetentionRow(
        quantize_levels=quantize_levels,
        shape=tuple(shape),
        intrinsic_dim=d,
        forgetting_first_task=f_1,
        ratio=ratio,
        seed=seed,
    )
