"""Loss bookkeeping across sequential-training checkpoints.

The ledger holds the full matrix loss[t, i] = loss of the checkpoint taken
after task t, evaluated on task i's data.  Retention loss on task i is the
difference between the final checkpoint's row and the diagonal entry.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

__all__ = ["ForgettingLedger", "compute_forgetting", "ledger_to_csv"]


@dataclass
class ForgettingLedger:
    loss: np.ndarray  # [T, T]; loss[t-1, i-1] = L(checkpoint t, task i)
    accuracy: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.loss = np.asarray(self.loss, dtype=np.float64)
        if self.loss.ndim != 2 or self.loss.shape[0] != self.loss.shape[1]:
            raise UsageError(f"ledger loss matrix must be square, got {self.loss.shape}")
        if self.accuracy is None:
            self.accuracy = np.full_like(self.loss, np.nan)
        else:
            self.accuracy = np.asarray(self.accuracy, dtype=np.float64)
            if self.accuracy.shape != self.loss.shape:
                raise UsageError("accuracy matrix shape must match loss matrix")

    @property
    def task_count(self) -> int:
        return self.loss.shape[0]

    def is_complete(self) -> bool:
        return bool(np.all(np.isfinite(self.loss)))

    def forgetting(self) -> np.ndarray:
        return compute_forgetting(self)


def compute_forgetting(ledger: ForgettingLedger) -> np.ndarray:
    """Per-task loss increase between each task's own checkpoint and the last.

    Entry i-1 is loss[T, i] - loss[i, i].
    """
    if not ledger.is_complete():
        raise UsageError("ledger is incomplete: non-finite loss entries present")
    final_row = ledger.loss[-1]
    diagonal = np.diagonal(ledger.loss)
    return final_row - diagonal


def ledger_to_csv(ledger: ForgettingLedger, path) -> None:
    """Columns: checkpoint_t, task_i, loss, accuracy."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["checkpoint_t", "task_i", "loss", "accuracy"])
        for t in range(ledger.task_count):
            for i in range(ledger.task_count):
                acc = ledger.accuracy[t, i]
                writer.writerow(
                    [
                        t + 1,
                        i + 1,
                        f"{ledger.loss[t, i]:.17g}",
                        "" if np.isnan(acc) else f"{acc:.17g}",
                    ]
                )
