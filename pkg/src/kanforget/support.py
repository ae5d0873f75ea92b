"""Activation-support measurement and overlap algebra.

A branch's support for a task is the set of pre-activation values on which
the branch's output magnitude exceeds a threshold, restricted to values
actually visited by that task's data.  Supports are discretized onto a
shared axis of equal-width bins, which makes every measure an exact count
times the bin width and keeps intersection/union algebra exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, UsageError
from .network import KanNetwork, forward
from .tasks import TaskDataset

__all__ = [
    "SupportProfile",
    "measure_supports",
    "support_axis",
    "pairwise_overlap",
    "cumulative_overlap",
    "union_overlap",
    "OverlapMatrix",
    "build_overlap_matrix",
]

DEFAULT_THRESHOLD = 1e-2
DEFAULT_BINS = 400


@dataclass
class SupportProfile:
    """Per-branch boolean bin masks over a shared pre-activation axis.

    ``masks[layer]`` has shape ``[out_dim, in_dim, bins]``; bin k covers
    ``[axis_lo + k*w, axis_lo + (k+1)*w)`` with ``w = bin_width``.
    """

    axis_lo: float
    axis_hi: float
    threshold: float
    masks: list[np.ndarray]

    def __post_init__(self) -> None:
        if not self.axis_lo < self.axis_hi:
            raise UsageError("support axis must have positive length")
        if self.threshold <= 0:
            raise UsageError("threshold must be > 0")
        if not self.masks:
            raise UsageError("profile needs at least one layer mask")
        bins = self.masks[0].shape[-1]
        for m in self.masks:
            if m.ndim != 3 or m.dtype != bool or m.shape[-1] != bins:
                raise UsageError("masks must be boolean [out, in, bins] arrays")

    @property
    def bins(self) -> int:
        return self.masks[0].shape[-1]

    @property
    def bin_width(self) -> float:
        return (self.axis_hi - self.axis_lo) / self.bins

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return [m.shape[:2] for m in self.masks]

    def branch_measures(self) -> list[np.ndarray]:
        """Per layer, the [out, in] matrix of support measures."""
        return [m.sum(axis=-1) * self.bin_width for m in self.masks]

    def max_branch_measure(self) -> float:
        return max(float(m.max()) for m in self.branch_measures())

    def same_axis(self, other: "SupportProfile") -> bool:
        return (
            self.axis_lo == other.axis_lo
            and self.axis_hi == other.axis_hi
            and self.bins == other.bins
            and self.layer_shapes == other.layer_shapes
        )

    @classmethod
    def from_intervals(
        cls,
        layer_shapes: list[tuple[int, int]],
        intervals: dict,
        axis: tuple[float, float] = (-1.0, 1.0),
        bins: int = DEFAULT_BINS,
        threshold: float = DEFAULT_THRESHOLD,
    ) -> "SupportProfile":
        """Synthetic profile: a bin is active when its center lies in one of
        the branch's ``intervals[(layer, q, p)] = [(lo, hi), ...]``."""
        lo, hi = axis
        centers = lo + (np.arange(bins) + 0.5) * (hi - lo) / bins
        masks = []
        for layer, (out_dim, in_dim) in enumerate(layer_shapes):
            mask = np.zeros((out_dim, in_dim, bins), dtype=bool)
            for q in range(out_dim):
                for p in range(in_dim):
                    for a, b in intervals.get((layer, q, p), []):
                        mask[q, p] |= (centers >= a) & (centers <= b)
            masks.append(mask)
        return cls(lo, hi, threshold, masks)


def support_axis(nets, tasks, pad_to: tuple[float, float]) -> tuple[float, float]:
    """Common axis covering every pre-activation of every (net, task) pair,
    padded to at least ``pad_to`` (normally the knot range)."""
    lo, hi = pad_to
    for net, task in zip(nets, tasks):
        trace = forward(net, task.inputs)
        for pre in trace.pre_activations:
            lo = min(lo, float(pre.min()))
            hi = max(hi, float(pre.max()))
    return lo, hi


def measure_supports(
    net: KanNetwork,
    task: TaskDataset,
    threshold: float = DEFAULT_THRESHOLD,
    bins: int = DEFAULT_BINS,
    axis: tuple[float, float] | None = None,
) -> SupportProfile:
    """Discretized activation supports of every branch under one task.

    A bin turns on when a task sample's pre-activation lands in it and the
    branch output at that sample exceeds ``threshold`` in magnitude.  The
    default axis spans the observed pre-activation range padded to the
    knot range; pass ``axis`` explicitly to compare profiles across
    networks or tasks.
    """
    if task.n_samples == 0:
        raise UsageError("cannot measure supports of an empty task")
    if bins < 10:
        raise UsageError("bins must be >= 10")
    if threshold <= 0:
        raise UsageError("threshold must be > 0")

    trace = forward(net, task.inputs, record_branches=True)
    observed_lo = min(float(p.min()) for p in trace.pre_activations)
    observed_hi = max(float(p.max()) for p in trace.pre_activations)
    grid = net.grid
    if axis is None:
        lo = min(observed_lo, grid.range_lo)
        hi = max(observed_hi, grid.range_hi)
    else:
        lo, hi = axis
        if observed_lo < lo or observed_hi > hi:
            raise UsageError(
                f"axis [{lo}, {hi}] does not cover observed pre-activations "
                f"[{observed_lo}, {observed_hi}]"
            )
    width = (hi - lo) / bins

    masks = []
    for layer_idx, (layer, pre) in enumerate(zip(net.layers, trace.pre_activations)):
        hot = np.abs(trace.branch_outputs[layer_idx]) > threshold  # [batch, out, in]
        idx = ((pre - lo) / width).astype(np.int64)
        idx = np.clip(idx, 0, bins - 1)
        mask = np.zeros((layer.out_dim, layer.in_dim, bins), dtype=bool)
        b_hot, q_hot, p_hot = np.nonzero(hot)
        flat = (q_hot * layer.in_dim + p_hot) * bins + idx[b_hot, p_hot]
        mask.reshape(-1)[flat] = True
        masks.append(mask)
    return SupportProfile(lo, hi, threshold, masks)


def _require_same_axis(a: SupportProfile, b: SupportProfile) -> None:
    if not a.same_axis(b):
        raise UsageError("profiles must share bin axis and branch shapes")


def pairwise_overlap(
    a: SupportProfile, b: SupportProfile
) -> tuple[float, list[np.ndarray]]:
    """Max-over-branches intersection measure plus the per-branch table."""
    _require_same_axis(a, b)
    per_branch = [
        (ma & mb).sum(axis=-1) * a.bin_width for ma, mb in zip(a.masks, b.masks)
    ]
    delta = max(float(t.max()) for t in per_branch)
    return delta, per_branch


def cumulative_overlap(
    profiles: list[SupportProfile], i: int
) -> tuple[float, list[np.ndarray]]:
    """Sum over later tasks of per-branch intersection measures with task i.

    ``i`` is a 1-based position in the profile sequence; returns the total
    over branches and later tasks plus the per-branch sums.
    """
    if not 1 <= i < len(profiles):
        raise UsageError(f"need 1 <= i < {len(profiles)}, got {i}")
    base = profiles[i - 1]
    per_branch = [np.zeros(shape) for shape in base.layer_shapes]
    for later in profiles[i:]:
        _, table = pairwise_overlap(base, later)
        for acc, t in zip(per_branch, table):
            acc += t
    total = float(sum(t.sum() for t in per_branch))
    return total, per_branch


def union_overlap(
    profiles: list[SupportProfile], i: int
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-branch measure of the union of task i's overlaps with later tasks.

    Verifies, exactly in bin counts, that each branch's union measure is
    bounded by min(sum of max-overlaps, the branch's own support measure);
    a violation signals a measurement bug.  Returns the per-branch union
    measures and the per-branch pass flags (all True when no error raised).
    """
    if not 1 <= i < len(profiles):
        raise UsageError(f"need 1 <= i < {len(profiles)}, got {i}")
    base = profiles[i - 1]
    for later in profiles[i:]:
        _require_same_axis(base, later)

    delta_count_sum = 0
    union_masks = [np.zeros_like(m) for m in base.masks]
    for later in profiles[i:]:
        inter_counts = []
        for layer_idx, (mb, ml) in enumerate(zip(base.masks, later.masks)):
            inter = mb & ml
            union_masks[layer_idx] |= inter
            inter_counts.append(inter.sum(axis=-1))
        delta_count_sum += max(int(c.max()) for c in inter_counts)

    measures = []
    flags = []
    for um, bm in zip(union_masks, base.masks):
        union_counts = um.sum(axis=-1)
        own_counts = bm.sum(axis=-1)
        ok = _check_union_bound(union_counts, delta_count_sum, own_counts)
        measures.append(union_counts * base.bin_width)
        flags.append(ok)
    return measures, flags


def _check_union_bound(
    union_counts: np.ndarray, delta_count_sum: int, own_counts: np.ndarray
) -> np.ndarray:
    """Exact bin-count check of union <= min(sum of deltas, own support)."""
    ok = union_counts <= np.minimum(delta_count_sum, own_counts)
    if not np.all(ok):
        bad = np.argwhere(~ok)[0]
        raise ConsistencyError(
            f"union bound violated at branch (q={bad[0]}, p={bad[1]}): "
            f"{union_counts[tuple(bad)]} bins > "
            f"min({delta_count_sum}, {own_counts[tuple(bad)]})"
        )
    return ok


@dataclass
class OverlapMatrix:
    """Pairwise max-overlaps and cumulative totals for a profile sequence."""

    delta: np.ndarray  # [T, T]; delta[i, j] = max-branch overlap of tasks i+1, j+1
    cumulative: np.ndarray  # [T]; entry i: total later-task overlap of task i+1

    @property
    def task_count(self) -> int:
        return self.delta.shape[0]


def build_overlap_matrix(profiles: list[SupportProfile]) -> OverlapMatrix:
    n = len(profiles)
    delta = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            delta[i, j], _ = pairwise_overlap(profiles[i], profiles[j])
            delta[j, i] = delta[i, j]
    cumulative = np.zeros(n)
    for i in range(1, n):
        cumulative[i - 1], _ = cumulative_overlap(profiles, i)
    return OverlapMatrix(delta, cumulative)
