"""Monte Carlo models of random branch supports on the unit torus.

Supports are arcs of given length placed uniformly on [0, 1) with
wrap-around.  The engine estimates expected pairwise overlap (analytic
value: the product of lengths), the saturation of unioned overlaps, and
power-law scaling of overlap against support radius and fragmentation.

Streams are counter-based (Philox) and derived from (seed, path...), so
trial blocks can be processed in any order or on any worker; block sums
are combined with exact compensated summation, making results independent
of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, UsageError

__all__ = [
    "McConfig",
    "McOverlapResult",
    "SaturationResult",
    "PowerLawFit",
    "ScalingResult",
    "torus_overlap",
    "mc_expected_overlap",
    "saturation_curve",
    "fit_power_law",
    "dimension_scaling",
    "fragmentation_scaling",
]

_BLOCK = 1 << 16


@dataclass(frozen=True)
class McConfig:
    trials: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise UsageError("trials must be >= 1")


def _stream(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, *path))))


def _blocks(trials: int):
    start = 0
    index = 0
    while start < trials:
        yield index, min(_BLOCK, trials - start)
        start += _BLOCK
        index += 1


def _check_length(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise UsageError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


def torus_overlap(interval_a: tuple[float, float], interval_b: tuple[float, float]) -> float:
    """Exact intersection measure of two arcs (start, length) on [0, 1).

    Starts are taken modulo 1; the intersection can consist of up to two
    arcs when one interval wraps.
    """
    start_a, len_a = interval_a
    start_b, len_b = interval_b
    _check_length("interval_a length", len_a)
    _check_length("interval_b length", len_b)
    g = (float(start_b) - float(start_a)) % 1.0
    return float(_overlap_from_gap(np.array([g]), len_a, len_b)[0])


def _overlap_from_gap(g: np.ndarray, len_a: float, len_b: float) -> np.ndarray:
    """Overlap of [0, len_a) with [g, g + len_b) mod 1, vectorized over g."""
    end = g + len_b
    direct = np.clip(np.minimum(end, len_a) - g, 0.0, None)
    wrapped = np.clip(np.minimum(end - 1.0, len_a), 0.0, None)
    return direct + wrapped


@dataclass(frozen=True)
class McOverlapResult:
    mean: float
    std_error: float
    trials: int
    analytic_expectation: float

    @property
    def z_score(self) -> float:
        if self.std_error == 0.0:
            return 0.0
        return (self.mean - self.analytic_expectation) / self.std_error


def _mc_overlap_sums(
    len_i: float, len_j: float, cfg: McConfig, path: tuple[int, ...]
) -> tuple[float, float]:
    """Compensated (sum, sum of squares) over all trials."""
    block_sums: list[float] = []
    block_sq_sums: list[float] = []
    for index, count in _blocks(cfg.trials):
        rng = _stream(cfg.seed, *path, index)
        g = rng.random(count)  # relative placement of arc j vs arc i
        values = _overlap_from_gap(g, len_i, len_j)
        if values.min() < -1e-15 or values.max() > min(len_i, len_j) + 1e-12:
            raise ConsistencyError("sampled overlap left [0, min(lengths)]")
        block_sums.append(math.fsum(values))
        block_sq_sums.append(math.fsum(values**2))
    return math.fsum(block_sums), math.fsum(block_sq_sums)


def mc_expected_overlap(
    length_i: float, length_j: float, cfg: McConfig, _path: tuple[int, ...] = ()
) -> McOverlapResult:
    """Mean overlap of two independently placed arcs, with standard error.

    The analytic expectation is length_i * length_j.
    """
    len_i = _check_length("length_i", length_i)
    len_j = _check_length("length_j", length_j)
    total, total_sq = _mc_overlap_sums(len_i, len_j, cfg, _path)
    n = cfg.trials
    mean = total / n
    if n > 1:
        variance = max(0.0, (total_sq - total * total / n) / (n - 1))
        std_error = math.sqrt(variance / n)
    else:
        std_error = 0.0
    return McOverlapResult(mean, std_error, n, len_i * len_j)


def _merge_measure(segments: list[tuple[float, float]]) -> float:
    if not segments:
        return 0.0
    segments = sorted(segments)
    total = 0.0
    cur_lo, cur_hi = segments[0]
    for lo, hi in segments[1:]:
        if lo > cur_hi:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    return total + (cur_hi - cur_lo)


def _arc_segments_in_base(g: float, length: float, base_length: float):
    """Segments of [g, g+length) mod 1 intersected with [0, base_length)."""
    segs = []
    hi = min(g + length, 1.0, base_length)
    if hi > g:
        segs.append((g, hi))
    wrap = g + length - 1.0
    if wrap > 0:
        segs.append((0.0, min(wrap, base_length)))
    return segs


@dataclass(frozen=True)
class SaturationResult:
    task_counts: np.ndarray  # 1..T
    mean_union: np.ndarray  # per task count, mean union-of-overlaps measure
    std_errors: np.ndarray
    bound_slack: np.ndarray  # base support length minus mean union
    plateau_onset: int  # first T within tolerance of the final level
    trials: int


_SATURATION_PATH = 7001  # stream namespace, keeps estimators independent


def saturation_curve(
    length_i: float,
    later_lengths,
    cfg: McConfig,
    plateau_tol: float = 0.05,
) -> SaturationResult:
    """Mean union-of-overlaps measure as later tasks accumulate.

    For each trial all arcs are placed once; the union of the base arc's
    overlaps is measured for every prefix of the later-task list.  The
    union can never exceed the base support length (checked per trial).
    """
    len_i = _check_length("length_i", length_i)
    later = [_check_length(f"later_lengths[{k}]", v) for k, v in enumerate(later_lengths)]
    if not later:
        raise UsageError("need at least one later support length")

    t_count = len(later)
    sums = np.zeros(t_count)
    sq_sums = np.zeros(t_count)
    for index, count in _blocks(cfg.trials):
        rng = _stream(cfg.seed, _SATURATION_PATH, index)
        gaps = rng.random((count, t_count))
        block = np.zeros((count, t_count))
        for trial in range(count):
            segments: list[tuple[float, float]] = []
            for t in range(t_count):
                segments.extend(_arc_segments_in_base(gaps[trial, t], later[t], len_i))
                measure = _merge_measure(segments)
                if measure > len_i + 1e-12:
                    raise ConsistencyError(
                        f"union measure {measure} exceeds base support {len_i}"
                    )
                block[trial, t] = measure
        sums += np.array([math.fsum(block[:, t]) for t in range(t_count)])
        sq_sums += np.array([math.fsum(block[:, t] ** 2) for t in range(t_count)])

    n = cfg.trials
    mean_union = sums / n
    if n > 1:
        variance = np.maximum(0.0, (sq_sums - sums**2 / n) / (n - 1))
        std_errors = np.sqrt(variance / n)
    else:
        std_errors = np.zeros(t_count)
    final = mean_union[-1]
    onset = t_count
    for t in range(t_count):
        if mean_union[t] >= (1.0 - plateau_tol) * final:
            onset = t + 1
            break
    return SaturationResult(
        task_counts=np.arange(1, t_count + 1),
        mean_union=mean_union,
        std_errors=std_errors,
        bound_slack=len_i - mean_union,
        plateau_onset=onset,
        trials=cfg.trials,
    )


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    slope_stderr: float
    residuals: np.ndarray


def fit_power_law(x, y) -> PowerLawFit:
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise UsageError("need two equal-length 1-D arrays with >= 2 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise UsageError("power-law fit needs strictly positive data")
    lx, ly = np.log(x), np.log(y)
    design = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    residuals = ly - design @ coef
    dof = x.size - 2
    if dof > 0:
        sigma2 = float(residuals @ residuals) / dof
        sxx = float(np.sum((lx - lx.mean()) ** 2))
        slope_stderr = math.sqrt(sigma2 / sxx) if sxx > 0 else float("inf")
    else:
        slope_stderr = 0.0
    return PowerLawFit(slope, intercept, slope_stderr, residuals)


@dataclass(frozen=True)
class ScalingResult:
    sweep: np.ndarray
    means: np.ndarray
    std_errors: np.ndarray
    fit: PowerLawFit
    expected_slope: float


def dimension_scaling(d_i: int, d_j: int, r_sweep, cfg: McConfig) -> ScalingResult:
    """Fitted exponent of mean overlap against support radius.

    The projected model gives each task's support length r**d on the
    torus, so the expected overlap is r**(d_i + d_j) and the fitted
    log-log slope recovers d_i + d_j.
    """
    if d_i < 1 or d_j < 1:
        raise UsageError("intrinsic dimensions must be >= 1")
    r_values = np.asarray(sorted(r_sweep), dtype=np.float64)
    if r_values.size < 4:
        raise UsageError("r sweep needs at least 4 points")
    if np.any((r_values <= 0) | (r_values >= 1)):
        raise UsageError("r values must lie in (0, 1)")
    means, std_errors = [], []
    for idx, r in enumerate(r_values):
        res = mc_expected_overlap(r**d_i, r**d_j, cfg, _path=(idx,))
        means.append(res.mean)
        std_errors.append(res.std_error)
    fit = fit_power_law(r_values, np.asarray(means))
    return ScalingResult(
        r_values, np.asarray(means), np.asarray(std_errors), fit, float(d_i + d_j)
    )


def fragmentation_scaling(
    d_i: int, d_j: int, r: float, k_sweep, cfg: McConfig
) -> tuple[ScalingResult, ScalingResult]:
    """Fitted exponents of mean overlap against fragmentation counts.

    Splitting a support into k pieces shrinks its effective length to
    (r/k)**d, one uniformly placed fragment being active per trial, so
    sweeping k_i at fixed k_j = 1 has expected slope -d_i (and likewise
    for k_j).  Returns the (k_i sweep, k_j sweep) results.
    """
    if d_i < 1 or d_j < 1:
        raise UsageError("intrinsic dimensions must be >= 1")
    if not 0 < r < 1:
        raise UsageError("r must lie in (0, 1)")
    k_values = np.asarray(sorted(k_sweep), dtype=np.float64)
    if k_values.size < 2:
        raise UsageError("k sweep needs at least 2 points")
    if np.any(k_values < 1):
        raise UsageError("k values must be >= 1")

    results = []
    for axis, (exp_i, exp_j, slope) in enumerate(
        [(True, False, -float(d_i)), (False, True, -float(d_j))]
    ):
        means, std_errors = [], []
        for idx, k in enumerate(k_values):
            len_i = (r / k) ** d_i if exp_i else r**d_i
            len_j = (r / k) ** d_j if exp_j else r**d_j
            res = mc_expected_overlap(len_i, len_j, cfg, _path=(axis, idx))
            means.append(res.mean)
            std_errors.append(res.std_error)
        fit = fit_power_law(k_values, np.asarray(means))
        results.append(
            ScalingResult(k_values, np.asarray(means), np.asarray(std_errors), fit, slope)
        )
    return results[0], results[1]
