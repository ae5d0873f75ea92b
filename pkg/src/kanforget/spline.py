"""Uniform B-spline basis evaluation, derivatives, and least-squares fitting.

Every univariate branch in the network is a linear combination of the
``grid_size + order`` B-spline basis functions defined here.  Knots are
uniform over ``[range_lo, range_hi]`` and extended by ``order`` extra knots
on each side, so evaluation is branch-free and inputs that drift outside
the nominal range still see a smooth (decaying) basis instead of a clamp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import SplineFitError, UsageError

__all__ = [
    "KnotGrid",
    "basis_matrix",
    "basis_derivative_matrix",
    "eval_basis",
    "eval_basis_derivative",
    "fit_coefficients",
    "spline_values",
    "refit_grid_from_samples",
]


@dataclass(frozen=True)
class KnotGrid:
    """Uniform knot layout: ``grid_size`` interior intervals of order ``order``.

    The extended knot vector has ``grid_size + 2*order + 1`` entries and
    supports ``grid_size + order`` basis functions.
    """

    range_lo: float = -1.0
    range_hi: float = 1.0
    grid_size: int = 5
    order: int = 3
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.grid_size < 1:
            raise UsageError(f"grid_size must be >= 1, got {self.grid_size}")
        if self.order < 1:
            raise UsageError(f"order must be >= 1, got {self.order}")
        if not self.range_lo < self.range_hi:
            raise UsageError(
                f"need range_lo < range_hi, got [{self.range_lo}, {self.range_hi}]"
            )
        h = (self.range_hi - self.range_lo) / self.grid_size
        idx = np.arange(-self.order, self.grid_size + self.order + 1)
        knots = self.range_lo + idx * h
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def spacing(self) -> float:
        return (self.range_hi - self.range_lo) / self.grid_size

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.order

    def grid_points(self) -> np.ndarray:
        """The ``grid_size + 1`` knots inside the nominal range."""
        return self.knots[self.order : self.order + self.grid_size + 1]


def _check_finite_points(xs: np.ndarray) -> np.ndarray:
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    if not np.all(np.isfinite(xs)):
        raise UsageError("basis evaluation requires finite inputs")
    return xs


def _cox_de_boor(grid: KnotGrid, xs: np.ndarray, degree: int) -> np.ndarray:
    """All degree-``degree`` basis functions at ``xs``, shape (len(xs), M-degree-1).

    Reference implementation: the full-width recursion over the extended
    knot vector.  Production evaluation uses the local algorithm below;
    both must agree everywhere.
    """
    t = grid.knots
    x = xs[:, None]
    b = ((t[:-1] <= x) & (x < t[1:])).astype(np.float64)
    for d in range(1, degree + 1):
        # Uniform knots: every denominator equals d * spacing, never zero.
        left = (x - t[: -(d + 1)]) / (t[d:-1] - t[: -(d + 1)])
        right = (t[d + 1 :] - x) / (t[d + 1 :] - t[1:-d])
        b = left * b[:, :-1] + right * b[:, 1:]
    return b


def _local_nonzero(grid: KnotGrid, xs: np.ndarray, degree: int):
    """Local de Boor triangle on the uniform knot lattice.

    Returns (values, first_index, inside): per point the ``degree + 1``
    possibly nonzero basis values, the knot-lattice index of the first of
    them, and a mask of points inside the extended knot span.  Indices
    refer to the full lattice and may fall outside the stored basis set
    near the extension edges; callers drop those columns.
    """
    h = grid.spacing
    u = (xs - grid.knots[0]) / h
    last = grid.knots.shape[0] - 1
    inside = (u >= 0.0) & (u < last)
    span = np.clip(np.floor(u).astype(np.int64), 0, last - 1)
    values = np.zeros((xs.shape[0], degree + 1))
    values[:, 0] = 1.0
    left = np.empty((xs.shape[0], degree + 1))
    right = np.empty((xs.shape[0], degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = u - (span + 1 - j)
        right[:, j] = (span + j) - u
        saved = np.zeros(xs.shape[0])
        for r in range(j):
            temp = values[:, r] / j  # uniform knots: denominator is j
            values[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        values[:, j] = saved
    return values, span - degree, inside


def _scatter_local(grid: KnotGrid, xs: np.ndarray, values, first, inside) -> np.ndarray:
    width = values.shape[1]
    out = np.zeros((xs.shape[0], grid.n_basis))
    rows = np.repeat(np.arange(xs.shape[0]), width)
    cols = (first[:, None] + np.arange(width)).ravel()
    keep = (
        np.repeat(inside, width)
        & (cols >= 0)
        & (cols < grid.n_basis)
    )
    out[rows[keep], cols[keep]] = values.ravel()[keep]
    return out


def basis_matrix(grid: KnotGrid, xs) -> np.ndarray:
    """Evaluate all ``grid.n_basis`` basis functions at each point.

    Returns an array of shape ``(len(xs), grid.n_basis)``.  Points inside
    the nominal range satisfy partition of unity; at most ``order + 1``
    entries per row are nonzero.
    """
    xs = _check_finite_points(xs)
    values, first, inside = _local_nonzero(grid, xs, grid.order)
    return _scatter_local(grid, xs, values, first, inside)


def basis_derivative_matrix(grid: KnotGrid, xs) -> np.ndarray:
    """First derivative of every basis function at each point.

    Uses the order-reduction identity: the derivative of a degree-k basis
    function is the scaled difference of two degree-(k-1) basis functions.
    """
    xs = _check_finite_points(xs)
    k = grid.order
    lower, first_lower, inside = _local_nonzero(grid, xs, k - 1)
    # Degree-k basis i spans local slots [first_lower - 1, first_lower + k - 1];
    # its derivative is (lower_i - lower_{i+1}) / h with lower zero-padded.
    padded = np.zeros((xs.shape[0], k + 2))
    padded[:, 1 : k + 1] = lower
    deriv = (padded[:, :-1] - padded[:, 1:]) / grid.spacing
    return _scatter_local(grid, xs, deriv, first_lower - 1, inside)


def eval_basis(grid: KnotGrid, x: float) -> np.ndarray:
    """Basis vector at a single point, shape ``(grid.n_basis,)``."""
    return basis_matrix(grid, [x])[0]


def eval_basis_derivative(grid: KnotGrid, x: float) -> np.ndarray:
    """Basis derivative vector at a single point, shape ``(grid.n_basis,)``."""
    return basis_derivative_matrix(grid, [x])[0]


def spline_values(grid: KnotGrid, coefficients: np.ndarray, xs) -> np.ndarray:
    """Evaluate the spline with the given coefficient vector at ``xs``."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != (grid.n_basis,):
        raise UsageError(
            f"expected {grid.n_basis} coefficients, got shape {coefficients.shape}"
        )
    return basis_matrix(grid, xs) @ coefficients


def fit_coefficients(grid: KnotGrid, xs, ys) -> np.ndarray:
    """Least-squares coefficients minimizing sum((spline(xs) - ys)^2).

    ``ys`` may be a vector or a ``(len(xs), m)`` matrix of target columns
    fitted against the shared design matrix.  Solves the normal equations
    with a Cholesky factorization.  A unique minimizer needs at least
    ``grid.n_basis`` well-spread points; when the normal matrix is rank
    deficient (e.g. fitting at the grid points only) a ridge of 1e-10 is
    added, which selects an interpolating solution of near-minimal norm.
    """
    xs = _check_finite_points(xs)
    ys = np.asarray(ys, dtype=np.float64)
    if ys.ndim not in (1, 2) or xs.shape[0] != ys.shape[0]:
        raise UsageError(f"xs and ys lengths differ: {xs.shape[0]} vs {ys.shape}")
    if xs.shape[0] == 0:
        raise UsageError("cannot fit coefficients to zero samples")
    if not np.all(np.isfinite(ys)):
        raise UsageError("fit targets must be finite")

    design = basis_matrix(grid, xs)
    normal = design.T @ design
    rhs = design.T @ ys
    try:
        return cho_solve(cho_factor(normal), rhs)
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-10 * max(1.0, float(normal.diagonal().max()))
    regularized = normal + ridge * np.eye(grid.n_basis)
    try:
        return cho_solve(cho_factor(regularized), rhs)
    except np.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(normal))
        raise SplineFitError(
            f"normal equations not solvable even with ridge {ridge:.1e}; "
            f"condition number {cond:.3e}"
        ) from exc


def refit_grid_from_samples(
    grid: KnotGrid,
    coefficients: np.ndarray,
    xs,
) -> tuple[KnotGrid, np.ndarray]:
    """Re-fit hook: re-span the uniform knot layout to the observed samples.

    Builds a fresh uniform grid covering the sample range and refits the
    current spline's values onto it.  Nothing in the default training
    pipeline calls this; it exists for grid-adaptation studies.
    """
    xs = np.sort(_check_finite_points(xs))
    if xs.shape[0] < 2 or xs[0] == xs[-1]:
        raise UsageError("need at least two distinct samples to re-fit a grid")
    old_values = spline_values(grid, coefficients, xs)
    new_grid = KnotGrid(
        range_lo=float(xs[0]),
        range_hi=float(xs[-1]),
        grid_size=grid.grid_size,
        order=grid.order,
    )
    return new_grid, fit_coefficients(new_grid, xs, old_values)
