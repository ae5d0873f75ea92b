"""A tour of the spline substrate: knot grids, basis functions, fitting.

Every branch in the network is silu(z) * w plus a spline in the basis
shown here.  Run: python demos/01_spline_branches.py
"""

import numpy as np

from kanforget.spline import (
    KnotGrid,
    basis_matrix,
    eval_basis,
    fit_coefficients,
    spline_values,
)

grid = KnotGrid(range_lo=-1.0, range_hi=1.0, grid_size=5, order=3)
print(f"grid: {grid.grid_size} intervals, order {grid.order}")
print(f"extended knots ({grid.knots.size}): {np.round(grid.knots, 2)}")
print(f"basis functions: {grid.n_basis}")

print("\nbasis vector at a few points (rows sum to 1 inside the range):")
for x in (-1.0, -0.33, 0.0, 0.7, 1.2):
    values = eval_basis(grid, x)
    print(f"  x={x:+.2f}  sum={values.sum():.12f}  "
          f"nonzero={np.count_nonzero(values)}  {np.round(values, 3)}")

print("\nleast-squares fit of sin(pi x) on 50 samples:")
xs = np.linspace(-1, 1, 50)
coeffs = fit_coefficients(grid, xs, np.sin(np.pi * xs))
probe = np.linspace(-1, 1, 9)
fitted = spline_values(grid, coeffs, probe)
for x, f in zip(probe, fitted):
    bar = "#" * int(round(20 * (f + 1)))
    print(f"  x={x:+.2f}  spline={f:+.4f}  sin={np.sin(np.pi * x):+.4f}  |{bar}")

residual = np.max(np.abs(spline_values(grid, coeffs, xs) - np.sin(np.pi * xs)))
print(f"max residual on the sample set: {residual:.2e}")

print("\nlocal support: a basis column is nonzero on order+1 intervals only")
dense = np.linspace(-1, 1, 2001)
matrix = basis_matrix(grid, dense)
for m in range(grid.n_basis):
    active = dense[np.abs(matrix[:, m]) > 0]
    if active.size:
        print(f"  basis {m}: active on [{active.min():+.2f}, {active.max():+.2f}]")
