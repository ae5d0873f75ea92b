"""Random-support models on the unit torus.

Three quick simulations: expected overlap of two random arcs equals the
product of their lengths; unioned overlaps saturate at the base support
length; and overlap scales as a power law in radius and fragmentation.
Run: python demos/05_overlap_montecarlo.py
"""

import numpy as np

from kanforget.montecarlo import (
    McConfig,
    dimension_scaling,
    fragmentation_scaling,
    mc_expected_overlap,
    saturation_curve,
)

cfg = McConfig(trials=50_000, seed=0)

print("expected overlap of two uniformly placed arcs (analytic: s_i * s_j):")
for s_i, s_j in ((0.1, 0.2), (0.2, 0.3), (0.5, 0.5)):
    res = mc_expected_overlap(s_i, s_j, cfg)
    print(f"  s=({s_i}, {s_j}): mean {res.mean:.5f} +- {res.std_error:.5f}  "
          f"expect {res.analytic_expectation:.5f}  z={res.z_score:+.2f}")

print("\nsaturation: union of overlaps with T later arcs of length 0.3")
sat = saturation_curve(0.3, [0.3] * 20, McConfig(trials=3000, seed=1))
for t in (1, 2, 5, 10, 20):
    level = sat.mean_union[t - 1]
    closed_form = 0.3 * (1 - 0.7**t)
    bar = "#" * int(round(60 * level))
    print(f"  T={t:2d}: {level:.4f} (closed form {closed_form:.4f}) |{bar}")
print(f"  plateau onset (within 5% of final): T={sat.plateau_onset}")

print("\nradius scaling: support length r^d per task, overlap ~ r^(d_i+d_j)")
for d_i, d_j in ((1, 1), (2, 3)):
    res = dimension_scaling(d_i, d_j, [0.05, 0.1, 0.2, 0.4], cfg)
    print(f"  d=({d_i},{d_j}): fitted slope {res.fit.slope:.3f} "
          f"(expected {res.expected_slope:.0f})")

print("\nfragmentation: k pieces shrink the effective radius to r/k")
res_i, res_j = fragmentation_scaling(2, 1, 0.3, [1, 2, 4, 8], cfg)
print(f"  sweeping k_i at d_i=2: slope {res_i.fit.slope:.3f} (expected -2)")
print(f"  sweeping k_j at d_j=1: slope {res_j.fit.slope:.3f} (expected -1)")
