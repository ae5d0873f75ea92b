"""Activation supports and overlap: the quantities behind the bounds.

Trains task 1 then task 2 of the decimal sequence, measures each task's
per-branch activation supports on its own checkpoint, and reports the
overlap table, the max overlap, and the forgetting-to-overlap ratio.
Run: python demos/04_support_overlap.py
"""

import numpy as np

from kanforget.network import init_kan
from kanforget.support import measure_supports, pairwise_overlap, support_axis
from kanforget.tasks import gen_decimal_tasks
from kanforget.training import TrainConfig, train_sequence

task_a, task_b = gen_decimal_tasks()[:2]
net = init_kan([2, 3, 2], grid_size=10, order=3, seed=0)
cfg = TrainConfig(epochs_per_task=100, batch_size=1, seed=0, record_curves=False)
result = train_sequence(net, [task_a, task_b], cfg)
ckpt_a, ckpt_b = result.checkpoints

axis = support_axis([ckpt_a, ckpt_b], [task_a, task_b], pad_to=(-1.0, 1.0))
profile_a = measure_supports(ckpt_a, task_a, threshold=1e-2, bins=400, axis=axis)
profile_b = measure_supports(ckpt_b, task_b, threshold=1e-2, bins=400, axis=axis)
print(f"shared support axis [{axis[0]:.2f}, {axis[1]:.2f}], "
      f"bin width {profile_a.bin_width:.4f}, threshold 1e-2")

print("\nper-branch support measure (task 1 on its own checkpoint):")
for layer_idx, table in enumerate(profile_a.branch_measures()):
    print(f"  layer {layer_idx}:")
    for q in range(table.shape[0]):
        row = "  ".join(f"{table[q, p]:.3f}" for p in range(table.shape[1]))
        print(f"    out {q}: {row}")

delta, per_branch = pairwise_overlap(profile_a, profile_b)
print("\nper-branch overlap with task 2's supports:")
for layer_idx, table in enumerate(per_branch):
    print(f"  layer {layer_idx}:")
    for q in range(table.shape[0]):
        row = "  ".join(f"{table[q, p]:.3f}" for p in range(table.shape[1]))
        print(f"    out {q}: {row}")
print(f"\nmax branch overlap: {delta:.4f}")

forgetting = result.ledger.forgetting()[0]
print(f"forgetting on task 1 after task 2: {forgetting:+.4f}")
if delta >= profile_a.bin_width:
    print(f"forgetting / overlap ratio: {forgetting / delta:.3f}")
