"""Sequential binary addition: five tasks, one network, almost no forgetting.

Reproduces the headline retention result: after training tasks 1..5 in
order, the loss on every earlier task stays within a hair of the loss it
had right after its own training, and most of the later tasks are already
learned during task 1.  Run: python demos/02_binary_addition_retention.py
"""

import numpy as np

from kanforget.network import init_kan
from kanforget.tasks import gen_binary_tasks
from kanforget.training import TrainConfig, train_sequence

tasks = gen_binary_tasks()
print("tasks: fixed-operand binary addition, 18 pairs each, unrolled to")
print(f"       {tasks[0].n_samples} (bit_a, bit_b, carry_in) -> (sum, carry) rows")

net = init_kan([3, 2, 2], grid_size=5, order=3, seed=0)
cfg = TrainConfig(
    learning_rate=1e-3,
    weight_decay=1e-4,
    epochs_per_task=50,
    loss_kind="mse",
    batch_size=4,
    seed=0,
)
result = train_sequence(net, tasks, cfg)

print("\nloss on every task, before training and at each checkpoint:")
header = "            " + "".join(f"  task {i + 1}  " for i in range(5))
print(header)
print("  initial   " + "".join(f"{v:9.2e} " for v in result.initial_losses))
for t in range(5):
    row = "".join(f"{v:9.2e} " for v in result.ledger.loss[t])
    print(f"  after T{t + 1}  {row}")

forgetting = result.ledger.forgetting()
print(f"\nforgetting per task: {[f'{v:+.2e}' for v in forgetting]}")
print(f"max forgetting: {np.max(forgetting):.2e}")

end_of_task1 = result.epoch_losses[result.epoch_task == 1][-1]
print("\ntransfer during task 1 (initial loss over loss after task 1):")
for i in range(1, 5):
    drop = result.initial_losses[i] / end_of_task1[i]
    print(f"  task {i + 1}: {result.initial_losses[i]:.3f} -> "
          f"{end_of_task1[i]:.2e}  ({drop:,.0f}x)")

print("\nbit accuracy at the final checkpoint (threshold 0.5):")
print("  " + "  ".join(f"task{i + 1}={a:.0%}" for i, a in
                       enumerate(result.ledger.accuracy[-1])))
