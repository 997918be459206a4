"""Building restricted-coverage offline datasets.

A behavior policy trains online on each task and leaves a trail of
checkpoints; only 1, 3, or 5 of them collect the training data, so the
dataset carries a strong policy footprint. Held-out checkpoints fill the test
pool used by the off-policy evaluation protocol.
"""

import numpy as np

from redaug.data import (collect_dataset, load_dataset, save_dataset,
                         select_checkpoints, train_behavior_policy)
from redaug.envs import TaskSpec

spec = TaskSpec(family="point_mass_2d", gravity_scale=1.0, seed=3)
print("training the behavior policy (a couple of minutes on CPU)...")
records = train_behavior_policy(spec, total_steps=6000, checkpoint_interval=300,
                                seed=0)
returns = [r.eval_return for r in records]
print(f"{len(records)} checkpoints; returns head {np.round(returns[:4], 1)} "
      f"... tail {np.round(returns[-4:], 1)}")

for n in (1, 3, 5):
    picked = select_checkpoints(records, n)
    print(f"n={n}: checkpoint ids {[r.checkpoint_id for r in picked]}")

selected = select_checkpoints(records, 3)
dataset = collect_dataset(spec, records, selected, budget=3000,
                          test_pool_size=600, seed=1)
print(f"\ndataset: {len(dataset)} transitions, "
      f"{len(dataset.train_indices)} train / {len(dataset.test_indices)} test")
print("train checkpoint ids:",
      sorted(set(dataset.checkpoint_ids[dataset.train_indices].tolist())))
print("test checkpoint ids:",
      sorted(set(dataset.checkpoint_ids[dataset.test_indices].tolist())))

save_dataset(dataset, "/tmp/redaug_demo_dataset")
back = load_dataset("/tmp/redaug_demo_dataset")
print("round trip lossless:", bool(np.array_equal(back.states, dataset.states)))
