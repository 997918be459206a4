"""Probabilistic dynamics ensembles and their uncertainty signal.

Each member predicts a Gaussian over the state change; the ensemble's
uncertainty is the largest member's predicted-std norm. In-distribution it
hugs the data's noise floor, far outside the clip boxes it blows up, which is
what keeps branch rollouts honest.
"""

import numpy as np
import torch

from redaug.data import OfflineDataset
from redaug.dynamics import branch_rollout, fit_dynamics, fit_reward, uncertainty
from redaug.advpolicy import RandomPolicy
from redaug.envs import TaskSpec, make_env

# quick interior dataset from a waypoint controller
spec = TaskSpec(family="point_mass_2d", gravity_scale=0.5, damping_scale=0.0, seed=9)
env = make_env(spec)
rng = np.random.default_rng(0)
rows = {"s": [], "a": [], "r": [], "s2": [], "d": []}
for ep in range(30):
    obs = env.reset(seed=100 + ep)
    target = rng.uniform(-3, 3, 2)
    for t in range(100):
        if t % 25 == 0:
            target = rng.uniform(-3, 3, 2)
        a = np.clip(target - obs[:2] - 0.8 * obs[2:], -1, 1)
        res = env.step(a)
        for key, val in zip("s a r s2 d".split(),
                            (obs, a.astype(np.float32), res.reward,
                             res.next_observation, res.done)):
            rows[key].append(val)
        obs = res.next_observation
dataset = OfflineDataset(
    task_id=0, spec=spec,
    states=np.array(rows["s"], np.float32), actions=np.array(rows["a"], np.float32),
    rewards=np.array(rows["r"], np.float32), next_states=np.array(rows["s2"], np.float32),
    dones=np.array(rows["d"], bool),
    checkpoint_ids=np.zeros(3000, np.uint32), checkpoint_split={0: "train"})

print("fitting a 3-member ensemble...")
ensemble = fit_dynamics(dataset, m=3, epochs=60, seed=0)
ensemble.reward_model = fit_reward([dataset], epochs=30, seed=0)
print("holdout NLL per member:", np.round(ensemble.holdout_nll, 2))

idx = np.arange(0, 3000, 10)
s, a = torch.as_tensor(dataset.states[idx]), torch.as_tensor(dataset.actions[idx])
with torch.no_grad():
    err = (ensemble.members[0].predict_mean(s, a)
           - torch.as_tensor(dataset.next_states[idx])).abs().mean(0)
print("one-step abs error per dimension:", np.round(err.numpy(), 5))

u_in = uncertainty(ensemble, dataset.states[idx], dataset.actions[idx])
far = rng.uniform(-8, 8, (200, 4)).astype(np.float32)
far[:, 2:] *= 1.8
u_out = uncertainty(ensemble, far, rng.uniform(-1, 1, (200, 2)).astype(np.float32))
print(f"median uncertainty: in-distribution {np.median(u_in):.4f}, "
      f"far outside the boxes {np.median(u_out):.4f}")

transitions = branch_rollout([ensemble], RandomPolicy(2), dataset.states,
                             horizon=5, batch=4, seed=1)
print(f"\nbranch rollout: {len(transitions)} model transitions "
      f"(4 start states x 5 steps), rewards from the learned reward model")
print("first transition reward %.3f, uncertainty %.5f"
      % (transitions[0].reward, transitions[0].uncertainty))
