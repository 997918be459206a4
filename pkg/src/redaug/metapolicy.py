"""Offline meta-policy learning: SAC with a behavior-cloning penalty,
conditioned on task embeddings from a frozen context encoder."""

import json
import os

import numpy as np
import torch

from .encoder import valid_window_starts
from .errors import ConfigurationError, UsageError
from .sac import SACLearner
from .seeding import derive_seed, seed_torch


class MetaPolicy:
    """Actor/critics over (state ++ task embedding); the embedding is a
    constant input, never a gradient path into the encoder."""

    def __init__(self, state_dim, action_dim, z_dim, hidden=(256, 256),
                 lr=3e-4, gamma=0.99, bc_weight=2.5):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.z_dim = z_dim
        self.bc_weight = bc_weight
        self.hidden = tuple(hidden)
        self.learner = SACLearner(state_dim + z_dim, action_dim, hidden=hidden,
                                  lr=lr, gamma=gamma, bc_weight=bc_weight)

    def act(self, state, z, deterministic=False, seed=None):
        state = np.asarray(state, dtype=np.float32).reshape(-1)
        z = np.asarray(z, dtype=np.float32).reshape(-1)
        if state.shape[0] != self.state_dim or z.shape[0] != self.z_dim:
            raise UsageError(
                f"expected state dim {self.state_dim} and embedding dim {self.z_dim}, "
                f"got {state.shape[0]} and {z.shape[0]}")
        if seed is not None:
            torch.manual_seed(derive_seed(seed, "meta-act"))
        return self.learner.act(np.concatenate([state, z]), deterministic=deterministic)

    def save(self, path):
        os.makedirs(path, exist_ok=True)
        torch.save(self.learner.state_dict(), os.path.join(path, "policy.pt"))
        cfg = {"state_dim": self.state_dim, "action_dim": self.action_dim,
               "z_dim": self.z_dim, "hidden": list(self.hidden),
               "bc_weight": self.bc_weight}
        with open(os.path.join(path, "config.json"), "w") as fh:
            json.dump(cfg, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(os.path.join(path, "config.json")) as fh:
            cfg = json.load(fh)
        policy = cls(cfg["state_dim"], cfg["action_dim"], cfg["z_dim"],
                     hidden=tuple(cfg["hidden"]), bc_weight=cfg["bc_weight"])
        policy.learner.load_state_dict(
            torch.load(os.path.join(path, "policy.pt"), weights_only=True))
        return policy


def _window_tensors(dataset, starts, length):
    """Vectorized full-length window batch (states, actions, mask, query)."""
    idx = starts[:, None] + np.arange(length)[None, :]
    states = torch.as_tensor(dataset.states[idx])
    actions = torch.as_tensor(dataset.actions[idx])
    mask = torch.ones(len(starts), length, dtype=torch.bool)
    q_s = torch.as_tensor(dataset.next_states[starts + length - 1])
    q_a = torch.as_tensor(dataset.actions[starts + length - 1])
    return states, actions, mask, q_s, q_a


def train_meta_policy(datasets, encoder, epochs=20, steps_per_epoch=1000, *,
                      window_length=32, bc_weight=2.5, batch_size=256,
                      hidden=(256, 256), lr=3e-4, gamma=0.99, seed=0,
                      progress_hook=None) -> MetaPolicy:
    """SAC+BC on the offline datasets with embeddings from the frozen encoder.

    Each batch slot draws (task, transition, context window) with the window
    taken from the same task's train split; embeddings are computed without
    gradients so the encoder cannot move.
    """
    if not datasets:
        raise ConfigurationError("no datasets")
    seed_torch(seed, "meta-policy")
    rng = np.random.default_rng(derive_seed(seed, "meta-policy-np"))

    s_dim = datasets[0].states.shape[1]
    a_dim = datasets[0].actions.shape[1]
    policy = MetaPolicy(s_dim, a_dim, encoder.z_dim, hidden=hidden, lr=lr,
                        gamma=gamma, bc_weight=bc_weight)

    encoder.eval()
    per_task = []
    for ds in datasets:
        train_idx = ds.train_indices
        starts = valid_window_starts(ds, "train", window_length)
        if len(train_idx) == 0 or len(starts) == 0:
            raise ConfigurationError(
                f"task {ds.task_id} lacks train transitions or windows")
        per_task.append((ds, train_idx, starts))

    n_tasks = len(per_task)
    for epoch in range(epochs):
        for _ in range(steps_per_epoch):
            counts = np.bincount(rng.integers(0, n_tasks, size=batch_size),
                                 minlength=n_tasks)
            obs_parts, act_parts, rew_parts, next_parts, bc_parts = [], [], [], [], []
            for (ds, train_idx, starts), count in zip(per_task, counts):
                if count == 0:
                    continue
                rows = train_idx[rng.integers(0, len(train_idx), size=count)]
                w_starts = starts[rng.integers(0, len(starts), size=count)]
                with torch.no_grad():
                    z = encoder(*_window_tensors(ds, w_starts, window_length))
                s = torch.as_tensor(ds.states[rows])
                s2 = torch.as_tensor(ds.next_states[rows])
                obs_parts.append(torch.cat([s, z], dim=-1))
                next_parts.append(torch.cat([s2, z], dim=-1))
                act_parts.append(torch.as_tensor(ds.actions[rows]))
                rew_parts.append(torch.as_tensor(ds.rewards[rows]))
                bc_parts.append(torch.as_tensor(ds.actions[rows]))
            batch = {
                "obs": torch.cat(obs_parts),
                "action": torch.cat(act_parts),
                "reward": torch.cat(rew_parts),
                "next_obs": torch.cat(next_parts),
                # horizon ends are time limits: bootstrap through them
                "done": torch.zeros(batch_size),
            }
            policy.learner.update(batch, bc_actions=torch.cat(bc_parts))
        if progress_hook:
            progress_hook(epoch)
    return policy
