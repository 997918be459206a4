"""Per-task probabilistic dynamics ensembles and the shared reward model.

Each member is a feed-forward Gaussian over the state *delta* with input and
target normalization; the ensemble's aleatoric uncertainty is the largest
member's predicted-std norm. Branch rollouts start from states drawn out of
the joint offline dataset and step short horizons inside one ensemble.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, DivergenceError
from .seeding import derive_seed, seed_torch

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0


def _soft_clamp(x, low, high):
    """Differentiable clamp: squeezes x into (low, high) with softplus edges."""
    x = high - F.softplus(high - x)
    return low + F.softplus(x - low)


class GaussianDynamicsModel(nn.Module):
    """(state, action) -> Gaussian over the state delta.

    Inputs and targets are z-scored with dataset statistics held in buffers.
    The log-std head is squeezed between learnable per-dimension bounds that
    are themselves confined to [-10, 2]; training tightens the lower bound to
    the in-distribution noise floor, so out-of-distribution queries cannot
    report less noise than the data ever showed.
    """

    def __init__(self, state_dim, action_dim, hidden=(200, 200, 200)):
        super().__init__()
        sizes = [state_dim + action_dim, *hidden, 2 * state_dim]
        layers = []
        for i in range(len(sizes) - 1):
            layers.append(nn.Linear(sizes[i], sizes[i + 1]))
            if i < len(sizes) - 2:
                layers.append(nn.SiLU())
        self.body = nn.Sequential(*layers)
        self.state_dim = state_dim
        self.max_logstd = nn.Parameter(torch.full((state_dim,), 0.5))
        self.min_logstd = nn.Parameter(torch.full((state_dim,), -5.0))
        self.register_buffer("in_mean", torch.zeros(state_dim + action_dim))
        self.register_buffer("in_std", torch.ones(state_dim + action_dim))
        self.register_buffer("out_mean", torch.zeros(state_dim))
        self.register_buffer("out_std", torch.ones(state_dim))

    def set_normalization(self, in_mean, in_std, out_mean, out_std):
        self.in_mean.copy_(torch.as_tensor(in_mean, dtype=self.in_mean.dtype))
        self.in_std.copy_(torch.as_tensor(in_std, dtype=self.in_std.dtype).clamp_min(1e-6))
        self.out_mean.copy_(torch.as_tensor(out_mean, dtype=self.out_mean.dtype))
        self.out_std.copy_(torch.as_tensor(out_std, dtype=self.out_std.dtype).clamp_min(1e-6))

    def normalize_in(self, states, actions):
        x = torch.cat([states, actions], dim=-1)
        return (x - self.in_mean) / self.in_std

    def normalize_out(self, delta):
        return (delta - self.out_mean) / self.out_std

    def denormalize_out(self, delta_norm):
        return delta_norm * self.out_std + self.out_mean

    def forward(self, states, actions):
        """Normalized-space (mean, log_std) of the state delta.

        The log-std is a learnable floor plus a smooth magnitude of the raw
        head output, soft-capped at the learnable ceiling: predicted noise can
        only grow as the head extrapolates away from the data manifold, never
        dive below the noise level the data supported.
        """
        out = self.body(self.normalize_in(states, actions))
        mean, raw = out.chunk(2, dim=-1)
        pre = self.min_logstd + (torch.sqrt(raw * raw + 1.0) - 1.0)
        log_std = self.max_logstd - F.softplus(self.max_logstd - pre)
        return mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)

    def clamp_logstd_bounds(self):
        """Keep the learnable bounds ordered and inside the documented range."""
        with torch.no_grad():
            self.max_logstd.clamp_(LOG_STD_MIN, LOG_STD_MAX)
            self.min_logstd.clamp_(LOG_STD_MIN, LOG_STD_MAX)
            self.min_logstd.clamp_(max=self.max_logstd - 1e-3)

    def bound_penalty(self):
        """Keeps the learnable log-std bounds tight around the data."""
        return 0.01 * (self.max_logstd.sum() - self.min_logstd.sum())

    def delta_mean(self, states, actions):
        mean, _ = self(states, actions)
        return self.denormalize_out(mean)

    def predict_mean(self, states, actions):
        return states + self.delta_mean(states, actions)

    def predict_std(self, states, actions):
        """Per-dimension std of the next state in raw units."""
        _, log_std = self(states, actions)
        return log_std.exp() * self.out_std

    def sample_next(self, states, actions, noise=None):
        mean, log_std = self(states, actions)
        if noise is None:
            noise = torch.randn_like(mean)
        delta = self.denormalize_out(mean + log_std.exp() * noise)
        return states + delta


def gaussian_nll(model, states, actions, next_states):
    """Mean negative log-likelihood of the observed deltas (normalized space)."""
    target = model.normalize_out(next_states - states)
    mean, log_std = model(states, actions)
    inv_var = torch.exp(-2.0 * log_std)
    nll = 0.5 * ((target - mean) ** 2 * inv_var + 2.0 * log_std
                 + torch.log(torch.tensor(2.0 * torch.pi, dtype=states.dtype)))
    return nll.sum(-1).mean()


class RewardModel(nn.Module):
    """(state, action) -> reward, shared across every task of a family."""

    def __init__(self, state_dim, action_dim, hidden=(200, 200, 200)):
        super().__init__()
        sizes = [state_dim + action_dim, *hidden, 1]
        layers = []
        for i in range(len(sizes) - 1):
            layers.append(nn.Linear(sizes[i], sizes[i + 1]))
            if i < len(sizes) - 2:
                layers.append(nn.SiLU())
        self.body = nn.Sequential(*layers)
        self.register_buffer("in_mean", torch.zeros(state_dim + action_dim))
        self.register_buffer("in_std", torch.ones(state_dim + action_dim))
        self.register_buffer("r_mean", torch.zeros(1))
        self.register_buffer("r_std", torch.ones(1))

    def forward(self, states, actions):
        x = torch.cat([states, actions], dim=-1)
        x = (x - self.in_mean) / self.in_std
        return (self.body(x) * self.r_std + self.r_mean).squeeze(-1)


@dataclass
class DynamicsEnsemble:
    task_id: int
    members: list
    reward_model: RewardModel
    holdout_nll: list

    def __post_init__(self):
        if len(self.members) < 1:
            raise ConfigurationError("ensemble needs at least one member")


@dataclass
class ModelTransition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    uncertainty: float
    task_id: int


@dataclass
class ModelRollout:
    """One branch rollout: h steps inside a single task's ensemble."""

    task_id: int
    states: np.ndarray       # (h+1, s_dim)
    actions: np.ndarray      # (h, a_dim)
    rewards: np.ndarray      # (h,)
    uncertainties: np.ndarray  # (h,)

    def transitions(self):
        return [ModelTransition(
            state=self.states[t], action=self.actions[t],
            reward=float(self.rewards[t]), next_state=self.states[t + 1],
            uncertainty=float(self.uncertainties[t]), task_id=self.task_id)
            for t in range(len(self.actions))]


def _holdout_mask(n):
    """Stable 90/10 split keyed on the record index."""
    idx = np.arange(n, dtype=np.uint64)
    return ((idx * np.uint64(2654435761)) % np.uint64(2 ** 32)) < np.uint64(0.1 * 2 ** 32)


def _early_stop_fit(model, train_x, train_y, holdout_x, holdout_y,
                    loss_fn, epochs, batch_size, lr, rng, patience=5,
                    min_delta=1e-4, regularizer=None, post_step=None):
    """Adam fit with holdout-plateau early stopping; restores the best epoch."""
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    best = float("inf")
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    stall = 0
    n = len(train_x[0])
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            take = order[start:start + batch_size]
            loss = loss_fn(model, *(c[take] for c in train_x), *(c[take] for c in train_y))
            if not torch.isfinite(loss):
                raise DivergenceError("non-finite dynamics loss; aborting fit")
            if regularizer is not None:
                loss = loss + regularizer()
            opt.zero_grad()
            loss.backward()
            opt.step()
            if post_step is not None:
                post_step()
        with torch.no_grad():
            hold = float(loss_fn(model, *holdout_x, *holdout_y))
        if hold < best - min_delta:
            best = hold
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stall = 0
        else:
            stall += 1
            if stall >= patience:
                break
    model.load_state_dict(best_state)
    return best


def fit_dynamics(dataset, m=3, epochs=100, *, hidden=(200, 200, 200),
                 batch_size=2048, lr=1e-3, seed=0) -> DynamicsEnsemble:
    """Fit m Gaussian delta models on the dataset's train split (bootstrapped
    per member); the shared reward model is attached separately."""
    if m < 1:
        raise ConfigurationError("ensemble size must be >= 1")
    idx = dataset.train_indices
    if len(idx) == 0:
        raise ConfigurationError("dataset has no train transitions")
    seed_torch(seed, "dynamics", dataset.task_id)

    states = torch.as_tensor(dataset.states[idx])
    actions = torch.as_tensor(dataset.actions[idx])
    next_states = torch.as_tensor(dataset.next_states[idx])

    hold = torch.as_tensor(_holdout_mask(len(idx)))
    tr = ~hold
    deltas = next_states[tr] - states[tr]
    in_mean = torch.cat([states[tr], actions[tr]], -1).mean(0)
    in_std = torch.cat([states[tr], actions[tr]], -1).std(0)
    out_mean = deltas.mean(0)
    out_std = deltas.std(0)

    s_dim, a_dim = states.shape[1], actions.shape[1]
    members, nlls = [], []
    for k in range(m):
        torch.manual_seed(derive_seed(seed, "dynamics-member", dataset.task_id, k))
        rng = np.random.default_rng(derive_seed(seed, "dynamics-boot", dataset.task_id, k))
        model = GaussianDynamicsModel(s_dim, a_dim, hidden)
        model.set_normalization(in_mean, in_std, out_mean, out_std)
        boot = rng.integers(0, int(tr.sum()), size=int(tr.sum()))
        tr_idx = np.flatnonzero(tr.numpy())[boot]
        nll = _early_stop_fit(
            model,
            (states[tr_idx], actions[tr_idx]), (next_states[tr_idx],),
            (states[hold], actions[hold]), (next_states[hold],),
            gaussian_nll, epochs, batch_size, lr, rng,
            regularizer=model.bound_penalty, post_step=model.clamp_logstd_bounds)
        members.append(model)
        nlls.append(nll)

    return DynamicsEnsemble(task_id=dataset.task_id, members=members,
                            reward_model=None, holdout_nll=nlls)


def reward_mse(model, states, actions, rewards):
    return F.mse_loss(model(states, actions), rewards)


def fit_reward(datasets, epochs=100, *, hidden=(200, 200, 200), batch_size=2048,
               lr=1e-3, seed=0) -> RewardModel:
    """Single reward regressor fit on the union of all tasks' train data."""
    if not datasets:
        raise ConfigurationError("need at least one dataset to fit the reward model")
    seed_torch(seed, "reward-model")
    states = torch.as_tensor(np.concatenate([d.states[d.train_indices] for d in datasets]))
    actions = torch.as_tensor(np.concatenate([d.actions[d.train_indices] for d in datasets]))
    rewards = torch.as_tensor(np.concatenate([d.rewards[d.train_indices] for d in datasets]))

    hold = torch.as_tensor(_holdout_mask(len(states)))
    tr = ~hold
    model = RewardModel(states.shape[1], actions.shape[1], hidden)
    with torch.no_grad():
        x = torch.cat([states[tr], actions[tr]], -1)
        model.in_mean.copy_(x.mean(0))
        model.in_std.copy_(x.std(0).clamp_min(1e-6))
        model.r_mean.copy_(rewards[tr].mean().reshape(1))
        model.r_std.copy_(rewards[tr].std().clamp_min(1e-6).reshape(1))
    rng = np.random.default_rng(derive_seed(seed, "reward-shuffle"))
    _early_stop_fit(model,
                    (states[tr], actions[tr]), (rewards[tr],),
                    (states[hold], actions[hold]), (rewards[hold],),
                    reward_mse, epochs, batch_size, lr, rng)
    return model


def uncertainty(ensemble: DynamicsEnsemble, states, actions):
    """Largest member L2 norm of the predicted per-dimension next-state std."""
    states_t = torch.as_tensor(np.asarray(states, dtype=np.float32))
    actions_t = torch.as_tensor(np.asarray(actions, dtype=np.float32))
    single = states_t.ndim == 1
    if single:
        states_t = states_t.unsqueeze(0)
        actions_t = actions_t.unsqueeze(0)
    with torch.no_grad():
        norms = [member.predict_std(states_t, actions_t).norm(dim=-1)
                 for member in ensemble.members]
        u = torch.stack(norms, 0).max(0).values
    return float(u[0]) if single else u.numpy()


def branch_rollout_trajectories(ensembles, policy, joint_states, horizon, batch,
                                *, seed=0, deterministic=False):
    """Roll `batch` shared start states for `horizon` steps inside each
    ensemble, drawing the stepping member uniformly per step."""
    if horizon < 1 or batch < 1:
        raise ConfigurationError("horizon and batch must be >= 1")
    if len(joint_states) == 0:
        raise ConfigurationError("joint dataset is empty")
    seed_torch(seed, "branch-rollout")
    rng = np.random.default_rng(derive_seed(seed, "branch-rollout-np"))

    starts = joint_states[rng.integers(0, len(joint_states), size=batch)]
    rollouts = []
    for ensemble in ensembles:
        m = len(ensemble.members)
        states = torch.as_tensor(starts.astype(np.float32))
        traj_states = [states.numpy().copy()]
        traj_actions, traj_rewards, traj_unc = [], [], []
        for _ in range(horizon):
            actions = torch.as_tensor(
                np.asarray(policy.act(states.numpy(), deterministic=deterministic),
                           dtype=np.float32))
            member_pick = rng.integers(0, m, size=batch)
            next_states = torch.empty_like(states)
            with torch.no_grad():
                for k in range(m):
                    rows = np.flatnonzero(member_pick == k)
                    if rows.size == 0:
                        continue
                    next_states[rows] = ensemble.members[k].sample_next(
                        states[rows], actions[rows])
                stds = torch.stack(
                    [mem.predict_std(states, actions).norm(dim=-1)
                     for mem in ensemble.members], 0)
                unc = stds.max(0).values
                rewards = ensemble.reward_model(states, actions)
            traj_actions.append(actions.numpy().copy())
            traj_rewards.append(rewards.numpy().copy())
            traj_unc.append(unc.numpy().copy())
            states = next_states
            traj_states.append(states.numpy().copy())
        s_arr = np.stack(traj_states, 0)       # (h+1, B, s)
        a_arr = np.stack(traj_actions, 0)      # (h, B, a)
        r_arr = np.stack(traj_rewards, 0)      # (h, B)
        u_arr = np.stack(traj_unc, 0)          # (h, B)
        for b in range(batch):
            rollouts.append(ModelRollout(
                task_id=ensemble.task_id,
                states=s_arr[:, b], actions=a_arr[:, b],
                rewards=r_arr[:, b], uncertainties=u_arr[:, b]))
    return rollouts


def branch_rollout(ensembles, policy, joint_states, horizon, batch, *, seed=0,
                   deterministic=False):
    """Flat ModelTransition view of branch_rollout_trajectories."""
    rollouts = branch_rollout_trajectories(
        ensembles, policy, joint_states, horizon, batch,
        seed=seed, deterministic=deterministic)
    return [t for rollout in rollouts for t in rollout.transitions()]


def save_ensembles(ensembles, reward_model, path):
    os.makedirs(path, exist_ok=True)
    manifest = {"schema_version": 1, "tasks": []}
    for ensemble in ensembles:
        entry = {"task_id": ensemble.task_id, "members": [],
                 "holdout_nll": ensemble.holdout_nll}
        for k, member in enumerate(ensemble.members):
            blob = f"task{ensemble.task_id}_member{k}.pt"
            torch.save({"state_dict": member.state_dict(),
                        "state_dim": member.out_mean.numel(),
                        "input_dim": member.in_mean.numel()},
                       os.path.join(path, blob))
            entry["members"].append(blob)
        entry["normalization"] = {
            "in_mean": ensemble.members[0].in_mean.tolist(),
            "in_std": ensemble.members[0].in_std.tolist(),
            "out_mean": ensemble.members[0].out_mean.tolist(),
            "out_std": ensemble.members[0].out_std.tolist(),
        }
        manifest["tasks"].append(entry)
    torch.save({"state_dict": reward_model.state_dict(),
                "input_dim": reward_model.in_mean.numel()},
               os.path.join(path, "reward_model.pt"))
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_ensembles(path, hidden=(200, 200, 200)):
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    reward_blob = torch.load(os.path.join(path, "reward_model.pt"), weights_only=True)
    r_in = reward_blob["input_dim"]
    ensembles = []
    reward_model = None
    for entry in manifest["tasks"]:
        members = []
        for blob in entry["members"]:
            payload = torch.load(os.path.join(path, blob), weights_only=True)
            s_dim = payload["state_dim"]
            a_dim = payload["input_dim"] - s_dim
            model = GaussianDynamicsModel(s_dim, a_dim, hidden)
            model.load_state_dict(payload["state_dict"])
            members.append(model)
        if reward_model is None:
            s_dim = members[0].out_mean.numel()
            reward_model = RewardModel(s_dim, r_in - s_dim, hidden)
            reward_model.load_state_dict(reward_blob["state_dict"])
        ensembles.append(DynamicsEnsemble(
            task_id=entry["task_id"], members=members,
            reward_model=reward_model, holdout_nll=entry["holdout_nll"]))
    return ensembles, reward_model
