"""Adversarial data generation and the alternating representation-learning loop.

Each outer round: snapshot the current policy and encoder, branch-roll every
task's ensemble from shared start states, annotate the rollouts with the
composite reward (identifiability change minus uncertainty penalty plus
modeled task reward), then update the policy and the encoder on exactly that
round's data.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .dynamics import branch_rollout_trajectories
from .encoder import (ContextEncoder, adversarial_reward, encoder_update_step,
                      prefix_windows_from_rollout, sample_offline_windows,
                      window_from_rollout)
from .errors import ConfigurationError
from .sac import SACLearner
from .seeding import derive_seed, seed_torch


@dataclass
class RewardComposition:
    """Weights of the composite adversarial reward.

    sign_flip_adv=False pays the policy for *decreasing* representation
    identifiability (the adversarial direction); True uses the raw increase.
    """

    lambda1: float = 1.0
    lambda2: float = 1.0
    sign_flip_adv: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigurationError("reward weights must be non-negative")


def compose_reward(r_adv, u, r_hat, cfg: RewardComposition):
    """Total adversarial-policy reward; r_adv arrives already sign-adjusted."""
    return r_adv - cfg.lambda1 * u + cfg.lambda2 * r_hat


class RandomPolicy:
    """Uniform actions in [-1, 1]; the no-adversary augmentation baseline."""

    def __init__(self, action_dim):
        self.action_dim = action_dim

    def act(self, obs, deterministic=False):
        obs = np.asarray(obs)
        n = obs.shape[0] if obs.ndim > 1 else 1
        actions = (torch.rand(n, self.action_dim) * 2.0 - 1.0).numpy()
        return actions if obs.ndim > 1 else actions[0]


@dataclass
class AdversarialBatch:
    """One round's model-generated data: flat transitions for the policy and
    full-rollout context windows for the encoder."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray        # composite rewards
    next_states: np.ndarray
    task_ids: np.ndarray       # per transition
    uncertainties: np.ndarray
    windows: list = field(default_factory=list)
    window_task_ids: np.ndarray | None = None

    def __len__(self):
        return len(self.states)


def collect_adversarial_data(policy, ensembles, encoder, joint_states,
                             cfg: RewardComposition, *, horizon=5, batch=64,
                             window_length=32, temperature=1.0, seed=0):
    """Branch-roll every ensemble and attach composite rewards.

    The identifiability reward for each step uses prefix embeddings of the
    rollout so far, scored against positives and a pool frozen from this
    batch's full-rollout embeddings.
    """
    rollouts = branch_rollout_trajectories(
        ensembles, policy, joint_states, horizon, batch, seed=seed)

    windows = [window_from_rollout(r, window_length) for r in rollouts]
    window_task_ids = np.array([r.task_id for r in rollouts], dtype=np.int64)
    with torch.no_grad():
        pool = encoder.encode_batch(windows)
        prefix_all = encoder.encode_batch(
            [w for r in rollouts for w in prefix_windows_from_rollout(r, window_length)])
    prefix_all = prefix_all.reshape(len(rollouts), horizon + 1, -1)

    columns = {"s": [], "a": [], "r": [], "s2": [], "t": [], "u": []}
    for i, rollout in enumerate(rollouts):
        positives = pool[window_task_ids == rollout.task_id]
        z_seq = prefix_all[i]
        with torch.no_grad():
            r_adv = adversarial_reward(
                z_seq[:-1], z_seq[1:], positives, pool,
                reward_decrease=not cfg.sign_flip_adv,
                temperature=temperature).numpy()
        total = compose_reward(r_adv, rollout.uncertainties, rollout.rewards, cfg)
        columns["s"].append(rollout.states[:-1])
        columns["a"].append(rollout.actions)
        columns["r"].append(total)
        columns["s2"].append(rollout.states[1:])
        columns["t"].append(np.full(horizon, rollout.task_id, dtype=np.int64))
        columns["u"].append(rollout.uncertainties)

    batch_out = AdversarialBatch(
        states=np.concatenate(columns["s"]).astype(np.float32),
        actions=np.concatenate(columns["a"]).astype(np.float32),
        rewards=np.concatenate(columns["r"]).astype(np.float32),
        next_states=np.concatenate(columns["s2"]).astype(np.float32),
        task_ids=np.concatenate(columns["t"]),
        uncertainties=np.concatenate(columns["u"]).astype(np.float32),
        windows=windows)
    batch_out.window_task_ids = window_task_ids
    return batch_out


def train_adversarial_step(learner: SACLearner, batch: AdversarialBatch,
                           rng, batch_size=256):
    """One SAC update round on the model-generated transitions."""
    if len(batch) == 0:
        raise ConfigurationError("adversarial batch is empty")
    idx = rng.integers(0, len(batch), size=min(batch_size, len(batch)))
    tensors = {
        "obs": torch.as_tensor(batch.states[idx]),
        "action": torch.as_tensor(batch.actions[idx]),
        "reward": torch.as_tensor(batch.rewards[idx]),
        "next_obs": torch.as_tensor(batch.next_states[idx]),
        "done": torch.zeros(len(idx)),  # model rollouts never terminate
    }
    return learner.update(tensors)


def _input_stats(datasets):
    xs = np.concatenate([
        np.concatenate([d.states[d.train_indices], d.actions[d.train_indices]], axis=1)
        for d in datasets])
    return xs.mean(axis=0), xs.std(axis=0)


def train_encoder_on_offline_contexts(datasets, *, steps, windows_per_task=16,
                                      window_length=32, z_dim=8, embed_dim=64,
                                      lr=3e-4, temperature=1.0, seed=0,
                                      encoder=None):
    """Contrastive encoder training on raw offline windows (the augmentation-
    free baseline)."""
    if len(datasets) < 2:
        raise ConfigurationError("need at least two tasks for contrastive training")
    seed_torch(seed, "encoder-offline")
    rng = np.random.default_rng(derive_seed(seed, "encoder-offline-np"))
    s_dim = datasets[0].states.shape[1]
    a_dim = datasets[0].actions.shape[1]
    if encoder is None:
        encoder = ContextEncoder(s_dim, a_dim, embed_dim=embed_dim, z_dim=z_dim)
        encoder.set_input_normalization(*_input_stats(datasets))
    opt = torch.optim.Adam(encoder.parameters(), lr=lr)
    losses = []
    for _ in range(steps):
        windows, ids = [], []
        for ds in datasets:
            windows.extend(sample_offline_windows(ds, "train", windows_per_task,
                                                  window_length, rng))
            ids.extend([ds.task_id] * windows_per_task)
        losses.append(encoder_update_step(encoder, opt, windows,
                                          np.asarray(ids), temperature))
    return encoder, losses


def run_representation_rounds(datasets, ensembles, *, variant="full", rounds=50,
                              policy_steps=50, encoder_steps=50, rollout_horizon=5,
                              rollout_batch=64, window_length=32, z_dim=8,
                              embed_dim=64, windows_per_task=16, batch_size=256,
                              lambda1=1.0, lambda2=1.0, sign_flip_adv=False,
                              temperature=1.0, lr=3e-4, policy_lr=3e-4,
                              mix_offline_contexts=True, seed=0,
                              round_hook=None):
    """Alternating min-max rounds: collect model rollouts with the round-start
    snapshots, update the policy on them, then update the encoder.

    variant: "full" (adversarial policy), "no-adv" (random rollout policy),
    "no-up" (lambda1=0), or "no-tc" (lambda2=0). Returns (encoder, policy).

    With mix_offline_contexts the encoder batches pair the generated windows
    with raw offline windows of the same tasks (the generated data augments
    the dataset rather than replacing it), which anchors the min-max game.
    """
    if variant not in ("full", "no-adv", "no-up", "no-tc"):
        raise ConfigurationError(f"unknown variant {variant!r}")
    if len(ensembles) < 2:
        raise ConfigurationError("need ensembles from at least two tasks")
    cfg = RewardComposition(
        lambda1=0.0 if variant == "no-up" else lambda1,
        lambda2=0.0 if variant == "no-tc" else lambda2,
        sign_flip_adv=sign_flip_adv)

    seed_torch(seed, "representation-init")
    s_dim = datasets[0].states.shape[1]
    a_dim = datasets[0].actions.shape[1]
    encoder = ContextEncoder(s_dim, a_dim, embed_dim=embed_dim, z_dim=z_dim)
    encoder.set_input_normalization(*_input_stats(datasets))
    enc_opt = torch.optim.Adam(encoder.parameters(), lr=lr)
    adversarial = variant != "no-adv"
    policy = (SACLearner(s_dim, a_dim, hidden=(256, 256), lr=policy_lr)
              if adversarial else RandomPolicy(a_dim))

    joint_states = np.concatenate([d.states[d.train_indices] for d in datasets])
    rng = np.random.default_rng(derive_seed(seed, "representation-np"))

    for k in range(rounds):
        if round_hook:
            round_hook(k, "collect")
        batch = collect_adversarial_data(
            policy, ensembles, encoder, joint_states, cfg,
            horizon=rollout_horizon, batch=rollout_batch,
            window_length=window_length, temperature=temperature,
            seed=derive_seed(seed, "round-collect", k))
        if adversarial:
            if round_hook:
                round_hook(k, "policy")
            for _ in range(policy_steps):
                train_adversarial_step(policy, batch, rng, batch_size)
        if round_hook:
            round_hook(k, "encoder")
        rows_by_task = {e.task_id: np.flatnonzero(batch.window_task_ids == e.task_id)
                        for e in ensembles}
        for _ in range(encoder_steps):
            windows, ids = [], []
            for ds in datasets:
                rows = rows_by_task[ds.task_id]
                pick = rows[rng.integers(0, len(rows), size=windows_per_task)]
                windows.extend(batch.windows[i] for i in pick)
                ids.extend([ds.task_id] * windows_per_task)
                if mix_offline_contexts:
                    windows.extend(sample_offline_windows(
                        ds, "train", windows_per_task, window_length, rng))
                    ids.extend([ds.task_id] * windows_per_task)
            encoder_update_step(encoder, enc_opt, windows, np.asarray(ids),
                                temperature)
    return encoder, policy
