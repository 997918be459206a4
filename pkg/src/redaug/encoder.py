"""Task-representation learning.

A single-head attention encoder maps a window of (state, action) pairs plus a
query (current observation, last action) to a bounded task embedding. The
contrastive objective pulls same-task embeddings together against a shared
pool of negatives; its per-embedding log-softmax score also defines the
step reward for the adversarial policy and the relative distance metric used
to diagnose out-of-distribution generalization.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError, DivergenceError, RedaugError

DEFAULT_WINDOW = 32
DEFAULT_Z_DIM = 8
DEFAULT_EMBED_DIM = 64
Z_MAX = 10.0


class DegenerateEncoderError(RedaugError):
    """The encoder collapsed every context to one point."""


@dataclass
class ContextWindow:
    """Fixed-length (state, action) sequence with a validity mask.

    Padded slots sit at the tail with mask False and must not influence the
    embedding. The query carries the current observation and the action taken
    just before it (zeros at an episode start).
    """

    states: np.ndarray        # (L, s_dim)
    actions: np.ndarray       # (L, a_dim)
    mask: np.ndarray          # (L,) bool
    query_state: np.ndarray   # (s_dim,)
    query_prev_action: np.ndarray  # (a_dim,)


@dataclass
class TaskEmbedding:
    z: np.ndarray
    source_task_id: int | None = None


def make_window(states, actions, query_state, query_prev_action, length):
    """Pad/truncate a pair sequence to `length` (keeping the most recent pairs)."""
    states = np.asarray(states, dtype=np.float32).reshape(-1, np.size(query_state))
    actions = np.asarray(actions, dtype=np.float32).reshape(-1, np.size(query_prev_action))
    if len(states) > length:
        states = states[-length:]
        actions = actions[-length:]
    n = len(states)
    s_dim = states.shape[1]
    a_dim = actions.shape[1]
    out_s = np.zeros((length, s_dim), dtype=np.float32)
    out_a = np.zeros((length, a_dim), dtype=np.float32)
    mask = np.zeros(length, dtype=bool)
    out_s[:n] = states
    out_a[:n] = actions
    mask[:n] = True
    return ContextWindow(
        states=out_s, actions=out_a, mask=mask,
        query_state=np.asarray(query_state, dtype=np.float32).reshape(s_dim),
        query_prev_action=np.asarray(query_prev_action, dtype=np.float32).reshape(a_dim))


def batch_windows(windows, dtype=torch.float32):
    states = torch.as_tensor(np.stack([w.states for w in windows]), dtype=dtype)
    actions = torch.as_tensor(np.stack([w.actions for w in windows]), dtype=dtype)
    mask = torch.as_tensor(np.stack([w.mask for w in windows]))
    q_s = torch.as_tensor(np.stack([w.query_state for w in windows]), dtype=dtype)
    q_a = torch.as_tensor(np.stack([w.query_prev_action for w in windows]), dtype=dtype)
    return states, actions, mask, q_s, q_a


class ContextEncoder(nn.Module):
    """Single-layer, single-head cross-attention encoder with a bounded head.

    The query token attends over the context pairs; with an all-padded window
    the attention output is zero and the embedding is a function of the query
    alone. The head output is radially squashed so its norm stays below
    `z_max` while small embeddings pass through almost unchanged.
    """

    def __init__(self, state_dim, action_dim, embed_dim=DEFAULT_EMBED_DIM,
                 z_dim=DEFAULT_Z_DIM, z_max=Z_MAX):
        super().__init__()
        token_in = state_dim + action_dim
        self.token_proj = nn.Linear(token_in, embed_dim)
        self.query_proj = nn.Linear(token_in, embed_dim)
        self.ln_q = nn.LayerNorm(embed_dim)
        self.ln_kv = nn.LayerNorm(embed_dim)
        self.wq = nn.Linear(embed_dim, embed_dim, bias=False)
        self.wk = nn.Linear(embed_dim, embed_dim, bias=False)
        self.wv = nn.Linear(embed_dim, embed_dim, bias=False)
        self.attn_out = nn.Linear(embed_dim, embed_dim)
        self.ln_ffn = nn.LayerNorm(embed_dim)
        self.ffn = nn.Sequential(
            nn.Linear(embed_dim, 2 * embed_dim), nn.GELU(),
            nn.Linear(2 * embed_dim, embed_dim))
        self.head = nn.Linear(embed_dim, z_dim)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.embed_dim = embed_dim
        self.z_dim = z_dim
        self.z_max = z_max
        self.encode_calls = 0  # bumped by encode(); evaluation protocols audit it
        self.register_buffer("in_mean", torch.zeros(state_dim + action_dim))
        self.register_buffer("in_std", torch.ones(state_dim + action_dim))

    def set_input_normalization(self, mean, std):
        """Z-score the (state, action) inputs; conditioning only, set once from
        the training data before any updates."""
        self.in_mean.copy_(torch.as_tensor(mean, dtype=self.in_mean.dtype))
        self.in_std.copy_(torch.as_tensor(std, dtype=self.in_std.dtype).clamp_min(1e-6))

    def forward(self, token_states, token_actions, mask, query_state, query_prev_action):
        if token_states.shape[-1] != self.state_dim or query_state.shape[-1] != self.state_dim:
            raise ConfigurationError(
                f"state dim {token_states.shape[-1]} does not match encoder ({self.state_dim})")
        pair_in = (torch.cat([token_states, token_actions], dim=-1) - self.in_mean) / self.in_std
        query_in = (torch.cat([query_state, query_prev_action], dim=-1) - self.in_mean) / self.in_std
        tokens = self.token_proj(pair_in)
        q_feat = self.query_proj(query_in)

        q = self.wq(self.ln_q(q_feat))                      # (B, E)
        kv_in = self.ln_kv(tokens)
        k = self.wk(kv_in)                                  # (B, L, E)
        v = self.wv(kv_in)
        logits = torch.einsum("be,ble->bl", q, k) / math.sqrt(self.embed_dim)
        neg = torch.finfo(logits.dtype).min / 4
        logits = logits.masked_fill(~mask, neg)
        shift = logits.max(dim=-1, keepdim=True).values
        weights = torch.exp(logits - shift) * mask.to(logits.dtype)
        denom = weights.sum(dim=-1, keepdim=True)
        attn = weights / denom.clamp_min(torch.finfo(logits.dtype).tiny)
        attended = torch.einsum("bl,ble->be", attn, v)

        x = q_feat + self.attn_out(attended)
        x = x + self.ffn(self.ln_ffn(x))
        raw = self.head(x)
        norm = raw.norm(dim=-1, keepdim=True)
        scale = torch.where(norm > 1e-8,
                            self.z_max * torch.tanh(norm / self.z_max) / norm.clamp_min(1e-30),
                            torch.ones_like(norm))
        return raw * scale

    def encode_batch(self, windows, dtype=torch.float32):
        return self(*batch_windows(windows, dtype=dtype))

    def encode(self, window: ContextWindow) -> TaskEmbedding:
        self.encode_calls += 1
        with torch.no_grad():
            z = self.encode_batch([window])[0]
        return TaskEmbedding(z=z.numpy())

    def config(self):
        return {"state_dim": self.state_dim, "action_dim": self.action_dim,
                "embed_dim": self.embed_dim, "z_dim": self.z_dim,
                "z_max": self.z_max}


def info_nce_loss(embeddings, task_ids, temperature=1.0):
    """Contrastive loss over a batch of embeddings labeled by task.

    For each anchor the positive term is the exact mean over all same-task
    embeddings; the normalizer sums over every other embedding in the batch
    (the anchor itself excluded). Tasks with a single embedding contribute no
    anchor; a batch of only singletons is an error.
    """
    if temperature <= 0:
        raise ConfigurationError("temperature must be positive")
    if not torch.is_tensor(embeddings):
        embeddings = torch.as_tensor(np.asarray(embeddings))
    task_ids = torch.as_tensor(np.asarray(task_ids)).reshape(-1)
    n = embeddings.shape[0]
    if n < 2:
        raise ConfigurationError("need at least two embeddings")
    if len(torch.unique(task_ids)) < 2:
        raise ConfigurationError("need embeddings from at least two tasks")

    scores = embeddings @ embeddings.T / temperature
    eye = torch.eye(n, dtype=torch.bool)
    same = task_ids.unsqueeze(0) == task_ids.unsqueeze(1)
    pos_mask = same & ~eye

    anchors = pos_mask.any(dim=1)
    if not anchors.any():
        raise ConfigurationError("every task is a singleton; no positives exist")

    neg_inf = torch.finfo(scores.dtype).min / 4
    log_phi = torch.logsumexp(scores.masked_fill(eye, neg_inf), dim=1)
    pos_scores = (scores * pos_mask).sum(dim=1) / pos_mask.sum(dim=1).clamp_min(1)
    per_anchor = -(pos_scores - log_phi)
    return per_anchor[anchors].mean()


def representation_value(z, positives, pool, temperature=1.0):
    """Mean log-softmax score of z against the pool, averaged over positives."""
    z_t = torch.as_tensor(np.asarray(z)) if not torch.is_tensor(z) else z
    pos = torch.as_tensor(np.asarray(positives)) if not torch.is_tensor(positives) else positives
    pool_t = torch.as_tensor(np.asarray(pool)) if not torch.is_tensor(pool) else pool
    if pos.numel() == 0:
        raise ConfigurationError("positives are empty")
    if pool_t.numel() == 0:
        raise ConfigurationError("contrast pool is empty")
    single = z_t.ndim == 1
    if single:
        z_t = z_t.unsqueeze(0)
    pos_term = (z_t @ pos.T / temperature).mean(dim=1)
    log_phi = torch.logsumexp(z_t @ pool_t.T / temperature, dim=1)
    value = pos_term - log_phi
    return value[0] if single else value


def adversarial_reward(z_t, z_next, positives, pool, *, reward_decrease=True,
                       temperature=1.0):
    """Step reward from the change in representation identifiability.

    With reward_decrease=True (default) the policy is paid for making the
    embedding *less* identifiable: reward = R(z_t) - R(z_{t+1}). Setting it
    False yields the raw difference R(z_{t+1}) - R(z_t).
    """
    r_next = representation_value(z_next, positives, pool, temperature)
    r_now = representation_value(z_t, positives, pool, temperature)
    diff = r_next - r_now
    return (-diff if reward_decrease else diff)


def encoder_update_step(encoder, optimizer, windows, task_ids, temperature=1.0):
    """One gradient step decreasing the contrastive loss on the given windows."""
    if len(windows) == 0:
        raise ConfigurationError("empty encoder batch")
    embeddings = encoder.encode_batch(windows)
    loss = info_nce_loss(embeddings, task_ids, temperature)
    optimizer.zero_grad()
    loss.backward()
    for p in encoder.parameters():
        if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
            raise DivergenceError("non-finite encoder gradient")
    optimizer.step()
    return loss.item()


def _episode_boundaries(dataset):
    """contiguous[j] is True when row j+1 continues row j's episode."""
    n = len(dataset)
    if n < 2:
        return np.zeros(0, dtype=bool)
    same_ckpt = dataset.checkpoint_ids[:-1] == dataset.checkpoint_ids[1:]
    chained = np.all(dataset.next_states[:-1] == dataset.states[1:], axis=1)
    return (~dataset.dones[:-1]) & same_ckpt & chained


def _sliding_all(mask, width):
    """all(mask[p:p+width]) for each window start p."""
    csum = np.concatenate([[0], np.cumsum(mask.astype(np.int64))])
    return (csum[width:] - csum[:-width]) == width


def valid_window_starts(dataset, split, length):
    """Start rows of fully in-episode windows inside the given split."""
    n = len(dataset)
    if n < length:
        return np.zeros(0, dtype=np.int64)
    member = np.zeros(n, dtype=bool)
    member[dataset.split_indices(split)] = True
    ok = _sliding_all(member, length)
    if length > 1:
        contiguous = _episode_boundaries(dataset)
        ok = ok & _sliding_all(contiguous, length - 1)[:n - length + 1]
    return np.flatnonzero(ok).astype(np.int64)


def sample_offline_windows(dataset, split, n_windows, length, rng):
    """Uniformly sampled in-episode context windows from one dataset split."""
    starts = valid_window_starts(dataset, split, length)
    if len(starts) == 0:
        raise ConfigurationError(
            f"dataset task {dataset.task_id} has no {split} windows of length {length}")
    picks = starts[rng.integers(0, len(starts), size=n_windows)]
    windows = []
    for p in picks:
        end = p + length
        windows.append(ContextWindow(
            states=dataset.states[p:end].copy(),
            actions=dataset.actions[p:end].copy(),
            mask=np.ones(length, dtype=bool),
            query_state=dataset.next_states[end - 1].copy(),
            query_prev_action=dataset.actions[end - 1].copy()))
    return windows


def window_from_rollout(rollout, length):
    """Full-rollout context window (padded to `length`)."""
    return make_window(rollout.states[:-1], rollout.actions,
                       rollout.states[-1], rollout.actions[-1], length)


def prefix_windows_from_rollout(rollout, length):
    """Windows for the embedding sequence z_0..z_h along one rollout.

    Prefix t holds the first t pairs; its query is the state reached at step t
    and the action that produced it (zeros for the empty prefix).
    """
    h = len(rollout.actions)
    a_dim = rollout.actions.shape[1]
    windows = []
    for t in range(h + 1):
        prev_a = rollout.actions[t - 1] if t > 0 else np.zeros(a_dim, dtype=np.float32)
        windows.append(make_window(rollout.states[:t], rollout.actions[:t],
                                   rollout.states[t], prev_a, length))
    return windows


def relative_metric(encoder, own_train, other_train, own_test, *, n_windows=256,
                    length=DEFAULT_WINDOW, seed=0, test_split="test"):
    """Ratio of squared embedding distances: held-out windows of the own task
    against its own training windows (numerator) vs the other task's training
    windows (denominator). Near zero means held-out contexts land with their
    true task."""
    rng = np.random.default_rng(seed)
    w_own = sample_offline_windows(own_train, "train", n_windows, length, rng)
    w_other = sample_offline_windows(other_train, "train", n_windows, length, rng)
    w_test = sample_offline_windows(own_test, test_split, n_windows, length, rng)
    with torch.no_grad():
        z_own = encoder.encode_batch(w_own).double()
        z_other = encoder.encode_batch(w_other).double()
        z_test = encoder.encode_batch(w_test).double()
    num = (torch.cdist(z_own, z_test) ** 2).sum() * len(w_other)
    den = (torch.cdist(z_other, z_test) ** 2).sum() * len(w_own)
    if float(den) == 0.0:
        raise DegenerateEncoderError(
            "zero denominator: encoder maps the contrast task onto the held-out contexts")
    return float(num / den)


def save_encoder(encoder, path):
    os.makedirs(path, exist_ok=True)
    torch.save(encoder.state_dict(), os.path.join(path, "encoder.pt"))
    with open(os.path.join(path, "config.json"), "w") as fh:
        json.dump(encoder.config(), fh, indent=2, sort_keys=True)


def load_encoder(path):
    with open(os.path.join(path, "config.json")) as fh:
        cfg = json.load(fh)
    encoder = ContextEncoder(**cfg)
    encoder.load_state_dict(torch.load(os.path.join(path, "encoder.pt"),
                                       weights_only=True))
    return encoder
