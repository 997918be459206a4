"""Evaluation protocols and encoder diagnostics.

On-policy: the meta-policy's own fresh interactions build the context window
step by step (one encode per step). Off-policy: one context window sampled
from held-out-checkpoint data is encoded once and held fixed for the episode.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import matplotlib
import numpy as np
import torch

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .encoder import (DegenerateEncoderError, make_window, relative_metric,
                      sample_offline_windows, valid_window_starts)
from .envs import TaskSpec, make_env
from .errors import ConfigurationError
from .seeding import derive_seed


def eval_on_policy(policy, encoder, spec: TaskSpec, episodes=5, *,
                   window_length=32, seed=0, deterministic=True):
    """Per-episode returns with self-collected context (H encodes per episode)."""
    env = make_env(spec)
    a_dim = env.action_dim
    returns = []
    for ep in range(episodes):
        obs = env.reset(seed=derive_seed(seed, "on-policy", ep))
        pair_states, pair_actions = [], []
        prev_action = np.zeros(a_dim, dtype=np.float32)
        total = 0.0
        done = False
        while not done:
            window = make_window(pair_states[-window_length:],
                                 pair_actions[-window_length:],
                                 obs, prev_action, window_length)
            z = encoder.encode(window).z
            action = policy.act(obs, z, deterministic=deterministic)
            result = env.step(action)
            pair_states.append(obs)
            pair_actions.append(np.asarray(action, dtype=np.float32))
            prev_action = np.asarray(action, dtype=np.float32)
            total += result.reward
            obs = result.next_observation
            done = result.done
        returns.append(total)
    return np.asarray(returns)


def eval_off_policy(policy, encoder, spec: TaskSpec, test_pool, episodes=5, *,
                    window_length=32, seed=0, deterministic=True,
                    window_starts=None):
    """Per-episode returns with one fixed held-out context window per episode."""
    test_rows = set(test_pool.split_indices("test").tolist())
    if window_starts is not None:
        window_starts = np.asarray(window_starts)
        for p in window_starts:
            rows = range(int(p), int(p) + window_length)
            if not all(r in test_rows for r in rows):
                raise ConfigurationError(
                    f"context window at row {int(p)} includes transitions from "
                    "train-marked checkpoints")
    else:
        window_starts = valid_window_starts(test_pool, "test", window_length)
    if len(window_starts) == 0:
        raise ConfigurationError("test pool has no usable context windows")

    rng = np.random.default_rng(derive_seed(seed, "off-policy-pool"))
    env = make_env(spec)
    returns = []
    for ep in range(episodes):
        p = int(window_starts[rng.integers(0, len(window_starts))])
        end = p + window_length
        window = make_window(test_pool.states[p:end], test_pool.actions[p:end],
                             test_pool.next_states[end - 1],
                             test_pool.actions[end - 1], window_length)
        z = encoder.encode(window).z  # encoded once; held fixed all episode
        obs = env.reset(seed=derive_seed(seed, "off-policy", ep))
        total = 0.0
        done = False
        while not done:
            action = policy.act(obs, z, deterministic=deterministic)
            result = env.step(action)
            total += result.reward
            obs = result.next_observation
            done = result.done
        returns.append(total)
    return np.asarray(returns)


def export_embeddings(encoder, datasets, path, *, n_windows=128,
                      window_length=32, seed=0):
    """CSV of embeddings for train and (where present) test windows."""
    rng = np.random.default_rng(derive_seed(seed, "embed-export"))
    rows = []
    for ds in datasets:
        for split in ("train", "test"):
            if len(valid_window_starts(ds, split, window_length)) == 0:
                continue
            windows = sample_offline_windows(ds, split, n_windows, window_length, rng)
            with torch.no_grad():
                z = encoder.encode_batch(windows).numpy()
            for row in z:
                rows.append((ds.task_id, split, *row.tolist()))
    z_dim = encoder.z_dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "split", *[f"z_{i}" for i in range(z_dim)]])
        writer.writerows(rows)
    return rows


def project_embeddings_svg(rows, path):
    """Deterministic 2-D principal-component scatter of exported embeddings."""
    z = np.asarray([r[2:] for r in rows], dtype=np.float64)
    labels = [f"task {r[0]} ({r[1]})" for r in rows]
    centered = z - z.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:2].T
    fig, ax = plt.subplots(figsize=(6, 5))
    for label in sorted(set(labels)):
        pick = [i for i, l in enumerate(labels) if l == label]
        ax.scatter(proj[pick, 0], proj[pick, 1], s=8, alpha=0.6, label=label)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def encoder_diagnostics(encoder, datasets, test_sets=None, *, out_dir=None,
                        n_windows=128, window_length=32, seed=0):
    """Relative distance ratios for every ordered task pair plus embedding
    exports. A collapsed encoder is flagged, not masked."""
    if len(datasets) < 2:
        raise ConfigurationError("diagnostics need at least two train tasks")
    if test_sets is None:
        test_sets = datasets
    by_id = {ds.task_id: ds for ds in datasets}
    test_by_id = {ds.task_id: ds for ds in test_sets}

    d_phi = {}
    degenerate = False
    for own_id, own in by_id.items():
        own_test = test_by_id.get(own_id)
        if own_test is None or len(valid_window_starts(own_test, "test", window_length)) == 0:
            continue
        for other_id, other in by_id.items():
            if other_id == own_id:
                continue
            key = f"{own_id}_vs_{other_id}"
            try:
                d_phi[key] = relative_metric(
                    encoder, own, other, own_test, n_windows=n_windows,
                    length=window_length, seed=derive_seed(seed, "dphi", key))
            except DegenerateEncoderError:
                d_phi[key] = None
                degenerate = True

    report = {"d_phi": d_phi, "degenerate": degenerate,
              "embedding_csv": None, "projection_svg": None}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "embeddings.csv")
        rows = export_embeddings(encoder, datasets, csv_path,
                                 n_windows=n_windows,
                                 window_length=window_length, seed=seed)
        svg_path = os.path.join(out_dir, "embeddings.svg")
        project_embeddings_svg(rows, svg_path)
        report["embedding_csv"] = csv_path
        report["projection_svg"] = svg_path
    return report


@dataclass
class EvalReport:
    protocol: str
    per_task: dict          # task label -> {mean, std, returns, spec}
    config_fingerprint: str
    d_phi: dict = field(default_factory=dict)
    embedding_export: str | None = None

    def to_json(self) -> str:
        payload = {
            "protocol": self.protocol,
            "per_task": self.per_task,
            "config_fingerprint": self.config_fingerprint,
            "d_phi": self.d_phi,
            "embedding_export": self.embedding_export,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        payload = json.loads(text)
        return cls(protocol=payload["protocol"], per_task=payload["per_task"],
                   config_fingerprint=payload["config_fingerprint"],
                   d_phi=payload.get("d_phi", {}),
                   embedding_export=payload.get("embedding_export"))


def summarize_returns(spec: TaskSpec, returns) -> dict:
    return {
        "mean": float(np.mean(returns)),
        "std": float(np.std(returns)),
        "returns": [float(r) for r in returns],
        "spec": json.loads(spec.to_json()),
    }
