"""Two-task study of the policy-footprint shortcut.

Construction: two pendulum tasks that differ only in gravity. Task A's
training data comes from a strong checkpoint, task B's from a mediocre one,
and the held-out contexts of task A come from a mediocre checkpoint as well —
so an encoder keyed on policy quality files the held-out task-A contexts with
task B. The relative distance ratio of each trained encoder quantifies how
far it falls for that shortcut.
"""

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import data as datamod
from .advpolicy import run_representation_rounds, train_encoder_on_offline_contexts
from .dynamics import fit_dynamics, fit_reward, load_ensembles, save_ensembles
from .encoder import relative_metric
from .envs import TaskSpec
from .seeding import derive_seed


@dataclass
class DidacticConfig:
    gravity_a: float = 1.0
    gravity_b: float = 2.0
    episode_horizon: int = 100
    behavior_steps: int = 12000
    checkpoint_interval: int = 600
    behavior_hidden: tuple = (128, 128)
    budget: int = 6000            # train transitions per task
    test_size: int = 3000         # held-out pool for task A
    quality_quantile: float = 0.35
    data_seed: int = 0
    # models
    ensemble_size: int = 3
    model_epochs: int = 100
    model_hidden: tuple = (200, 200, 200)
    # representation
    rounds: int = 40
    policy_steps_per_round: int = 40
    encoder_steps_per_round: int = 40
    rollout_horizon: int = 16
    rollout_batch: int = 128
    window_length: int = 16
    mix_offline_contexts: bool = True
    z_dim: int = 8
    embed_dim: int = 64
    windows_per_task: int = 24
    lambda1: float = 1.0
    lambda2: float = 1.0
    temperature: float = 1.0
    lr: float = 1e-3
    metric_windows: int = 192

    def data_key(self) -> str:
        fields = ["gravity_a", "gravity_b", "episode_horizon", "behavior_steps",
                  "checkpoint_interval", "behavior_hidden", "budget",
                  "test_size", "quality_quantile", "data_seed"]
        payload = {k: getattr(self, k) for k in fields}
        payload["behavior_hidden"] = list(self.behavior_hidden)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def models_key(self, seed) -> str:
        payload = {"data": self.data_key(), "m": self.ensemble_size,
                   "epochs": self.model_epochs, "hidden": list(self.model_hidden),
                   "seed": seed}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _task_specs(cfg: DidacticConfig):
    spec_a = TaskSpec(family="pendulum", gravity_scale=cfg.gravity_a,
                      episode_horizon=cfg.episode_horizon,
                      seed=derive_seed(cfg.data_seed, "didactic", "a"))
    spec_b = TaskSpec(family="pendulum", gravity_scale=cfg.gravity_b,
                      episode_horizon=cfg.episode_horizon,
                      seed=derive_seed(cfg.data_seed, "didactic", "b"))
    return spec_a, spec_b


def _nearest_to_quantile(records, q):
    """Checkpoint whose eval return is closest to the q-quantile of the run's
    return range; earliest checkpoint wins ties (quality is an artifact of
    training progress)."""
    returns = np.array([r.eval_return for r in records])
    target = returns.min() + q * (returns.max() - returns.min())
    order = np.argsort(np.abs(returns - target), kind="stable")
    return records[int(order[0])]


def build_didactic_datasets(cfg: DidacticConfig, workspace=None):
    """Datasets with the mismatched-quality construction; cached on disk when
    a workspace directory is given (they are inputs shared by every variant
    and training seed)."""
    if workspace is not None:
        cache = os.path.join(workspace, f"didactic-data-{cfg.data_key()}")
        if os.path.exists(os.path.join(cache, "done.json")):
            return (datamod.load_dataset(os.path.join(cache, "task0")),
                    datamod.load_dataset(os.path.join(cache, "task1")))

    spec_a, spec_b = _task_specs(cfg)
    recs_a = datamod.train_behavior_policy(
        spec_a, cfg.behavior_steps, cfg.checkpoint_interval,
        seed=derive_seed(cfg.data_seed, "didactic-behavior", 0),
        hidden=cfg.behavior_hidden)
    recs_b = datamod.train_behavior_policy(
        spec_b, cfg.behavior_steps, cfg.checkpoint_interval,
        seed=derive_seed(cfg.data_seed, "didactic-behavior", 1),
        hidden=cfg.behavior_hidden)

    best_a = max(recs_a, key=lambda r: r.eval_return)
    mid_a = _nearest_to_quantile(
        [r for r in recs_a if r.checkpoint_id != best_a.checkpoint_id],
        cfg.quality_quantile)
    mid_b = _nearest_to_quantile(recs_b, cfg.quality_quantile)

    # task A: strong checkpoint trains, mediocre checkpoint fills the test pool
    ds_a = datamod.collect_dataset(
        spec_a, [best_a, mid_a], [best_a], cfg.budget, task_id=0,
        test_pool_size=cfg.test_size,
        seed=derive_seed(cfg.data_seed, "didactic-collect", 0))
    # task B: mediocre checkpoint only
    ds_b = datamod.collect_dataset(
        spec_b, [mid_b], [mid_b], cfg.budget, task_id=1, test_pool_size=0,
        seed=derive_seed(cfg.data_seed, "didactic-collect", 1))

    if workspace is not None:
        cache = os.path.join(workspace, f"didactic-data-{cfg.data_key()}")
        datamod.save_dataset(ds_a, os.path.join(cache, "task0"))
        datamod.save_dataset(ds_b, os.path.join(cache, "task1"))
        with open(os.path.join(cache, "done.json"), "w") as fh:
            json.dump({"train_return_a": best_a.eval_return,
                       "test_return_a": mid_a.eval_return,
                       "train_return_b": mid_b.eval_return}, fh)
    return ds_a, ds_b


def _didactic_ensembles(cfg, datasets, seed, workspace=None):
    if workspace is not None:
        cache = os.path.join(workspace, f"didactic-models-{cfg.models_key(seed)}")
        if os.path.exists(os.path.join(cache, "manifest.json")):
            return load_ensembles(cache, hidden=cfg.model_hidden)[0]
    reward_model = fit_reward(datasets, cfg.model_epochs, hidden=cfg.model_hidden,
                              seed=derive_seed(seed, "didactic-reward"))
    ensembles = []
    for ds in datasets:
        ensemble = fit_dynamics(ds, m=cfg.ensemble_size, epochs=cfg.model_epochs,
                                hidden=cfg.model_hidden,
                                seed=derive_seed(seed, "didactic-dyn", ds.task_id))
        ensemble.reward_model = reward_model
        ensembles.append(ensemble)
    if workspace is not None:
        cache = os.path.join(workspace, f"didactic-models-{cfg.models_key(seed)}")
        save_ensembles(ensembles, reward_model, cache)
    return ensembles


def run_didactic_variant(cfg: DidacticConfig, variant: str, seed: int,
                         workspace=None):
    """Train one variant's encoder on the didactic datasets and score it.

    Returns {"variant", "seed", "d_phi"} where d_phi is the relative distance
    ratio of task A's held-out contexts (small = shortcut avoided).
    """
    ds_a, ds_b = build_didactic_datasets(cfg, workspace)
    if variant == "no-model":
        encoder, _ = train_encoder_on_offline_contexts(
            [ds_a, ds_b], steps=cfg.rounds * cfg.encoder_steps_per_round,
            windows_per_task=cfg.windows_per_task,
            window_length=cfg.window_length, z_dim=cfg.z_dim,
            embed_dim=cfg.embed_dim, temperature=cfg.temperature, lr=cfg.lr,
            seed=derive_seed(seed, "didactic-encoder", variant))
    else:
        ensembles = _didactic_ensembles(cfg, [ds_a, ds_b], seed, workspace)
        encoder, _ = run_representation_rounds(
            [ds_a, ds_b], ensembles, variant=variant, rounds=cfg.rounds,
            policy_steps=cfg.policy_steps_per_round,
            encoder_steps=cfg.encoder_steps_per_round,
            rollout_horizon=cfg.rollout_horizon, rollout_batch=cfg.rollout_batch,
            window_length=cfg.window_length, z_dim=cfg.z_dim,
            embed_dim=cfg.embed_dim, windows_per_task=cfg.windows_per_task,
            lambda1=cfg.lambda1, lambda2=cfg.lambda2,
            temperature=cfg.temperature, lr=cfg.lr,
            mix_offline_contexts=cfg.mix_offline_contexts,
            seed=derive_seed(seed, "didactic-encoder", variant))
    d_phi = relative_metric(encoder, ds_a, ds_b, ds_a,
                            n_windows=cfg.metric_windows,
                            length=cfg.window_length,
                            seed=derive_seed(seed, "didactic-metric"))
    return {"variant": variant, "seed": seed, "d_phi": d_phi}
