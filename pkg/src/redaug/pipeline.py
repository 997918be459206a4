"""End-to-end staged pipeline: data -> models -> encoder -> policy -> reports.

Stages read and write explicit directories so they compose from the CLI as
well as from run_pipeline(), which lays them out under one run root. Each
stage stamps a fingerprint of the configuration slice it depends on;
re-running with an unchanged fingerprint is a no-op, and a stage refuses to
start when a prerequisite's artifacts are absent.
"""

import dataclasses
import hashlib
import json
import os

import numpy as np

from . import data as datamod
from .advpolicy import run_representation_rounds, train_encoder_on_offline_contexts
from .dynamics import fit_dynamics, fit_reward, load_ensembles, save_ensembles
from .encoder import load_encoder, save_encoder
from .envs import TaskSpec, task_grid
from .errors import ConfigurationError
from .evalproto import (EvalReport, encoder_diagnostics, eval_off_policy,
                        eval_on_policy, summarize_returns)
from .metapolicy import MetaPolicy, train_meta_policy
from .seeding import derive_seed

VARIANTS = ("full", "no-model", "no-adv", "no-up", "no-tc")


@dataclasses.dataclass
class ExperimentConfig:
    # task set
    family: str = "point_mass_2d"
    varied: str = "gravity"
    checkpoints_n: int = 1
    episode_horizon: int = 100
    # data stage
    behavior_steps: int = 12000
    checkpoint_interval: int = 600
    behavior_hidden: tuple = (128, 128)
    behavior_update_every: int = 2
    budget: int = 12000
    test_pool_size: int = -1          # -1: budget // 5
    data_seed: int = 0
    # dynamics stage
    ensemble_size: int = 3
    model_epochs: int = 100
    model_hidden: tuple = (200, 200, 200)
    # representation stage
    variant: str = "full"
    rounds: int = 200
    policy_steps_per_round: int = 50
    encoder_steps_per_round: int = 50
    rollout_horizon: int = 5
    rollout_batch: int = 64
    window_length: int = 32
    z_dim: int = 8
    embed_dim: int = 64
    windows_per_task: int = 16
    lambda1: float = 1.0
    lambda2: float = 1.0
    sign_flip_adv: bool = False
    temperature: float = 1.0
    encoder_lr: float = 1e-3
    mix_offline_contexts: bool = True
    offline_encoder_steps: int = -1   # -1: rounds * encoder_steps_per_round
    # meta-policy stage
    bc_weight: float = 2.5
    meta_epochs: int = 20
    meta_steps_per_epoch: int = 1000
    # evaluation stage
    eval_episodes: int = 5
    include_unseen: bool = True
    unseen_pool_size: int = 2000
    diag_windows: int = 128
    # run
    seed: int = 0
    out_root: str = "runs/default"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}")
        if self.checkpoints_n not in (1, 3, 5):
            raise ConfigurationError("checkpoints_n must be 1, 3, or 5")
        if self.budget % self.checkpoints_n != 0:
            raise ConfigurationError("budget must divide evenly across checkpoints")
        if self.behavior_steps < 10 * self.checkpoint_interval:
            raise ConfigurationError("behavior_steps must be >= 10x checkpoint_interval")
        if "REDAUG_SEED" in os.environ:
            self.seed = int(os.environ["REDAUG_SEED"])
        self.behavior_hidden = tuple(self.behavior_hidden)
        self.model_hidden = tuple(self.model_hidden)

    def resolved(self) -> dict:
        out = dataclasses.asdict(self)
        if out["test_pool_size"] < 0:
            out["test_pool_size"] = self.budget // 5
        if out["offline_encoder_steps"] < 0:
            out["offline_encoder_steps"] = self.rounds * self.encoder_steps_per_round
        out["behavior_hidden"] = list(self.behavior_hidden)
        out["model_hidden"] = list(self.model_hidden)
        return out

    def fingerprint(self, fields=None) -> str:
        payload = self.resolved()
        payload.pop("out_root")  # location is not content
        if fields is not None:
            payload = {k: payload[k] for k in sorted(fields)}
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_json_file(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        return cls(**payload)


DATA_FIELDS = ("family", "varied", "checkpoints_n", "episode_horizon",
               "behavior_steps", "checkpoint_interval", "behavior_hidden",
               "behavior_update_every", "budget", "test_pool_size", "data_seed")
MODEL_FIELDS = DATA_FIELDS + ("ensemble_size", "model_epochs", "model_hidden", "seed")
ENCODER_FIELDS = MODEL_FIELDS + (
    "variant", "rounds", "policy_steps_per_round", "encoder_steps_per_round",
    "rollout_horizon", "rollout_batch", "window_length", "z_dim", "embed_dim",
    "windows_per_task", "lambda1", "lambda2", "sign_flip_adv", "temperature",
    "encoder_lr", "mix_offline_contexts", "offline_encoder_steps")
POLICY_FIELDS = ENCODER_FIELDS + ("bc_weight", "meta_epochs", "meta_steps_per_epoch")
REPORT_FIELDS = POLICY_FIELDS + ("eval_episodes", "include_unseen",
                                 "unseen_pool_size", "diag_windows")


def _stamp(stage_dir, fingerprint):
    with open(os.path.join(stage_dir, "fingerprint.json"), "w") as fh:
        json.dump({"fingerprint": fingerprint}, fh)


def stage_cached(stage_dir, fingerprint) -> bool:
    path = os.path.join(stage_dir, "fingerprint.json")
    if not os.path.exists(path):
        return False
    with open(path) as fh:
        return json.load(fh).get("fingerprint") == fingerprint


def _require_artifacts(stage_dir, marker, what):
    if stage_dir is None or not os.path.exists(os.path.join(stage_dir, marker)):
        raise ConfigurationError(
            f"cannot proceed: {what} artifacts not found under {stage_dir!r}")


def train_task_specs(config) -> list:
    return task_grid(config.family, config.varied, train=True,
                     episode_horizon=config.episode_horizon,
                     base_seed=config.data_seed)


def unseen_task_specs(config) -> list:
    return task_grid(config.family, config.varied, train=False,
                     episode_horizon=config.episode_horizon,
                     base_seed=config.data_seed)


def run_data_stage(config, out_dir):
    fp = config.fingerprint(DATA_FIELDS)
    if stage_cached(out_dir, fp):
        return out_dir
    os.makedirs(out_dir, exist_ok=True)
    specs = train_task_specs(config)
    for task_id, spec in enumerate(specs):
        records = datamod.train_behavior_policy(
            spec, config.behavior_steps, config.checkpoint_interval,
            seed=derive_seed(config.data_seed, "behavior", task_id),
            hidden=config.behavior_hidden,
            update_every=config.behavior_update_every)
        selected = datamod.select_checkpoints(records, config.checkpoints_n)
        dataset = datamod.collect_dataset(
            spec, records, selected, config.budget, task_id=task_id,
            test_pool_size=config.resolved()["test_pool_size"],
            seed=derive_seed(config.data_seed, "collect", task_id))
        task_dir = os.path.join(out_dir, f"task{task_id}")
        datamod.save_checkpoints(records, os.path.join(task_dir, "checkpoints"))
        datamod.save_dataset(dataset, os.path.join(task_dir, "dataset"))
    with open(os.path.join(out_dir, "tasks.json"), "w") as fh:
        json.dump({"tasks": [json.loads(s.to_json()) for s in specs]},
                  fh, indent=2, sort_keys=True)
    _stamp(out_dir, fp)
    return out_dir


def load_stage_datasets(data_dir):
    _require_artifacts(data_dir, "tasks.json", "dataset")
    with open(os.path.join(data_dir, "tasks.json")) as fh:
        n = len(json.load(fh)["tasks"])
    return [datamod.load_dataset(os.path.join(data_dir, f"task{i}", "dataset"))
            for i in range(n)]


def run_models_stage(config, data_dir, out_dir):
    fp = config.fingerprint(MODEL_FIELDS)
    if stage_cached(out_dir, fp):
        return out_dir
    datasets = load_stage_datasets(data_dir)
    os.makedirs(out_dir, exist_ok=True)
    reward_model = fit_reward(datasets, config.model_epochs,
                              hidden=config.model_hidden,
                              seed=derive_seed(config.seed, "reward"))
    ensembles = []
    for ds in datasets:
        ensemble = fit_dynamics(ds, m=config.ensemble_size,
                                epochs=config.model_epochs,
                                hidden=config.model_hidden,
                                seed=derive_seed(config.seed, "dyn", ds.task_id))
        ensemble.reward_model = reward_model
        ensembles.append(ensemble)
    save_ensembles(ensembles, reward_model, out_dir)
    _stamp(out_dir, fp)
    return out_dir


def run_encoder_stage(config, data_dir, models_dir, out_dir):
    fp = config.fingerprint(ENCODER_FIELDS)
    if stage_cached(out_dir, fp):
        return out_dir
    datasets = load_stage_datasets(data_dir)
    if config.variant == "no-model":
        encoder, _ = train_encoder_on_offline_contexts(
            datasets, steps=config.resolved()["offline_encoder_steps"],
            windows_per_task=config.windows_per_task,
            window_length=config.window_length, z_dim=config.z_dim,
            embed_dim=config.embed_dim, temperature=config.temperature,
            lr=config.encoder_lr, seed=derive_seed(config.seed, "encoder"))
    else:
        _require_artifacts(models_dir, "manifest.json", "dynamics ensemble")
        ensembles, _ = load_ensembles(models_dir, hidden=config.model_hidden)
        encoder, _ = run_representation_rounds(
            datasets, ensembles, variant=config.variant, rounds=config.rounds,
            policy_steps=config.policy_steps_per_round,
            encoder_steps=config.encoder_steps_per_round,
            rollout_horizon=config.rollout_horizon,
            rollout_batch=config.rollout_batch,
            window_length=config.window_length, z_dim=config.z_dim,
            embed_dim=config.embed_dim, windows_per_task=config.windows_per_task,
            lambda1=config.lambda1, lambda2=config.lambda2,
            sign_flip_adv=config.sign_flip_adv, temperature=config.temperature,
            lr=config.encoder_lr,
            mix_offline_contexts=config.mix_offline_contexts,
            seed=derive_seed(config.seed, "encoder"))
    os.makedirs(out_dir, exist_ok=True)
    save_encoder(encoder, out_dir)
    _stamp(out_dir, fp)
    return out_dir


def run_policy_stage(config, data_dir, encoder_dir, out_dir):
    fp = config.fingerprint(POLICY_FIELDS)
    if stage_cached(out_dir, fp):
        return out_dir
    _require_artifacts(encoder_dir, "encoder.pt", "encoder")
    datasets = load_stage_datasets(data_dir)
    encoder = load_encoder(encoder_dir)
    policy = train_meta_policy(
        datasets, encoder, epochs=config.meta_epochs,
        steps_per_epoch=config.meta_steps_per_epoch,
        window_length=config.window_length, bc_weight=config.bc_weight,
        seed=derive_seed(config.seed, "meta"))
    policy.save(out_dir)
    _stamp(out_dir, fp)
    return out_dir


def _context_pool_for_unseen(config, data_dir, spec, task_id):
    """Roll held-out behavior checkpoints on the unseen task to form its
    off-policy context pool."""
    mid_task = len(train_task_specs(config)) // 2
    records = datamod.load_checkpoints(
        os.path.join(data_dir, f"task{mid_task}", "checkpoints"))
    selected_ids = {r.checkpoint_id for r in datamod.select_checkpoints(
        records, config.checkpoints_n)}
    holdout = [r for r in records if r.checkpoint_id not in selected_ids]
    return datamod.collect_context_pool(
        spec, holdout, config.unseen_pool_size, task_id=task_id,
        seed=derive_seed(config.data_seed, "unseen-pool", task_id))


def _mult(spec: TaskSpec, varied):
    return spec.gravity_scale if varied == "gravity" else spec.damping_scale


def run_report_stage(config, data_dir, encoder_dir, policy_dir, out_dir):
    fp = config.fingerprint(REPORT_FIELDS)
    if stage_cached(out_dir, fp):
        return out_dir
    _require_artifacts(policy_dir, "policy.pt", "meta-policy")
    _require_artifacts(encoder_dir, "encoder.pt", "encoder")
    os.makedirs(out_dir, exist_ok=True)

    datasets = load_stage_datasets(data_dir)
    encoder = load_encoder(encoder_dir)
    policy = MetaPolicy.load(policy_dir)

    eval_sets = [("seen", spec, datasets[i])
                 for i, spec in enumerate(train_task_specs(config))]
    if config.include_unseen:
        for j, spec in enumerate(unseen_task_specs(config)):
            pool = _context_pool_for_unseen(config, data_dir, spec, task_id=100 + j)
            eval_sets.append(("unseen", spec, pool))

    diagnostics = encoder_diagnostics(
        encoder, datasets, out_dir=out_dir,
        n_windows=config.diag_windows, window_length=config.window_length,
        seed=derive_seed(config.seed, "diag"))

    for protocol in ("on_policy", "off_policy"):
        per_task = {}
        for kind, spec, pool in eval_sets:
            label = f"{kind}_{config.varied}_{_mult(spec, config.varied)}"
            eval_seed = derive_seed(config.seed, "eval", protocol, label)
            if protocol == "on_policy":
                returns = eval_on_policy(policy, encoder, spec,
                                         episodes=config.eval_episodes,
                                         window_length=config.window_length,
                                         seed=eval_seed)
            else:
                returns = eval_off_policy(policy, encoder, spec, pool,
                                          episodes=config.eval_episodes,
                                          window_length=config.window_length,
                                          seed=eval_seed)
            per_task[label] = summarize_returns(spec, returns)
        report = EvalReport(
            protocol=protocol, per_task=per_task,
            config_fingerprint=config.fingerprint(),
            d_phi=diagnostics["d_phi"],
            embedding_export="embeddings.csv")
        with open(os.path.join(out_dir, f"report_{protocol}.json"), "w") as fh:
            fh.write(report.to_json())

    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(config.resolved(), fh, indent=2, sort_keys=True)
    _stamp(out_dir, fp)
    return out_dir


def run_pipeline(config: ExperimentConfig) -> str:
    """Execute all stages in order under config.out_root, caching by fingerprint."""
    run_dir = config.out_root
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "resolved_config.json"), "w") as fh:
        json.dump(config.resolved(), fh, indent=2, sort_keys=True)
    data_dir = os.path.join(run_dir, "data")
    models_dir = os.path.join(run_dir, "models")
    encoder_dir = os.path.join(run_dir, "encoder")
    policy_dir = os.path.join(run_dir, "policy")
    reports_dir = os.path.join(run_dir, "reports")
    run_data_stage(config, data_dir)
    if config.variant != "no-model":
        run_models_stage(config, data_dir, models_dir)
    run_encoder_stage(config, data_dir,
                      models_dir if config.variant != "no-model" else None,
                      encoder_dir)
    run_policy_stage(config, data_dir, encoder_dir, policy_dir)
    run_report_stage(config, data_dir, encoder_dir, policy_dir, reports_dir)
    return run_dir


def load_reports(run_dir):
    out = {}
    for protocol in ("on_policy", "off_policy"):
        path = os.path.join(run_dir, "reports", f"report_{protocol}.json")
        with open(path) as fh:
            out[protocol] = EvalReport.from_json(fh.read())
    return out


def comparison_table(run_dirs):
    """Cross-run comparison of mean returns and d_phi (rows + text table)."""
    rows = []
    for run_dir in run_dirs:
        with open(os.path.join(run_dir, "resolved_config.json")) as fh:
            cfg = json.load(fh)
        reports = load_reports(run_dir)
        entry = {"run": os.path.basename(os.path.normpath(run_dir)),
                 "variant": cfg["variant"], "seed": cfg["seed"]}
        for protocol, report in reports.items():
            means = [v["mean"] for v in report.per_task.values()]
            entry[f"{protocol}_mean"] = float(np.mean(means))
        d_vals = [v for v in reports["on_policy"].d_phi.values() if v is not None]
        entry["d_phi_mean"] = float(np.mean(d_vals)) if d_vals else None
        rows.append(entry)
    header = ["run", "variant", "seed", "on_policy_mean", "off_policy_mean", "d_phi_mean"]
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(
            f"{row[h]:.3f}" if isinstance(row[h], float) else str(row[h])
            for h in header))
    return rows, "\n".join(lines)
