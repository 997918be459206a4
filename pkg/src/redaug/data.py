"""Offline dataset construction.

Behavior policies are trained online per task with SAC; snapshots taken at a
fixed interval become checkpoints. A restricted subset of checkpoints (1, 3,
or 5) collects the training transitions, and held-out checkpoints fill a test
pool used by the off-policy evaluation protocol.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .envs import TaskSpec, make_env, env_dims
from .errors import ConfigurationError, DataIntegrityError
from .networks import SquashedGaussianActor
from .sac import SACLearner
from .seeding import derive_seed, seed_torch

SCHEMA_VERSION = 1

# checkpoint index patterns for a 50-checkpoint training run; rescaled
# proportionally when the run produced a different number of checkpoints
SELECTION_PATTERNS = {1: (25,), 3: (5, 25, 45), 5: (5, 10, 25, 40, 45)}


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    checkpoint_id: int
    task_id: int


@dataclass
class CheckpointRecord:
    checkpoint_id: int
    policy_params: dict
    eval_return: float


@dataclass
class OfflineDataset:
    """Per-task transitions stored column-wise, partitioned by the checkpoint
    that collected them."""

    task_id: int
    spec: TaskSpec
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    checkpoint_ids: np.ndarray
    checkpoint_split: dict = field(default_factory=dict)

    def __post_init__(self):
        s_dim, a_dim = env_dims(self.spec.family)
        n = len(self.states)
        if self.states.shape != (n, s_dim) or self.next_states.shape != (n, s_dim):
            raise DataIntegrityError(
                f"state dimension mismatch: expected {s_dim} for {self.spec.family}")
        if self.actions.shape != (n, a_dim):
            raise DataIntegrityError(
                f"action dimension mismatch: expected {a_dim} for {self.spec.family}")
        for name in ("states", "actions", "rewards", "next_states"):
            arr = getattr(self, name)
            bad = np.flatnonzero(~np.isfinite(arr).reshape(n, -1).all(axis=1))
            if bad.size:
                raise DataIntegrityError(f"non-finite {name} at record {int(bad[0])}")
        missing = set(np.unique(self.checkpoint_ids).tolist()) - set(self.checkpoint_split)
        if missing:
            raise DataIntegrityError(
                f"checkpoint ids {sorted(missing)} absent from checkpoint_split")

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i) -> Transition:
        return Transition(
            state=self.states[i], action=self.actions[i],
            reward=float(self.rewards[i]), next_state=self.next_states[i],
            done=bool(self.dones[i]), checkpoint_id=int(self.checkpoint_ids[i]),
            task_id=self.task_id)

    def split_indices(self, split: str) -> np.ndarray:
        wanted = {cid for cid, s in self.checkpoint_split.items() if s == split}
        mask = np.isin(self.checkpoint_ids, list(wanted))
        return np.flatnonzero(mask)

    @property
    def train_indices(self):
        return self.split_indices("train")

    @property
    def test_indices(self):
        return self.split_indices("test")


class ReplayBuffer:
    """Flat ring buffer for online SAC."""

    def __init__(self, capacity, s_dim, a_dim):
        self.capacity = capacity
        self.states = np.zeros((capacity, s_dim), dtype=np.float32)
        self.actions = np.zeros((capacity, a_dim), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.next_states = np.zeros((capacity, s_dim), dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=np.float32)
        self.size = 0
        self.pos = 0

    def add(self, s, a, r, s2, done):
        i = self.pos
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self.dones[i] = float(done)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "obs": torch.as_tensor(self.states[idx]),
            "action": torch.as_tensor(self.actions[idx]),
            "reward": torch.as_tensor(self.rewards[idx]),
            "next_obs": torch.as_tensor(self.next_states[idx]),
            "done": torch.as_tensor(self.dones[idx]),
        }


def evaluate_policy(actor, spec: TaskSpec, episodes=10, seed_label=0):
    """Mean undiscounted return of the deterministic policy over seeded episodes.

    Episodes share the horizon, so they run in lockstep with batched actions.
    """
    envs = [make_env(spec) for _ in range(episodes)]
    obs = np.stack([env.reset(seed=derive_seed(spec.seed, "eval", seed_label, ep))
                    for ep, env in enumerate(envs)])
    totals = np.zeros(episodes)
    for _ in range(spec.episode_horizon):
        with torch.no_grad():
            actions = actor.mean_action(torch.as_tensor(obs, dtype=torch.float32)).numpy()
        for i, env in enumerate(envs):
            result = env.step(actions[i])
            totals[i] += result.reward
            obs[i] = result.next_observation
    return float(totals.mean())


def train_behavior_policy(spec: TaskSpec, total_steps: int, checkpoint_interval: int,
                          *, seed=0, hidden=(128, 128), batch_size=256, lr=3e-4,
                          gamma=0.99, warmup_steps=500, update_every=2,
                          eval_episodes=10):
    """Online SAC on one task; returns one CheckpointRecord per interval."""
    if checkpoint_interval <= 0:
        raise ConfigurationError("checkpoint_interval must be positive")
    if total_steps < 10 * checkpoint_interval:
        raise ConfigurationError("total_steps must be at least 10x checkpoint_interval")

    seed_torch(seed, "behavior", spec.family, spec.seed)
    rng = np.random.default_rng(derive_seed(seed, "behavior-rng", spec.seed))
    s_dim, a_dim = env_dims(spec.family)
    learner = SACLearner(s_dim, a_dim, hidden=hidden, lr=lr, gamma=gamma)
    buffer = ReplayBuffer(total_steps, s_dim, a_dim)
    env = make_env(spec)

    episode = 0
    obs = env.reset(seed=derive_seed(seed, "behavior-reset", spec.seed, episode))
    records = []
    for step in range(1, total_steps + 1):
        if step <= warmup_steps:
            action = rng.uniform(-1.0, 1.0, size=a_dim)
        else:
            action = learner.act(obs)
        result = env.step(action)
        # horizon end is a time limit, not a terminal state: bootstrap through it
        buffer.add(obs, action, result.reward, result.next_observation, done=False)
        obs = result.next_observation
        if result.done:
            episode += 1
            obs = env.reset(seed=derive_seed(seed, "behavior-reset", spec.seed, episode))
        if step > warmup_steps and step % update_every == 0 and buffer.size >= batch_size:
            learner.update(buffer.sample(batch_size, rng))
        if step % checkpoint_interval == 0:
            cid = step // checkpoint_interval
            ret = evaluate_policy(learner.actor, spec, eval_episodes, seed_label=cid)
            params = {
                "actor": {k: v.detach().clone() for k, v in learner.actor.state_dict().items()},
                "hidden": list(hidden),
            }
            records.append(CheckpointRecord(checkpoint_id=cid, policy_params=params,
                                            eval_return=ret))
    return records


def actor_from_params(spec: TaskSpec, policy_params: dict) -> SquashedGaussianActor:
    s_dim, a_dim = env_dims(spec.family)
    actor = SquashedGaussianActor(s_dim, a_dim, hidden=tuple(policy_params["hidden"]))
    actor.load_state_dict(policy_params["actor"])
    return actor


def select_checkpoints(records, n: int):
    """Pick the 1/3/5-checkpoint index pattern of a 50-checkpoint run, rescaled
    proportionally to the actual run length (half-up rounding, minimum 1)."""
    if n not in SELECTION_PATTERNS:
        raise ConfigurationError(f"checkpoint count must be one of {sorted(SELECTION_PATTERNS)}")
    count = len(records)
    if count < 20:
        raise ConfigurationError(f"need at least 20 checkpoints to select from, got {count}")
    indices = [max(1, int(np.floor(i * count / 50 + 0.5))) for i in SELECTION_PATTERNS[n]]
    if len(set(indices)) != len(indices):
        raise ConfigurationError(f"rescaled checkpoint indices collide: {indices}")
    return [records[i - 1] for i in indices]


def _rollout_transitions(spec, actor, count, checkpoint_id, seed, seed_label):
    """Collect exactly `count` transitions with the stochastic policy."""
    env = make_env(spec)
    rows = {"s": [], "a": [], "r": [], "s2": [], "d": []}
    episode = 0
    collected = 0
    while collected < count:
        obs = env.reset(seed=derive_seed(seed, seed_label, checkpoint_id, episode))
        done = False
        while not done and collected < count:
            with torch.no_grad():
                action, _ = actor.sample(torch.as_tensor(obs, dtype=torch.float32))
            action = action.numpy()
            result = env.step(action)
            rows["s"].append(obs)
            rows["a"].append(action.astype(np.float32))
            rows["r"].append(result.reward)
            rows["s2"].append(result.next_observation)
            rows["d"].append(result.done)
            obs = result.next_observation
            done = result.done
            collected += 1
        episode += 1
    return rows


def collect_dataset(spec: TaskSpec, records, selected, budget: int, *,
                    task_id=0, test_pool_size=None, seed=0) -> OfflineDataset:
    """Equal-share collection over the selected checkpoints plus a test pool
    drawn from the non-selected ones."""
    if not selected:
        raise ConfigurationError("selection is empty")
    if budget % len(selected) != 0:
        raise ConfigurationError(
            f"budget {budget} not divisible by {len(selected)} checkpoints")
    if test_pool_size is None:
        test_pool_size = budget // 5

    seed_torch(seed, "collect", spec.family, spec.seed, task_id)
    selected_ids = {r.checkpoint_id for r in selected}
    per_train = budget // len(selected)

    columns = {"s": [], "a": [], "r": [], "s2": [], "d": [], "c": []}
    split = {}

    def _extend(rows, cid):
        columns["s"].extend(rows["s"])
        columns["a"].extend(rows["a"])
        columns["r"].extend(rows["r"])
        columns["s2"].extend(rows["s2"])
        columns["d"].extend(rows["d"])
        columns["c"].extend([cid] * len(rows["s"]))

    for record in selected:
        actor = actor_from_params(spec, record.policy_params)
        rows = _rollout_transitions(spec, actor, per_train, record.checkpoint_id,
                                    seed, "collect-train")
        _extend(rows, record.checkpoint_id)
        split[record.checkpoint_id] = "train"

    holdout = [r for r in records if r.checkpoint_id not in selected_ids]
    if test_pool_size > 0 and holdout:
        # keep each contributor's share at least one episode long so the pool
        # always yields full context windows
        n_contrib = max(1, min(len(holdout),
                               test_pool_size // spec.episode_horizon))
        picks = np.unique(np.linspace(0, len(holdout) - 1, n_contrib).round()
                          .astype(int))
        contributors = [holdout[i] for i in picks]
        shares = [test_pool_size // len(contributors)] * len(contributors)
        for i in range(test_pool_size % len(contributors)):
            shares[i] += 1
        for record, share in zip(contributors, shares):
            if share == 0:
                continue
            actor = actor_from_params(spec, record.policy_params)
            rows = _rollout_transitions(spec, actor, share, record.checkpoint_id,
                                        seed, "collect-test")
            _extend(rows, record.checkpoint_id)
            split[record.checkpoint_id] = "test"

    return OfflineDataset(
        task_id=task_id,
        spec=spec,
        states=np.asarray(columns["s"], dtype=np.float32),
        actions=np.asarray(columns["a"], dtype=np.float32).reshape(len(columns["a"]), -1),
        rewards=np.asarray(columns["r"], dtype=np.float32),
        next_states=np.asarray(columns["s2"], dtype=np.float32),
        dones=np.asarray(columns["d"], dtype=bool),
        checkpoint_ids=np.asarray(columns["c"], dtype=np.uint32),
        checkpoint_split=split,
    )


def collect_context_pool(spec: TaskSpec, records, size: int, *, task_id=0,
                         seed=0) -> OfflineDataset:
    """Context-only pool: the given checkpoints roll on `spec` in near-equal
    shares, every transition marked test. Used to evaluate the off-policy
    protocol on tasks that have no offline dataset of their own."""
    if not records:
        raise ConfigurationError("no checkpoints to build a context pool from")
    seed_torch(seed, "context-pool", spec.family, spec.seed, task_id)
    columns = {"s": [], "a": [], "r": [], "s2": [], "d": [], "c": []}
    split = {}
    n_contrib = max(1, min(len(records), size // spec.episode_horizon))
    picks = np.unique(np.linspace(0, len(records) - 1, n_contrib).round().astype(int))
    records = [records[i] for i in picks]
    shares = [size // len(records)] * len(records)
    for i in range(size % len(records)):
        shares[i] += 1
    for record, share in zip(records, shares):
        if share == 0:
            continue
        actor = actor_from_params(spec, record.policy_params)
        rows = _rollout_transitions(spec, actor, share, record.checkpoint_id,
                                    seed, "context-pool")
        columns["s"].extend(rows["s"])
        columns["a"].extend(rows["a"])
        columns["r"].extend(rows["r"])
        columns["s2"].extend(rows["s2"])
        columns["d"].extend(rows["d"])
        columns["c"].extend([record.checkpoint_id] * len(rows["s"]))
        split[record.checkpoint_id] = "test"
    return OfflineDataset(
        task_id=task_id,
        spec=spec,
        states=np.asarray(columns["s"], dtype=np.float32),
        actions=np.asarray(columns["a"], dtype=np.float32).reshape(len(columns["a"]), -1),
        rewards=np.asarray(columns["r"], dtype=np.float32),
        next_states=np.asarray(columns["s2"], dtype=np.float32),
        dones=np.asarray(columns["d"], dtype=bool),
        checkpoint_ids=np.asarray(columns["c"], dtype=np.uint32),
        checkpoint_split=split,
    )


def _record_dtype(s_dim, a_dim):
    return np.dtype([
        ("state", "<f4", (s_dim,)),
        ("action", "<f4", (a_dim,)),
        ("reward", "<f4"),
        ("next_state", "<f4", (s_dim,)),
        ("done", "u1"),
        ("checkpoint_id", "<u4"),
    ])


def save_dataset(dataset: OfflineDataset, path: str):
    """Write manifest.json + transitions.bin under `path`."""
    os.makedirs(path, exist_ok=True)
    s_dim, a_dim = env_dims(dataset.spec.family)
    records = np.zeros(len(dataset), dtype=_record_dtype(s_dim, a_dim))
    records["state"] = dataset.states
    records["action"] = dataset.actions
    records["reward"] = dataset.rewards
    records["next_state"] = dataset.next_states
    records["done"] = dataset.dones.astype(np.uint8)
    records["checkpoint_id"] = dataset.checkpoint_ids
    records.tofile(os.path.join(path, "transitions.bin"))

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "task_id": dataset.task_id,
        "task_spec": json.loads(dataset.spec.to_json()),
        "count": len(dataset),
        "state_dim": s_dim,
        "action_dim": a_dim,
        "checkpoint_split": {str(k): v for k, v in dataset.checkpoint_split.items()},
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_dataset(path: str) -> OfflineDataset:
    manifest_path = os.path.join(path, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataIntegrityError(f"unreadable manifest at {manifest_path}: {exc}") from exc
    for key in ("schema_version", "task_id", "task_spec", "count",
                "state_dim", "action_dim", "checkpoint_split"):
        if key not in manifest:
            raise DataIntegrityError(f"manifest missing field {key!r}")
    if manifest["schema_version"] != SCHEMA_VERSION:
        raise DataIntegrityError(
            f"unsupported schema version {manifest['schema_version']}")

    spec = TaskSpec.from_json(json.dumps(manifest["task_spec"]))
    s_dim, a_dim = env_dims(spec.family)
    if (manifest["state_dim"], manifest["action_dim"]) != (s_dim, a_dim):
        raise DataIntegrityError(
            f"manifest dims ({manifest['state_dim']}, {manifest['action_dim']}) do not "
            f"match family {spec.family} ({s_dim}, {a_dim})")

    dtype = _record_dtype(s_dim, a_dim)
    bin_path = os.path.join(path, "transitions.bin")
    raw_size = os.path.getsize(bin_path)
    if raw_size != manifest["count"] * dtype.itemsize:
        got = raw_size // dtype.itemsize
        raise DataIntegrityError(
            f"transitions.bin holds {got} whole records (+{raw_size % dtype.itemsize} "
            f"trailing bytes), manifest promises {manifest['count']}; first missing or "
            f"corrupt record index {min(got, manifest['count'])}")
    records = np.fromfile(bin_path, dtype=dtype)

    return OfflineDataset(
        task_id=int(manifest["task_id"]),
        spec=spec,
        states=records["state"].copy(),
        actions=records["action"].copy(),
        rewards=records["reward"].astype(np.float32).copy(),
        next_states=records["next_state"].copy(),
        dones=records["done"].astype(bool),
        checkpoint_ids=records["checkpoint_id"].copy(),
        checkpoint_split={int(k): v for k, v in manifest["checkpoint_split"].items()},
    )


def save_checkpoints(records, path: str):
    os.makedirs(path, exist_ok=True)
    meta = []
    for record in records:
        blob = f"checkpoint_{record.checkpoint_id:04d}.pt"
        torch.save(record.policy_params, os.path.join(path, blob))
        meta.append({"checkpoint_id": record.checkpoint_id,
                     "eval_return": record.eval_return, "blob": blob})
    with open(os.path.join(path, "checkpoints.json"), "w") as fh:
        json.dump({"schema_version": SCHEMA_VERSION, "checkpoints": meta},
                  fh, indent=2, sort_keys=True)


def load_checkpoints(path: str):
    try:
        with open(os.path.join(path, "checkpoints.json")) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataIntegrityError(f"unreadable checkpoint index in {path}: {exc}") from exc
    records = []
    for item in meta["checkpoints"]:
        params = torch.load(os.path.join(path, item["blob"]), weights_only=True)
        records.append(CheckpointRecord(checkpoint_id=item["checkpoint_id"],
                                        policy_params=params,
                                        eval_return=item["eval_return"]))
    return records
