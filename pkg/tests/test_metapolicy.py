import numpy as np
import pytest
import torch

from redaug.data import OfflineDataset
from redaug.encoder import ContextEncoder
from redaug.envs import TaskSpec
from redaug.errors import ConfigurationError, UsageError
from redaug.metapolicy import MetaPolicy, train_meta_policy

from conftest import random_policy_dataset


def deterministic_action_dataset(task_id=0, n=800, seed=0):
    """Trajectory-consistent pendulum-dimension data whose action is a fixed
    function of state, so a behavior-cloning limit has a well-defined target."""
    rng = np.random.default_rng(seed)
    w = np.array([0.7, -1.1, 0.4], np.float32)
    states = np.zeros((n, 3), np.float32)
    next_states = np.zeros((n, 3), np.float32)
    dones = np.zeros(n, bool)
    s = rng.uniform(-1, 1, 3).astype(np.float32)
    for t in range(n):
        states[t] = s
        s2 = np.clip(s + 0.05 * rng.normal(size=3), -1, 1).astype(np.float32)
        next_states[t] = s2
        if (t + 1) % 100 == 0:
            dones[t] = True
            s = rng.uniform(-1, 1, 3).astype(np.float32)
        else:
            s = s2
    actions = (0.9 * np.tanh(states @ w)).reshape(n, 1).astype(np.float32)
    return OfflineDataset(
        task_id=task_id, spec=TaskSpec(family="pendulum", seed=seed),
        states=states, actions=actions,
        rewards=rng.normal(size=n).astype(np.float32),
        next_states=next_states, dones=dones,
        checkpoint_ids=np.zeros(n, np.uint32), checkpoint_split={0: "train"})


@pytest.fixture(scope="module")
def frozen_encoder():
    torch.manual_seed(7)
    return ContextEncoder(3, 1)


class TestTraining:
    def test_encoder_untouched_bitwise(self, frozen_encoder):
        datasets = [random_policy_dataset(gravity=0.7, n_episodes=3, seed=61, task_id=0),
                    random_policy_dataset(gravity=1.4, n_episodes=3, seed=62, task_id=1)]
        before = {k: v.detach().clone() for k, v in frozen_encoder.state_dict().items()}
        train_meta_policy(datasets, frozen_encoder, epochs=1, steps_per_epoch=20,
                          window_length=8, hidden=(32, 32), seed=0)
        after = frozen_encoder.state_dict()
        for key, tensor in before.items():
            assert torch.equal(tensor, after[key]), key

    def test_bc_limit_recovers_dataset_actions(self, frozen_encoder):
        ds = deterministic_action_dataset()
        policy = train_meta_policy(
            [ds], frozen_encoder, epochs=1, steps_per_epoch=600,
            window_length=4, bc_weight=1e4, hidden=(64, 64), lr=1e-3, seed=1)
        rows = np.arange(0, 400, 7)
        errs = []
        for i in rows:
            with torch.no_grad():
                window_rows = np.arange(i, i + 4) % len(ds)
                z = frozen_encoder.encode_batch([_window_of(ds, i)])[0].numpy()
            action = policy.act(ds.states[i], z, deterministic=True)
            errs.append(np.abs(action - ds.actions[i]).max())
        assert np.max(errs) < 0.05

    def test_empty_datasets_rejected(self, frozen_encoder):
        with pytest.raises(ConfigurationError):
            train_meta_policy([], frozen_encoder)


def _window_of(ds, start, length=4):
    from redaug.encoder import make_window
    end = start + length
    if end >= len(ds):
        start, end = 0, length
    return make_window(ds.states[start:end], ds.actions[start:end],
                       ds.next_states[end - 1], ds.actions[end - 1], length)


class TestAct:
    def _policy(self):
        torch.manual_seed(0)
        return MetaPolicy(state_dim=3, action_dim=1, z_dim=8, hidden=(16, 16))

    def test_dimension_mismatch(self):
        policy = self._policy()
        with pytest.raises(UsageError):
            policy.act(np.zeros(4), np.zeros(8))
        with pytest.raises(UsageError):
            policy.act(np.zeros(3), np.zeros(5))

    def test_deterministic_idempotent(self):
        policy = self._policy()
        s, z = np.ones(3), np.ones(8)
        a1 = policy.act(s, z, deterministic=True)
        a2 = policy.act(s, z, deterministic=True)
        assert np.array_equal(a1, a2)

    def test_bounds_over_random_inputs(self):
        policy = self._policy()
        rng = np.random.default_rng(0)
        for _ in range(200):
            a = policy.act(rng.normal(size=3) * 5, rng.normal(size=8) * 5)
            assert np.all(np.abs(a) <= 1.0)

    def test_seeded_sampling_reproducible(self):
        policy = self._policy()
        s, z = np.ones(3) * 0.3, np.zeros(8)
        a1 = policy.act(s, z, deterministic=False, seed=42)
        a2 = policy.act(s, z, deterministic=False, seed=42)
        a3 = policy.act(s, z, deterministic=False, seed=43)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, a3)

    def test_conditioning_separates_actions_after_training(self, frozen_encoder):
        datasets = [random_policy_dataset(gravity=0.7, n_episodes=3, seed=71, task_id=0),
                    random_policy_dataset(gravity=1.6, n_episodes=3, seed=72, task_id=1)]
        policy = train_meta_policy(datasets, frozen_encoder, epochs=1,
                                   steps_per_epoch=120, window_length=8,
                                   hidden=(32, 32), seed=3)
        rng = np.random.default_rng(0)
        z1, z2 = np.full(8, 2.0, np.float32), np.full(8, -2.0, np.float32)
        gaps = [np.linalg.norm(policy.act(s, z1, deterministic=True)
                               - policy.act(s, z2, deterministic=True))
                for s in rng.normal(size=(50, 3))]
        assert np.mean(gaps) > 0.0

    def test_save_load_round_trip(self, tmp_path):
        policy = self._policy()
        policy.save(str(tmp_path / "p"))
        loaded = MetaPolicy.load(str(tmp_path / "p"))
        s, z = np.ones(3) * 0.1, np.ones(8) * 0.2
        assert np.array_equal(policy.act(s, z, deterministic=True),
                              loaded.act(s, z, deterministic=True))
        assert loaded.bc_weight == policy.bc_weight


def test_meta_policy_stage_is_offline_only():
    # the module must never touch the environment layer
    import inspect
    import redaug.metapolicy as mp
    source = inspect.getsource(mp)
    assert "make_env" not in source
    assert "redaug.envs" not in source and "from .envs" not in source
