import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from redaug.data import OfflineDataset
from redaug.envs import TaskSpec, make_env

settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def scripted_point_mass_dataset(n_episodes=40, gravity=0.5, seed=9, task_id=0,
                                checkpoint_id=0, split="train", horizon=100):
    """Interior point-mass data from a waypoint PD controller (damping 0).

    Stays away from the clip boxes, so the transition map is affine in
    (state, action)."""
    spec = TaskSpec(family="point_mass_2d", gravity_scale=gravity,
                    damping_scale=0.0, episode_horizon=horizon, seed=seed)
    env = make_env(spec)
    rng = np.random.default_rng(seed)
    rows = {"s": [], "a": [], "r": [], "s2": [], "d": []}
    for ep in range(n_episodes):
        obs = env.reset(seed=seed * 1000 + ep)
        waypoint = rng.uniform(-3, 3, 2)
        for t in range(horizon):
            if t % 25 == 0:
                waypoint = rng.uniform(-3, 3, 2)
            action = np.clip(1.0 * (waypoint - obs[:2]) - 0.8 * obs[2:], -1, 1)
            result = env.step(action)
            rows["s"].append(obs)
            rows["a"].append(action.astype(np.float32))
            rows["r"].append(result.reward)
            rows["s2"].append(result.next_observation)
            rows["d"].append(result.done)
            obs = result.next_observation
    n = len(rows["s"])
    return OfflineDataset(
        task_id=task_id, spec=spec,
        states=np.asarray(rows["s"], np.float32),
        actions=np.asarray(rows["a"], np.float32),
        rewards=np.asarray(rows["r"], np.float32),
        next_states=np.asarray(rows["s2"], np.float32),
        dones=np.asarray(rows["d"], bool),
        checkpoint_ids=np.full(n, checkpoint_id, np.uint32),
        checkpoint_split={checkpoint_id: split})


def random_policy_dataset(family="pendulum", gravity=1.0, n_episodes=10,
                          seed=3, task_id=0, horizon=100, checkpoint_id=0,
                          split="train"):
    """Uniform-random-action data; cheap generic dataset for structure tests."""
    spec = TaskSpec(family=family, gravity_scale=gravity, damping_scale=1.0,
                    episode_horizon=horizon, seed=seed)
    env = make_env(spec)
    rng = np.random.default_rng(seed)
    rows = {"s": [], "a": [], "r": [], "s2": [], "d": []}
    for ep in range(n_episodes):
        obs = env.reset(seed=seed * 777 + ep)
        for _ in range(horizon):
            action = rng.uniform(-1, 1, env.action_dim)
            result = env.step(action)
            rows["s"].append(obs)
            rows["a"].append(action.astype(np.float32))
            rows["r"].append(result.reward)
            rows["s2"].append(result.next_observation)
            rows["d"].append(result.done)
            obs = result.next_observation
    n = len(rows["s"])
    return OfflineDataset(
        task_id=task_id, spec=spec,
        states=np.asarray(rows["s"], np.float32),
        actions=np.asarray(rows["a"], np.float32).reshape(n, -1),
        rewards=np.asarray(rows["r"], np.float32),
        next_states=np.asarray(rows["s2"], np.float32),
        dones=np.asarray(rows["d"], bool),
        checkpoint_ids=np.full(n, checkpoint_id, np.uint32),
        checkpoint_split={checkpoint_id: split})


@pytest.fixture(scope="session")
def interior_pm_dataset():
    return scripted_point_mass_dataset(n_episodes=40)


@pytest.fixture(scope="session")
def pendulum_dataset():
    return random_policy_dataset(family="pendulum", n_episodes=10)
