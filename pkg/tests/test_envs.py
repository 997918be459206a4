import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from redaug.envs import (DT, PM_GOAL, TaskSpec, env_dims, make_env, task_grid,
                         TRAIN_MULTIPLIERS, TEST_MULTIPLIERS)
from redaug.errors import ConfigurationError, UsageError


def test_seeded_determinism_initial_observation():
    spec = TaskSpec(family="point_mass_2d", gravity_scale=1.0, seed=7)
    obs_a = make_env(spec).reset()
    obs_b = make_env(spec).reset()
    assert np.array_equal(obs_a, obs_b)


def test_trajectory_determinism_bitwise():
    spec = TaskSpec(family="pendulum", gravity_scale=1.3, damping_scale=0.7, seed=11)
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1, 1, size=(50, 1))
    trajs = []
    for _ in range(2):
        env = make_env(spec)
        obs = [env.reset()]
        for a in actions:
            obs.append(env.step(a).next_observation)
        trajs.append(np.stack(obs))
    assert np.array_equal(trajs[0], trajs[1])


def test_point_mass_integrator_hand_values():
    # one semi-implicit Euler step from the origin with unit x-force:
    # v = dt*((1,0) - (0,1)) = (0.05, -0.05); x = dt*v = (0.0025, -0.0025)
    spec = TaskSpec(family="point_mass_2d", gravity_scale=1.0, damping_scale=0.0, seed=1)
    env = make_env(spec)
    env.reset()
    env._pos = np.zeros(2)
    env._vel = np.zeros(2)
    result = env.step([1.0, 0.0])
    assert np.allclose(result.next_observation, [0.0025, -0.0025, 0.05, -0.05])


def test_point_mass_gravity_term_scales_exactly():
    deltas = {}
    for scale in (1.0, 2.0):
        spec = TaskSpec(family="point_mass_2d", gravity_scale=scale,
                        damping_scale=0.0, seed=1)
        env = make_env(spec)
        env.reset()
        env._pos = np.array([0.5, 0.5])
        env._vel = np.array([0.2, 0.1])
        result = env.step([0.0, 0.0])
        deltas[scale] = result.next_observation[3] - 0.1  # vy change
    assert deltas[2.0] == pytest.approx(2.0 * deltas[1.0], abs=1e-12)
    assert deltas[1.0] == pytest.approx(-DT, abs=1e-9)


def test_point_mass_fixed_point_at_goal():
    spec = TaskSpec(family="point_mass_2d", gravity_scale=0.0, damping_scale=1.0, seed=1)
    env = make_env(spec)
    env.reset()
    env._pos = PM_GOAL.copy()
    env._vel = np.zeros(2)
    result = env.step([0.0, 0.0])
    assert result.reward == 0.0
    assert np.allclose(result.next_observation, [3.0, 3.0, 0.0, 0.0])


def test_pendulum_upright_reward_zero():
    spec = TaskSpec(family="pendulum", seed=1)
    env = make_env(spec)
    env.reset()
    env._theta = 0.0
    env._theta_dot = 0.0
    assert make_env(spec).reward_at(np.array([1.0, 0.0, 0.0]), np.array([0.0])) == 0.0
    assert env.step([0.0]).reward == 0.0


def test_pendulum_zero_force_keeps_velocity():
    spec = TaskSpec(family="pendulum", gravity_scale=0.0, damping_scale=0.0, seed=1)
    env = make_env(spec)
    env.reset()
    env._theta = 0.3
    env._theta_dot = 0.8
    for _ in range(10):
        obs = env.step([0.0]).next_observation
        assert obs[2] == pytest.approx(0.8, abs=1e-12)


def test_step_after_done_raises():
    spec = TaskSpec(family="point_mass_2d", episode_horizon=3, seed=1)
    env = make_env(spec)
    env.reset()
    for _ in range(3):
        result = env.step([0.0, 0.0])
    assert result.done
    with pytest.raises(UsageError):
        env.step([0.0, 0.0])


def test_done_exactly_at_horizon():
    spec = TaskSpec(family="pendulum", episode_horizon=5, seed=2)
    env = make_env(spec)
    env.reset()
    flags = [env.step([0.1]).done for _ in range(5)]
    assert flags == [False, False, False, False, True]


def test_reward_shared_across_grid():
    rng = np.random.default_rng(4)
    for family in ("point_mass_2d", "pendulum"):
        specs = task_grid(family, "gravity", train=True) + \
            task_grid(family, "damping", train=False)
        s_dim, a_dim = env_dims(family)
        obs = rng.uniform(-1, 1, s_dim)
        action = rng.uniform(-1, 1, a_dim)
        rewards = {make_env(s).reward_at(obs, action) for s in specs}
        assert len(rewards) == 1


@given(seed=st.integers(0, 2 ** 16), scale=st.sampled_from([0.5, 1.0, 1.5, 10.0]))
def test_observations_stay_in_clip_boxes(seed, scale):
    spec = TaskSpec(family="point_mass_2d", gravity_scale=scale,
                    damping_scale=0.0, episode_horizon=30, seed=seed)
    env = make_env(spec)
    env.reset()
    rng = np.random.default_rng(seed)
    for _ in range(30):
        obs = env.step(rng.uniform(-5, 5, 2)).next_observation  # clipped to [-1,1]
        assert np.all(np.abs(obs[:2]) <= 5.0)
        assert np.all(np.abs(obs[2:]) <= 10.0)
        assert np.all(np.isfinite(obs))


@given(seed=st.integers(0, 2 ** 16))
def test_pendulum_speed_clip(seed):
    spec = TaskSpec(family="pendulum", gravity_scale=10.0, damping_scale=0.0,
                    episode_horizon=30, seed=seed)
    env = make_env(spec)
    env.reset()
    for _ in range(30):
        obs = env.step([1.0]).next_observation
        assert abs(obs[2]) <= 8.0
        assert np.all(np.isfinite(obs))


def test_task_grid_multipliers():
    train = task_grid("point_mass_2d", "gravity", train=True)
    assert [t.gravity_scale for t in train] == list(TRAIN_MULTIPLIERS)
    assert all(t.damping_scale == 1.0 for t in train)

    test = task_grid("point_mass_2d", "gravity", train=False)
    assert [t.gravity_scale for t in test] == list(TEST_MULTIPLIERS)

    damp = task_grid("pendulum", "damping", train=True)
    assert [t.damping_scale for t in damp] == list(TRAIN_MULTIPLIERS)
    assert all(t.gravity_scale == 1.0 for t in damp)


def test_task_spec_json_round_trip():
    spec = TaskSpec(family="pendulum", gravity_scale=1.5, damping_scale=0.25,
                    episode_horizon=64, seed=99)
    payload = json.loads(spec.to_json())
    assert set(payload) == {"family", "gravity_scale", "damping_scale",
                            "episode_horizon", "seed"}
    assert TaskSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ConfigurationError):
        TaskSpec.from_json(json.dumps({**payload, "extra": 1}))


def test_task_spec_validation():
    with pytest.raises(ConfigurationError):
        TaskSpec(family="walker")
    with pytest.raises(ConfigurationError):
        TaskSpec(family="pendulum", gravity_scale=11.0)
    with pytest.raises(ConfigurationError):
        TaskSpec(family="pendulum", damping_scale=-0.1)
    with pytest.raises(ConfigurationError):
        TaskSpec(family="pendulum", episode_horizon=0)
    with pytest.raises(ConfigurationError):
        env_dims("walker")
