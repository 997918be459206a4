"""Parameterized analytic control tasks.

Two task families (a 2-D point mass and a torque-driven pendulum) whose
transition dynamics are modulated by gravity/damping multipliers while the
reward function stays fixed across the whole family. Tasks in one family
therefore differ *only* in how states evolve, which is the property the
task-representation learner must pick up on.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigurationError, UsageError
from .seeding import derive_seed

FAMILIES = ("point_mass_2d", "pendulum")

# integration step shared by both families
DT = 0.05

# point mass constants
PM_BASE_GRAVITY = 1.0
PM_BASE_DAMPING = 0.5
PM_GOAL = np.array([3.0, 3.0])
PM_POS_LIMIT = 5.0
PM_VEL_LIMIT = 10.0

# pendulum constants (unit mass, unit length, angle measured from upright)
PEND_BASE_GRAVITY = 10.0
PEND_BASE_DAMPING = 0.5
PEND_MAX_TORQUE = 2.0
PEND_SPEED_LIMIT = 8.0


@dataclass(frozen=True)
class TaskSpec:
    """One task instance: a family plus its physical-parameter multipliers."""

    family: str
    gravity_scale: float = 1.0
    damping_scale: float = 1.0
    episode_horizon: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown task family: {self.family!r}")
        if not (0.0 <= self.gravity_scale <= 10.0):
            raise ConfigurationError(
                f"gravity_scale must be in [0, 10], got {self.gravity_scale}")
        if not (0.0 <= self.damping_scale <= 10.0):
            raise ConfigurationError(
                f"damping_scale must be in [0, 10], got {self.damping_scale}")
        if self.episode_horizon <= 0:
            raise ConfigurationError("episode_horizon must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TaskSpec":
        payload = json.loads(text)
        expected = {"family", "gravity_scale", "damping_scale",
                    "episode_horizon", "seed"}
        if set(payload) != expected:
            raise ConfigurationError(
                f"task spec JSON must have exactly the fields {sorted(expected)}, "
                f"got {sorted(payload)}")
        return cls(**payload)


@dataclass
class EnvState:
    observation: np.ndarray
    step_index: int


@dataclass
class StepResult:
    next_observation: np.ndarray
    reward: float
    done: bool


class _BaseEnv:
    """Seeded, single-threaded environment. Subclasses define the physics."""

    observation_dim: int
    action_dim: int

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        self._rng = np.random.default_rng(spec.seed)
        self._step_index = 0
        self._done = True  # force reset() before step()

    @property
    def horizon(self) -> int:
        return self.spec.episode_horizon

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._step_index = 0
        self._done = False
        self._init_state()
        return self.observation()

    def state(self) -> EnvState:
        return EnvState(observation=self.observation(), step_index=self._step_index)

    def step(self, action) -> StepResult:
        if self._done:
            raise UsageError("step() called on a finished episode; call reset() first")
        action = np.asarray(action, dtype=np.float64).reshape(self.action_dim)
        if not np.all(np.isfinite(action)):
            raise UsageError("action must be finite")
        action = np.clip(action, -1.0, 1.0)
        reward = float(self._reward(action))
        self._advance(action)
        self._step_index += 1
        self._done = self._step_index >= self.horizon
        obs = self.observation()
        assert np.all(np.isfinite(obs))
        return StepResult(next_observation=obs, reward=reward, done=self._done)

    def reward_at(self, observation, action) -> float:
        """Reward as a pure function of (observation, action); identical across
        every spec of the family because only dynamics carry the multipliers."""
        raise NotImplementedError

    def observation(self) -> np.ndarray:
        raise NotImplementedError

    def _init_state(self):
        raise NotImplementedError

    def _reward(self, action) -> float:
        raise NotImplementedError

    def _advance(self, action):
        raise NotImplementedError


class PointMass2DEnv(_BaseEnv):
    """Force-controlled point mass on a plane, pulled down by gravity.

    State is [x, y, vx, vy]. Semi-implicit Euler: the velocity update sees the
    applied force minus gravity (along -y) minus linear drag, then position
    integrates the *new* velocity. Reward is the negative distance to the goal
    at the pre-step position.
    """

    observation_dim = 4
    action_dim = 2

    def _init_state(self):
        self._pos = self._rng.uniform(-1.0, 1.0, size=2)
        self._vel = np.zeros(2)

    def observation(self):
        return np.concatenate([self._pos, self._vel]).astype(np.float32)

    def _reward(self, action):
        return -np.linalg.norm(self._pos - PM_GOAL)

    def reward_at(self, observation, action):
        pos = np.asarray(observation, dtype=np.float64)[:2]
        return float(-np.linalg.norm(pos - PM_GOAL))

    def _advance(self, action):
        g = PM_BASE_GRAVITY * self.spec.gravity_scale
        accel = action - np.array([0.0, g]) - self.spec.damping_scale * PM_BASE_DAMPING * self._vel
        self._vel = np.clip(self._vel + DT * accel, -PM_VEL_LIMIT, PM_VEL_LIMIT)
        self._pos = np.clip(self._pos + DT * self._vel, -PM_POS_LIMIT, PM_POS_LIMIT)


def _wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    wrapped = (theta + np.pi) % (2.0 * np.pi) - np.pi
    if wrapped == -np.pi:
        wrapped = np.pi
    return wrapped


class PendulumEnv(_BaseEnv):
    """Torque-driven pendulum, angle measured from upright.

    Observation is [cos(theta), sin(theta), theta_dot]. Dynamics follow the
    classic rigid pendulum (unit mass and length) with the gravity term scaled
    by gravity_scale and a viscous friction term scaled by damping_scale.
    """

    observation_dim = 3
    action_dim = 1

    def _init_state(self):
        self._theta = self._rng.uniform(-np.pi, np.pi)
        self._theta_dot = self._rng.uniform(-1.0, 1.0)

    def observation(self):
        return np.array(
            [np.cos(self._theta), np.sin(self._theta), self._theta_dot],
            dtype=np.float32)

    def _reward(self, action):
        torque = PEND_MAX_TORQUE * float(action[0])
        theta = _wrap_angle(self._theta)
        return -(theta ** 2 + 0.1 * self._theta_dot ** 2 + 0.001 * torque ** 2)

    def reward_at(self, observation, action):
        obs = np.asarray(observation, dtype=np.float64)
        theta = _wrap_angle(float(np.arctan2(obs[1], obs[0])))
        torque = PEND_MAX_TORQUE * float(np.clip(action, -1.0, 1.0).reshape(-1)[0])
        return float(-(theta ** 2 + 0.1 * obs[2] ** 2 + 0.001 * torque ** 2))

    def _advance(self, action):
        torque = PEND_MAX_TORQUE * float(action[0])
        g = PEND_BASE_GRAVITY * self.spec.gravity_scale
        friction = self.spec.damping_scale * PEND_BASE_DAMPING * self._theta_dot
        accel = 1.5 * g * np.sin(self._theta) + 3.0 * torque - friction
        self._theta_dot = np.clip(self._theta_dot + DT * accel,
                                  -PEND_SPEED_LIMIT, PEND_SPEED_LIMIT)
        self._theta = _wrap_angle(self._theta + DT * self._theta_dot)


_ENV_CLASSES = {
    "point_mass_2d": PointMass2DEnv,
    "pendulum": PendulumEnv,
}

TRAIN_MULTIPLIERS = (0.5, 1.0, 1.5)
TEST_MULTIPLIERS = (0.8, 1.2)


def make_env(spec: TaskSpec) -> _BaseEnv:
    cls = _ENV_CLASSES.get(spec.family)
    if cls is None:
        raise ConfigurationError(f"unknown task family: {spec.family!r}")
    return cls(spec)


def env_dims(family: str):
    cls = _ENV_CLASSES.get(family)
    if cls is None:
        raise ConfigurationError(f"unknown task family: {family!r}")
    return cls.observation_dim, cls.action_dim


def task_grid(family: str, varied: str = "gravity", train: bool = True,
              episode_horizon: int = 100, base_seed: int = 0):
    """Task specs for a single-factor grid: the varied parameter takes the
    train multipliers {0.5, 1.0, 1.5} or the held-out ones {0.8, 1.2}; the
    other multiplier stays at 1.0."""
    if varied not in ("gravity", "damping"):
        raise ConfigurationError(f"varied must be 'gravity' or 'damping', got {varied!r}")
    multipliers = TRAIN_MULTIPLIERS if train else TEST_MULTIPLIERS
    specs = []
    for mult in multipliers:
        seed = derive_seed(base_seed, family, varied, "train" if train else "test", mult)
        specs.append(TaskSpec(
            family=family,
            gravity_scale=mult if varied == "gravity" else 1.0,
            damping_scale=mult if varied == "damping" else 1.0,
            episode_horizon=episode_horizon,
            seed=seed,
        ))
    return specs
