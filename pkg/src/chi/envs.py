"""Native finite-horizon environments with analytic, vectorised reward functions.

Agents act in a normalised box ``[-1, 1]^action_dim``; multiplying by
``EnvSpec.action_bound`` gives the physical action that :meth:`step` and
``reward_fn`` take. ``model_reward`` does that scaling for imagined rollouts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Array, ConfigurationError


class EpisodeError(RuntimeError):
    """Stepping an environment whose episode has already finished."""


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    episode_len: int
    action_bound: float

    def __post_init__(self) -> None:
        if min(self.state_dim, self.action_dim, self.episode_len) < 1:
            raise ConfigurationError(f"invalid environment spec {self}")


@dataclass(frozen=True)
class StepResult:
    next_state: Array
    reward: float
    done: bool


@dataclass(frozen=True)
class Wall:
    """Vertical wall centred on ``x`` with an opening between ``gap_low`` and ``gap_high``.

    The blocked region is open, so positions exactly on a face are legal.
    """

    x: float = 0.5
    thickness: float = 0.02
    gap_low: float = 0.4
    gap_high: float = 0.6

    def boxes(self) -> list[tuple[float, float, float, float]]:
        x0, x1 = self.x - self.thickness / 2, self.x + self.thickness / 2
        out = []
        if self.gap_low > 0.0:
            out.append((x0, x1, -math.inf, self.gap_low))
        if self.gap_high < 1.0:
            out.append((x0, x1, self.gap_high, math.inf))
        return out

    def contains(self, p: Array) -> bool:
        return any(x0 < p[0] < x1 and y0 < p[1] < y1 for x0, x1, y0, y1 in self.boxes())


def _segment_entry(p: Array, d: Array, box: tuple[float, float, float, float]) -> tuple[float, int] | None:
    """First time in [0, 1] at which ``p + t d`` enters the open box, and the axis hit."""
    lo = (box[0], box[2])
    hi = (box[1], box[3])
    t_in, t_out, axis = -math.inf, math.inf, -1
    for k in range(2):
        if abs(d[k]) < 1e-12:
            if not lo[k] < p[k] < hi[k]:
                return None
            continue
        a = (lo[k] - p[k]) / d[k]
        b = (hi[k] - p[k]) / d[k]
        if a > b:
            a, b = b, a
        if a > t_in:
            t_in, axis = a, k
        t_out = min(t_out, b)
    if t_in >= t_out or t_in >= 1.0 or t_out <= 0.0:
        return None
    return max(t_in, 0.0), axis


def pointmass_reward(s: Array, a: Array | None = None, goal: tuple[float, float] = (1.0, 1.0)) -> Array:
    """``1 - ||s - goal||^2``; the action is ignored."""
    diff = np.asarray(s) - np.asarray(goal)
    return 1.0 - np.sum(diff * diff, axis=-1)


class PointMass:
    """Velocity-controlled point in the unit square with a wall between start and goal."""

    name = "pointmass"

    def __init__(
        self,
        wall: Wall = Wall(),
        episode_len: int = 50,
        max_speed: float = 0.05,
        goal: tuple[float, float] = (1.0, 1.0),
    ) -> None:
        self.wall = wall
        self.goal = goal
        self.max_speed = max_speed
        self.spec = EnvSpec(state_dim=2, action_dim=2, episode_len=episode_len, action_bound=max_speed)
        self._pos = np.zeros(2)
        self._t = 0

    def reset(self, seed: int = 0) -> Array:
        # the start is deterministic; the seed is accepted for interface parity
        self._pos = np.zeros(2)
        self._t = 0
        return self._pos.copy()

    def move(self, pos: Array, action: Array) -> Array:
        """Apply a velocity command: norm-limit, stay in the square, stop at wall faces."""
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (2,):
            raise ConfigurationError(f"point-mass action must have shape (2,), got {a.shape}")
        norm = math.hypot(a[0], a[1])
        if norm > self.max_speed:
            a = a * (self.max_speed / norm)
        target = np.clip(pos + a, 0.0, 1.0)
        d = target - pos
        best_t, best_axis, best_face = 1.0, -1, 0.0
        for box in self.wall.boxes():
            hit = _segment_entry(pos, d, box)
            if hit is not None and hit[0] < best_t:
                best_t, best_axis = hit
                lo, hi = box[2 * best_axis], box[2 * best_axis + 1]
                best_face = lo if d[best_axis] > 0 else hi
        if best_axis < 0:
            return target
        out = pos + best_t * d
        out[best_axis] = best_face
        return out

    def step(self, a: Array) -> StepResult:
        if self._t >= self.spec.episode_len:
            raise EpisodeError("step() called after the episode finished; call reset()")
        self._pos = self.move(self._pos, a)
        self._t += 1
        r = float(self.reward_fn(self._pos, a))
        return StepResult(self._pos.copy(), r, self._t >= self.spec.episode_len)

    def reward_fn(self, s: Array, a: Array | None = None) -> Array:
        return pointmass_reward(s, a, self.goal)

    def model_reward(self, s: Array, u: Array) -> Array:
        return self.reward_fn(s, self.spec.action_bound * u)


def angle_normalize(x: Array) -> Array:
    return ((x + np.pi) % (2 * np.pi)) - np.pi


class Pendulum:
    """Torque-limited pendulum swing-up; state ``(cos th, sin th, th_dot)``, upright at th = 0."""

    name = "pendulum"

    def __init__(
        self,
        episode_len: int = 100,
        max_torque: float = 2.0,
        max_speed: float = 8.0,
        dt: float = 0.05,
        g: float = 10.0,
        m: float = 1.0,
        length: float = 1.0,
    ) -> None:
        self.max_torque = max_torque
        self.max_speed = max_speed
        self.dt, self.g, self.m, self.length = dt, g, m, length
        self.spec = EnvSpec(state_dim=3, action_dim=1, episode_len=episode_len, action_bound=max_torque)
        self._th = math.pi
        self._thdot = 0.0
        self._t = 0

    def _obs(self) -> Array:
        return np.array([math.cos(self._th), math.sin(self._th), self._thdot])

    def reset(self, seed: int = 0) -> Array:
        rng = np.random.default_rng(seed)
        self._th = math.pi + rng.uniform(-0.05, 0.05)
        self._thdot = rng.uniform(-0.05, 0.05)
        self._t = 0
        return self._obs()

    def step(self, a: Array) -> StepResult:
        if self._t >= self.spec.episode_len:
            raise EpisodeError("step() called after the episode finished; call reset()")
        u = float(np.clip(np.asarray(a, dtype=np.float64).reshape(-1)[0], -self.max_torque, self.max_torque))
        acc = 3 * self.g / (2 * self.length) * math.sin(self._th) + 3.0 / (self.m * self.length**2) * u
        self._thdot = float(np.clip(self._thdot + acc * self.dt, -self.max_speed, self.max_speed))
        self._th = self._th + self._thdot * self.dt
        self._t += 1
        s = self._obs()
        r = float(self.reward_fn(s, np.array([u])))
        return StepResult(s, r, self._t >= self.spec.episode_len)

    def reward_fn(self, s: Array, a: Array) -> Array:
        s = np.asarray(s)
        th = np.arctan2(s[..., 1], s[..., 0])
        u = np.clip(np.asarray(a)[..., 0], -self.max_torque, self.max_torque)
        return -(th**2 + 0.1 * s[..., 2] ** 2 + 0.001 * u**2)

    def model_reward(self, s: Array, u: Array) -> Array:
        return self.reward_fn(s, self.spec.action_bound * u)


def make_env(name: str, **overrides) -> PointMass | Pendulum:
    if name == "pointmass":
        wall_keys = {"wall_x": "x", "wall_thickness": "thickness", "gap_low": "gap_low", "gap_high": "gap_high"}
        wall = Wall(**{wall_keys[k]: overrides.pop(k) for k in list(overrides) if k in wall_keys})
        return PointMass(wall=wall, **overrides)
    if name == "pendulum":
        return Pendulum(**overrides)
    raise ConfigurationError(f"unknown environment {name!r}; choose pointmass or pendulum")
