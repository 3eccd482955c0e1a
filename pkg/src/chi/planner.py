"""Iterative inference over action sequences (mirror-descent MPPI) and the CEM refit."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .dynamics import EnsembleDynamics, RewardFn, rollout
from .tensor import Array, ConfigurationError, DiagGaussian, gaussian_entropy, gaussian_log_prob

SIGMA_MIN = 1e-3
SIGMA_MAX = 1.0


@dataclass
class ActionSequenceDist:
    """Time-dependent diagonal Gaussian over ``H`` actions; ``mean``/``std`` are ``(H, A)``."""

    mean: Array
    std: Array

    def __post_init__(self) -> None:
        self.mean = np.array(self.mean, dtype=np.float64, ndmin=2)
        self.std = np.array(self.std, dtype=np.float64, ndmin=2)
        if self.mean.shape != self.std.shape:
            raise ConfigurationError(f"mean {self.mean.shape} and std {self.std.shape} differ")

    @classmethod
    def uninformative(cls, horizon: int, action_dim: int, sigma: float = SIGMA_MAX) -> ActionSequenceDist:
        return cls(np.zeros((horizon, action_dim)), np.full((horizon, action_dim), sigma))

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    @property
    def action_dim(self) -> int:
        return self.mean.shape[1]

    def gaussian(self) -> DiagGaussian:
        """The whole sequence as one flat diagonal Gaussian."""
        return DiagGaussian.from_std(self.mean.reshape(-1), self.std.reshape(-1))

    def log_prob(self, actions: Array) -> Array:
        k = actions.shape[0]
        return gaussian_log_prob(self.gaussian(), actions.reshape(k, -1))

    def entropy(self) -> float:
        return float(gaussian_entropy(self.gaussian()))

    def clamped(self, sigma_min: float = SIGMA_MIN, sigma_max: float = SIGMA_MAX) -> ActionSequenceDist:
        return ActionSequenceDist(self.mean.copy(), np.clip(self.std, sigma_min, sigma_max))

    def copy(self) -> ActionSequenceDist:
        return ActionSequenceDist(self.mean.copy(), self.std.copy())


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 7
    iterations: int = 3
    samples: int = 500
    kappa: float = 1.0
    elite_fraction: float = 0.1
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX
    mode: str = "mean"
    particles: int = 1
    action_bound: float = 1.0

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.iterations < 0 or self.samples < 2:
            raise ConfigurationError("need horizon >= 1, iterations >= 0, samples >= 2")
        if self.kappa <= 0:
            raise ConfigurationError("kappa must be positive")
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ConfigurationError("elite_fraction must lie in (0, 1]")
        if not 0.0 < self.sigma_min <= self.sigma_max:
            raise ConfigurationError("need 0 < sigma_min <= sigma_max")
        if self.particles < 1:
            raise ConfigurationError("particles must be >= 1")


@dataclass
class CandidateSet:
    """Sampled sequences with their model rollouts, log scores and normalised weights.

    ``actions`` are the raw draws (where the density is evaluated); ``executed``
    are the same draws clipped to the action bound, as fed to the model.
    """

    actions: Array
    executed: Array
    log_scores: Array
    states: Array | None = None
    rewards: Array | None = None
    weights: Array | None = None

    @property
    def scores(self) -> Array:
        return np.exp(self.log_scores)

    def __len__(self) -> int:
        return len(self.actions)


def score_sequences(
    ens: EnsembleDynamics,
    s_t: Array,
    actions: Array,
    reward_fn: RewardFn,
    cfg: PlanConfig,
    rng: np.random.Generator | None = None,
) -> CandidateSet:
    """Log-score ``kappa * sum_t r_t`` of each sequence; non-finite rollouts score zero."""
    actions = np.asarray(actions, dtype=np.float64)
    executed = np.clip(actions, -cfg.action_bound, cfg.action_bound)
    k = len(actions)
    reps = np.repeat(executed, cfg.particles, axis=0) if cfg.particles > 1 else executed
    ro = rollout(ens, s_t, reps, reward_fn, mode=cfg.mode, rng=rng)
    returns = ro.rewards.sum(axis=1)
    valid = ro.valid
    if cfg.particles > 1:
        returns = returns.reshape(k, cfg.particles).mean(axis=1)
        valid = valid.reshape(k, cfg.particles).all(axis=1)
        states = ro.states[:: cfg.particles]
        rewards = ro.rewards[:: cfg.particles]
    else:
        states, rewards = ro.states, ro.rewards
    log_scores = np.where(valid & np.isfinite(returns), cfg.kappa * returns, -np.inf)
    return CandidateSet(actions, executed, log_scores, states, rewards)


def update_weights(candidates: CandidateSet, q: ActionSequenceDist) -> CandidateSet:
    """``w_k`` proportional to score times ``q(a_k)``, normalised in log space."""
    logw = candidates.log_scores + q.log_prob(candidates.actions)
    if not np.isfinite(logw).any():
        w = np.full(len(logw), 1.0 / len(logw))
    else:
        w = np.exp(logw - logsumexp(logw))
        w /= w.sum()
    return replace(candidates, weights=w)


def refit(
    candidates: CandidateSet, sigma_min: float = SIGMA_MIN, sigma_max: float = SIGMA_MAX
) -> ActionSequenceDist:
    """Weighted per-timestep, per-dimension moments of the sampled (unclipped) actions."""
    w = candidates.weights
    if w is None:
        raise ConfigurationError("refit needs weights; call update_weights first")
    x = candidates.actions
    mean = np.einsum("k,kha->ha", w, x)
    var = np.einsum("k,kha->ha", w, (x - mean) ** 2)
    return ActionSequenceDist(mean, np.clip(np.sqrt(var), sigma_min, sigma_max))


def cem_refit(
    candidates: CandidateSet,
    elite_fraction: float,
    sigma_min: float = SIGMA_MIN,
    sigma_max: float = SIGMA_MAX,
) -> ActionSequenceDist:
    """Unweighted moments of the top ``ceil(fraction * K)`` sequences; ties keep index order."""
    k = len(candidates)
    n_elite = max(1, math.ceil(elite_fraction * k - 1e-9))
    order = np.argsort(-candidates.log_scores, kind="stable")
    elite = candidates.actions[order[:n_elite]]
    mean = elite.mean(axis=0)
    std = np.sqrt(((elite - mean) ** 2).mean(axis=0))
    return ActionSequenceDist(mean, np.clip(std, sigma_min, sigma_max))


def plan(
    ens: EnsembleDynamics,
    s_t: Array,
    init: ActionSequenceDist,
    cfg: PlanConfig,
    reward_fn: RewardFn,
    rng: np.random.Generator,
    method: str = "mppi",
    history: list[CandidateSet] | None = None,
) -> ActionSequenceDist:
    """Run ``cfg.iterations`` rounds of sample, score, reweight and refit from ``init``.

    ``method`` is ``"mppi"`` (mirror-descent weights) or ``"cem"`` (elite refit).
    Every scored :class:`CandidateSet` is appended to ``history`` if given.
    """
    if method not in ("mppi", "cem"):
        raise ConfigurationError(f"unknown planning method {method!r}")
    if init.horizon != cfg.horizon:
        raise ConfigurationError(f"init horizon {init.horizon} != configured horizon {cfg.horizon}")
    q = init
    for _ in range(cfg.iterations):
        noise = rng.standard_normal((cfg.samples, *q.mean.shape))
        actions = q.mean + q.std * noise
        cands = score_sequences(ens, s_t, actions, reward_fn, cfg, rng)
        if method == "mppi":
            cands = update_weights(cands, q)
            q = refit(cands, cfg.sigma_min, cfg.sigma_max)
        else:
            q = cem_refit(cands, cfg.elite_fraction, cfg.sigma_min, cfg.sigma_max)
        if history is not None:
            history.append(cands)
    return q
