"""Probabilistic ensemble transition model.

Each member maps a normalised ``(state, action)`` pair to a diagonal Gaussian
over the normalised state change. Members share one stacked parameter set so
the whole ensemble evaluates as a single batched matmul.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import (
    LOG_2PI,
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamConfig,
    AdamState,
    Array,
    ConfigurationError,
    DiagGaussian,
    MlpParams,
    adam_step,
    init_mlp,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    save_checkpoint,
)

log = logging.getLogger(__name__)

RewardFn = Callable[[Array, Array], Array]

# per-step reward substituted once a rollout goes non-finite
REWARD_FLOOR = -1e6
ROLLOUT_MODES = ("mean", "member", "sample")


@dataclass
class EnsembleDynamics:
    params: MlpParams
    state_dim: int
    action_dim: int
    in_mean: Array = None  # type: ignore[assignment]
    in_std: Array = None  # type: ignore[assignment]
    out_mean: Array = None  # type: ignore[assignment]
    out_std: Array = None  # type: ignore[assignment]
    opt: AdamState | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        n_in = self.state_dim + self.action_dim
        if self.params.stack is None:
            raise ConfigurationError("ensemble parameters must be stacked")
        if self.params.in_dim != n_in or self.params.out_dim != 2 * self.state_dim:
            raise ConfigurationError("network shape does not match state/action dims")
        if self.in_mean is None:
            self.in_mean, self.in_std = np.zeros(n_in), np.ones(n_in)
            self.out_mean, self.out_std = np.zeros(self.state_dim), np.ones(self.state_dim)

    @classmethod
    def create(
        cls,
        state_dim: int,
        action_dim: int,
        rng: np.random.Generator,
        n_members: int = 5,
        hidden: Sequence[int] = (350, 350, 350),
        zero_head: bool = False,
    ) -> EnsembleDynamics:
        if n_members < 1:
            raise ConfigurationError("ensemble needs at least one member")
        sizes = [state_dim + action_dim, *hidden, 2 * state_dim]
        return cls(init_mlp(sizes, rng, stack=n_members, zero_head=zero_head), state_dim, action_dim)

    @property
    def n_members(self) -> int:
        return self.params.stack  # type: ignore[return-value]

    def member(self, i: int) -> MlpParams:
        return self.params.member(i)

    def _normalise(self, s: Array, a: Array) -> Array:
        return (np.concatenate([s, a], axis=-1) - self.in_mean) / self.in_std

    def _heads(self, out: Array) -> tuple[Array, Array]:
        mu, log_std = out[..., : self.state_dim], out[..., self.state_dim :]
        return mu, np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)

    def delta(self, s: Array, a: Array) -> tuple[Array, Array]:
        """Per-member mean and std of the state change, raw units, shape ``(E, B, S)``."""
        s2, a2 = np.atleast_2d(s), np.atleast_2d(a)
        mu, log_std = self._heads(mlp_forward(self.params, self._normalise(s2, a2)))
        return self.out_mean + self.out_std * mu, self.out_std * np.exp(log_std)

    def predict(self, member: int, s: Array, a: Array) -> DiagGaussian:
        """Gaussian over the next state under one member."""
        if not 0 <= member < self.n_members:
            raise IndexError(f"member {member} out of range for ensemble of {self.n_members}")
        mu, std = self.delta(s, a)
        mean = np.atleast_2d(s) + mu[member]
        d = DiagGaussian.from_std(mean, std[member])
        if np.ndim(s) == 1:
            d = DiagGaussian(d.mean[0], d.log_std[0])
        return d

    def mean_next(self, s: Array, a: Array) -> Array:
        """Ensemble-average predicted next state."""
        mu, _ = self.delta(s, a)
        out = np.atleast_2d(s) + mu.mean(axis=0)
        return out[0] if np.ndim(s) == 1 else out

    def disagreement(self, s: Array, a: Array) -> Array:
        """Variance of member means, summed over state dims."""
        mu, _ = self.delta(s, a)
        return mu.var(axis=0).sum(axis=-1)

    def records(self) -> list[list[Array]]:
        recs = [self.member(i).arrays() for i in range(self.n_members)]
        recs.append([self.in_mean, self.in_std, self.out_mean, self.out_std])
        return recs

    def save(self, path) -> None:
        save_checkpoint(path, self.records())

    @classmethod
    def load(cls, path) -> EnsembleDynamics:
        recs = load_checkpoint(path)
        *members, stats = recs
        arrays = [np.stack(group) for group in zip(*members)]
        params = MlpParams.from_arrays(arrays)
        in_mean, in_std, out_mean, out_std = stats
        return cls(params, len(out_mean), len(in_mean) - len(out_mean), in_mean, in_std, out_mean, out_std)


@dataclass
class Rollout:
    states: Array  # (K, H+1, S)
    rewards: Array  # (K, H)
    valid: Array  # (K,) bool


def rollout(
    ens: EnsembleDynamics,
    s0: Array,
    actions: Array,
    reward_fn: RewardFn,
    mode: str = "mean",
    rng: np.random.Generator | None = None,
) -> Rollout:
    """Propagate ``K`` action sequences ``(K, H, A)`` (or one ``(H, A)``) through the model.

    ``mean`` follows the ensemble-average mean; ``member`` gives each sequence one
    randomly chosen member and follows its mean; ``sample`` additionally draws
    from that member's Gaussian. Rewards are ``reward_fn(next_state, action)``.
    """
    if mode not in ROLLOUT_MODES:
        raise ConfigurationError(f"unknown rollout mode {mode!r}")
    acts = np.asarray(actions, dtype=np.float64)
    if acts.ndim == 2:
        acts = acts[None]
    k, h, _ = acts.shape
    s = np.broadcast_to(np.asarray(s0, dtype=np.float64), (k, ens.state_dim)).copy()
    states = np.empty((k, h + 1, ens.state_dim))
    rewards = np.empty((k, h))
    states[:, 0] = s
    valid = np.ones(k, dtype=bool)
    if mode != "mean":
        if rng is None:
            raise ConfigurationError(f"rollout mode {mode!r} needs an rng")
        members = rng.integers(ens.n_members, size=k)
    rows = np.arange(k)
    for t in range(h):
        a = acts[:, t]
        mu, std = ens.delta(s, a)
        if mode == "mean":
            nxt = s + mu.mean(axis=0)
        else:
            nxt = s + mu[members, rows]
            if mode == "sample":
                nxt = nxt + std[members, rows] * rng.standard_normal(nxt.shape)
        ok = np.isfinite(nxt).all(axis=-1) & valid
        broke = valid & ~ok
        if broke.any():
            log.warning("rollout produced non-finite states for %d sequences; truncating", int(broke.sum()))
        valid = ok
        nxt = np.where(valid[:, None], nxt, s)
        r = reward_fn(nxt, a)
        rewards[:, t] = np.where(valid & np.isfinite(r), r, REWARD_FLOOR)
        states[:, t + 1] = nxt
        s = nxt
    return Rollout(states, rewards, valid)


@dataclass
class TrainReport:
    epochs: int
    nll: list[list[float]]  # [epoch][member]

    @property
    def final_nll(self) -> float:
        return float(np.mean(self.nll[-1])) if self.nll else float("nan")


def nll_and_grads(ens: EnsembleDynamics, x: Array, y: Array) -> tuple[Array, MlpParams]:
    """Gaussian NLL of normalised targets ``y`` given normalised inputs ``x``.

    ``x`` and ``y`` are ``(E, B, .)``. Returns the per-member mean NLL and
    gradients of their sum.
    """
    out, cache = mlp_forward_cached(ens.params, x)
    sd = ens.state_dim
    mu, raw_log_std = out[..., :sd], out[..., sd:]
    log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    inv_var = np.exp(-2.0 * log_std)
    err = y - mu
    n = x.shape[-2] * sd
    per = 0.5 * err * err * inv_var + log_std + 0.5 * LOG_2PI
    nll = per.sum(axis=(-2, -1)) / n
    d_mu = -err * inv_var / n
    d_log_std = (1.0 - err * err * inv_var) / n
    d_log_std = np.where((raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX), d_log_std, 0.0)
    grads, _ = mlp_backward(ens.params, x, np.concatenate([d_mu, d_log_std], axis=-1), cache)
    return nll, grads


def gaussian_nll(ens: EnsembleDynamics, s: Array, a: Array, s_next: Array) -> Array:
    """Per-member mean NLL (per state dim) of observed next states, raw units."""
    mu, std = ens.delta(s, a)
    z = (s_next - s - mu) / std
    return np.mean(0.5 * z * z + np.log(std) + 0.5 * LOG_2PI, axis=(-2, -1))


def fit_normalisation(ens: EnsembleDynamics, s: Array, a: Array, s_next: Array) -> None:
    x = np.concatenate([s, a], axis=-1)
    dy = s_next - s
    ens.in_mean = x.mean(axis=0)
    ens.in_std = np.maximum(x.std(axis=0), 1e-6)
    ens.out_mean = dy.mean(axis=0)
    ens.out_std = np.maximum(dy.std(axis=0), 1e-6)


def train(
    ens: EnsembleDynamics,
    s: Array,
    a: Array,
    s_next: Array,
    rng: np.random.Generator,
    epochs: int = 10,
    batch: int = 50,
    lr: float = 1e-3,
) -> TrainReport:
    """Fit every member on bootstrapped data by minibatch Adam on the Gaussian NLL of ``s' - s``."""
    n = len(s)
    if n == 0:
        log.warning("dynamics training skipped: empty dataset")
        return TrainReport(0, [])
    fit_normalisation(ens, s, a, s_next)
    x_all = (np.concatenate([s, a], axis=-1) - ens.in_mean) / ens.in_std
    y_all = (s_next - s - ens.out_mean) / ens.out_std
    e = ens.n_members
    boot = rng.integers(n, size=(e, n))
    if ens.opt is None:
        ens.opt = AdamState.zeros_like(ens.params)
    cfg = AdamConfig(lr=lr)
    history = []
    for _ in range(epochs):
        order = np.take_along_axis(boot, rng.permuted(np.tile(np.arange(n), (e, 1)), axis=1), axis=1)
        sums = np.zeros(e)
        count = 0
        for start in range(0, n, batch):
            idx = order[:, start : start + batch]
            nll, grads = nll_and_grads(ens, x_all[idx], y_all[idx])
            ens.params, ens.opt = adam_step(ens.params, grads, ens.opt, config=cfg)
            sums += nll * idx.shape[1]
            count += idx.shape[1]
        history.append((sums / count).tolist())
    return TrainReport(epochs, history)
