"""Amortised inference: tanh-squashed Gaussian policy, twin soft-Q critics, SAC updates.

Actions live in the normalised box ``[-1, 1]^A``. The policy network outputs the
pre-squash mean and log-std; the executed stochastic action is ``tanh(u)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import EnsembleDynamics
from .planner import SIGMA_MAX, SIGMA_MIN, ActionSequenceDist
from .tensor import (
    LOG_2PI,
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamConfig,
    AdamState,
    Array,
    DiagGaussian,
    MlpParams,
    NonFiniteError,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    polyak,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SacConfig:
    alpha: float = 0.2
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    hidden: int = 256
    layers: int = 2
    lr: float = 3e-4

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.alpha < 0 or self.batch_size < 1:
            raise ValueError("need alpha >= 0 and batch_size >= 1")


@dataclass
class Policy:
    params: MlpParams
    action_dim: int
    opt: AdamState | None = field(default=None, repr=False)

    @classmethod
    def create(cls, state_dim: int, action_dim: int, rng: np.random.Generator, cfg: SacConfig = SacConfig()) -> Policy:
        sizes = [state_dim, *[cfg.hidden] * cfg.layers, 2 * action_dim]
        return cls(init_mlp(sizes, rng, zero_head=True), action_dim)

    def heads(self, s: Array) -> tuple[Array, Array, Array]:
        """Pre-squash mean, clamped log-std and the unclamped log-std."""
        out = mlp_forward(self.params, np.asarray(s, dtype=np.float64))
        mu, raw = out[..., : self.action_dim], out[..., self.action_dim :]
        return mu, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), raw

    def distribution(self, s: Array) -> DiagGaussian:
        mu, log_std, _ = self.heads(s)
        return DiagGaussian(mu, log_std)


@dataclass
class Critics:
    q1: MlpParams
    q2: MlpParams
    target1: MlpParams
    target2: MlpParams
    opt1: AdamState | None = field(default=None, repr=False)
    opt2: AdamState | None = field(default=None, repr=False)

    @classmethod
    def create(cls, state_dim: int, action_dim: int, rng: np.random.Generator, cfg: SacConfig = SacConfig()) -> Critics:
        sizes = [state_dim + action_dim, *[cfg.hidden] * cfg.layers, 1]
        q1, q2 = init_mlp(sizes, rng), init_mlp(sizes, rng)
        return cls(q1, q2, q1.copy(), q2.copy())


def squash_log_det(u: Array) -> Array:
    """``sum log(1 - tanh(u)^2)`` in a numerically stable form."""
    return np.sum(2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)), axis=-1)


def squashed_log_prob(d: DiagGaussian, u: Array) -> Array:
    """Log density of ``a = tanh(u)`` where ``u`` is drawn from ``d``."""
    z = (u - d.mean) / d.std
    return np.sum(-0.5 * z * z - d.log_std - 0.5 * LOG_2PI, axis=-1) - squash_log_det(u)


@dataclass
class ActResult:
    dist: DiagGaussian  # pre-squash
    action: Array  # tanh-squashed sample
    log_prob: Array


def act(policy: Policy, s: Array, noise: Array | None = None, rng: np.random.Generator | None = None) -> ActResult:
    """Policy head at ``s`` plus a reparameterised squashed sample."""
    d = policy.distribution(s)
    if noise is None:
        noise = rng.standard_normal(d.mean.shape) if rng is not None else np.zeros_like(d.mean)
    u = d.mean + d.std * noise
    return ActResult(d, np.tanh(u), squashed_log_prob(d, u))


def deterministic_action(policy: Policy, s: Array) -> Array:
    """Pre-squash mean clipped to the action box; shared with the planner's amortised init."""
    return np.clip(policy.distribution(s).mean, -1.0, 1.0)


def _q_input(s: Array, a: Array) -> Array:
    return np.concatenate([s, a], axis=-1)


def critic_loss_and_grads(
    critics: Critics,
    policy: Policy,
    cfg: SacConfig,
    batch: dict[str, Array],
    next_noise: Array,
) -> tuple[float, float, MlpParams, MlpParams, Array]:
    """Mean-squared soft Bellman error of both critics and their gradients."""
    s, a, r, s2, done = batch["s"], batch["a"], batch["r"], batch["s2"], batch["done"]
    nxt = act(policy, s2, noise=next_noise)
    x2 = _q_input(s2, nxt.action)
    tq = np.minimum(mlp_forward(critics.target1, x2), mlp_forward(critics.target2, x2))[:, 0]
    y = r + cfg.gamma * (1.0 - done) * (tq - cfg.alpha * nxt.log_prob)
    x = _q_input(s, a)
    n = len(s)
    out = []
    for q in (critics.q1, critics.q2):
        pred, cache = mlp_forward_cached(q, x)
        err = pred[:, 0] - y
        grads, _ = mlp_backward(q, x, (2.0 * err / n)[:, None], cache)
        out.append((float(np.mean(err * err)), grads))
    return out[0][0], out[1][0], out[0][1], out[1][1], y


def policy_loss_and_grads(
    policy: Policy,
    critics: Critics,
    cfg: SacConfig,
    s: Array,
    noise: Array,
) -> tuple[float, MlpParams, Array]:
    """``mean(alpha * log pi(a|s) - min Q(s, a))`` with ``a`` reparameterised from ``noise``.

    Returns the loss, policy gradients and the per-state log-probabilities.
    """
    out, cache = mlp_forward_cached(policy.params, s)
    ad = policy.action_dim
    mu, raw = out[:, :ad], out[:, ad:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    u = mu + std * noise
    a = np.tanh(u)
    logp = np.sum(-0.5 * noise * noise - log_std - 0.5 * LOG_2PI, axis=-1) - squash_log_det(u)

    x = _q_input(s, a)
    p1, c1 = mlp_forward_cached(critics.q1, x)
    p2, c2 = mlp_forward_cached(critics.q2, x)
    use1 = p1[:, 0] <= p2[:, 0]
    qmin = np.where(use1, p1[:, 0], p2[:, 0])
    n = len(s)
    loss = float(np.mean(cfg.alpha * logp - qmin))

    sel = (1.0 / n) * np.ones((n, 1))
    _, gx1 = mlp_backward(critics.q1, x, sel * use1[:, None], c1)
    _, gx2 = mlp_backward(critics.q2, x, sel * ~use1[:, None], c2)
    dq_da = (gx1 + gx2)[:, s.shape[1] :]
    # d logp / du = 2 tanh(u) through the squash term; log_std also enters directly
    dl_du = (cfg.alpha * 2.0 * a / n) - dq_da * (1.0 - a * a)
    d_mu = dl_du
    d_log_std = dl_du * std * noise - cfg.alpha / n
    d_log_std = np.where((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX), d_log_std, 0.0)
    grads, _ = mlp_backward(policy.params, s, np.concatenate([d_mu, d_log_std], axis=-1), cache)
    return loss, grads, logp


@dataclass
class SacLosses:
    critic1: float
    critic2: float
    policy: float
    entropy: float
    skipped: bool = False


def sac_update(
    policy: Policy,
    critics: Critics,
    cfg: SacConfig,
    batch: dict[str, Array],
    rng: np.random.Generator,
) -> SacLosses:
    """One critic step, one policy step and a polyak target update, all in place."""
    n, ad = len(batch["s"]), policy.action_dim
    next_noise = rng.standard_normal((n, ad))
    noise = rng.standard_normal((n, ad))
    adam = AdamConfig(lr=cfg.lr)
    l1, l2, g1, g2, _ = critic_loss_and_grads(critics, policy, cfg, batch, next_noise)
    if not (math.isfinite(l1) and math.isfinite(l2)):
        log.warning("non-finite critic loss; SAC update skipped")
        return SacLosses(l1, l2, float("nan"), float("nan"), skipped=True)
    try:
        critics.opt1 = critics.opt1 or AdamState.zeros_like(critics.q1)
        critics.opt2 = critics.opt2 or AdamState.zeros_like(critics.q2)
        q1, o1 = adam_step(critics.q1, g1, critics.opt1, config=adam)
        q2, o2 = adam_step(critics.q2, g2, critics.opt2, config=adam)
        critics.q1, critics.opt1, critics.q2, critics.opt2 = q1, o1, q2, o2

        lp, gp, logp = policy_loss_and_grads(policy, critics, cfg, batch["s"], noise)
        if not math.isfinite(lp):
            raise NonFiniteError("non-finite policy loss")
        policy.opt = policy.opt or AdamState.zeros_like(policy.params)
        policy.params, policy.opt = adam_step(policy.params, gp, policy.opt, config=adam)
    except NonFiniteError as exc:
        log.warning("SAC update skipped: %s", exc)
        return SacLosses(l1, l2, float("nan"), float("nan"), skipped=True)
    critics.target1 = polyak(critics.target1, critics.q1, cfg.tau)
    critics.target2 = polyak(critics.target2, critics.q2, cfg.tau)
    return SacLosses(l1, l2, lp, float(-np.mean(logp)))


def rollout_policy_through_model(
    policy: Policy,
    ens: EnsembleDynamics,
    s_t: Array,
    horizon: int,
    sigma_min: float = SIGMA_MIN,
    sigma_max: float = SIGMA_MAX,
    rng: np.random.Generator | None = None,
) -> ActionSequenceDist:
    """Planner initialisation: read the policy at each imagined state, advance by the model mean.

    States advance under the policy mean unless ``rng`` is given, in which case
    a sample from the (unsquashed) policy Gaussian drives the model.
    """
    s = np.asarray(s_t, dtype=np.float64)
    means = np.empty((horizon, policy.action_dim))
    stds = np.empty((horizon, policy.action_dim))
    for t in range(horizon):
        d = policy.distribution(s)
        if not np.isfinite(s).all() or not np.isfinite(d.mean).all():
            log.warning("policy rollout hit a non-finite state at step %d; freezing the rest", t)
            means[t:] = means[t - 1] if t else 0.0
            stds[t:] = sigma_max
            break
        means[t] = np.clip(d.mean, -1.0, 1.0)
        stds[t] = np.clip(d.std, sigma_min, sigma_max)
        if t + 1 < horizon:
            a = means[t] if rng is None else np.clip(d.mean + d.std * rng.standard_normal(d.mean.shape), -1, 1)
            s = ens.mean_next(s, a)
    return ActionSequenceDist(means, stds)
