"""The hybrid agent loop and its two baselines.

CHI reads an initial action-sequence posterior off the amortised policy rolled
through the model, refines it with the iterative planner and executes the
first refined mean. SAC-only acts from the policy alone; CEM-MPC plans from a
broad fixed initialisation with elite refits.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import EnsembleDynamics
from .envs import PointMass, Pendulum
from .planner import ActionSequenceDist, CandidateSet, PlanConfig, plan
from .policy import Critics, Policy, SacConfig, SacLosses, act, deterministic_action, rollout_policy_through_model, sac_update
from .replay import ReplayBuffer, Transition
from .tensor import Array, DiagGaussian, gaussian_entropy, gaussian_kl


class AgentKind(str, enum.Enum):
    CHI = "chi"
    SAC = "sac"
    CEM = "cem"


@dataclass(frozen=True)
class AgentConfig:
    kind: AgentKind = AgentKind.CHI
    plan: PlanConfig = PlanConfig()
    sac: SacConfig = SacConfig()
    noise_std: float = 0.3
    m_top: int = 5
    m_rand: int = 5
    synthetic_cap: float = 0.8
    warmup: int = 1000
    updates_per_step: int = 1
    # False plans every step from the uninformative init instead of the policy
    amortised_init: bool = True


@dataclass
class Models:
    policy: Policy
    critics: Critics
    ensemble: EnsembleDynamics


@dataclass
class Streams:
    """Independent generators for each consumer of randomness within a run."""

    planner: np.random.Generator
    policy: np.random.Generator
    explore: np.random.Generator
    harvest: np.random.Generator
    sac: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int | np.random.SeedSequence) -> Streams:
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        return cls(*(np.random.default_rng(c) for c in ss.spawn(5)))


@dataclass
class StepDiagnostics:
    action: Array
    # distribution over the current action the agent acted from (for the bound)
    action_dist: DiagGaussian
    init: ActionSequenceDist | None = None
    refined: ActionSequenceDist | None = None
    kl: float = float("nan")
    mean_init_std: float = float("nan")
    policy_std: float = float("nan")


@dataclass
class Decision:
    action: Array
    diagnostics: StepDiagnostics
    candidates: CandidateSet | None = None


def _planned(
    state: Array,
    init: ActionSequenceDist,
    ens: EnsembleDynamics,
    cfg: PlanConfig,
    env,
    rng: np.random.Generator,
    method: str,
) -> tuple[ActionSequenceDist, CandidateSet | None]:
    history: list[CandidateSet] = []
    refined = plan(ens, state, init, cfg, env.model_reward, rng, method=method, history=history)
    return refined, (history[-1] if history else None)


def select_action(
    cfg: AgentConfig,
    state: Array,
    models: Models,
    env: PointMass | Pendulum,
    streams: Streams,
    training: bool,
) -> Decision:
    kind = AgentKind(cfg.kind)
    pcfg = cfg.plan
    ad = env.spec.action_dim
    cands = None
    if kind is AgentKind.SAC:
        d = models.policy.distribution(state)
        if training:
            a = act(models.policy, state, rng=streams.policy).action
        else:
            a = deterministic_action(models.policy, state)
        diag = StepDiagnostics(a, d, policy_std=float(np.mean(d.std)))
    else:
        if kind is AgentKind.CHI and cfg.amortised_init:
            pol = models.policy.distribution(state)
            init = rollout_policy_through_model(
                models.policy, models.ensemble, state, pcfg.horizon, pcfg.sigma_min, pcfg.sigma_max
            )
            policy_std = float(np.mean(pol.std))
        else:
            init = ActionSequenceDist.uninformative(pcfg.horizon, ad, pcfg.sigma_max)
            policy_std = float(np.mean(models.policy.distribution(state).std)) if kind is AgentKind.CHI else math.nan
        method = "cem" if kind is AgentKind.CEM else "mppi"
        refined, cands = _planned(state, init, models.ensemble, pcfg, env, streams.planner, method)
        a = np.clip(refined.mean[0], -1.0, 1.0)
        diag = StepDiagnostics(
            a,
            DiagGaussian.from_std(refined.mean[0], refined.std[0]),
            init=init,
            refined=refined,
            kl=float(gaussian_kl(refined.gaussian(), init.gaussian())),
            mean_init_std=float(np.mean(init.std)),
            policy_std=policy_std,
        )
    if training and cfg.noise_std > 0:
        a = np.clip(a + cfg.noise_std * streams.explore.standard_normal(ad), -1.0, 1.0)
    diag.action = a
    return Decision(a, diag, cands)


def harvest_counterfactuals(
    candidates: CandidateSet | None,
    buffer: ReplayBuffer,
    m_top: int,
    m_rand: int,
    rng: np.random.Generator,
) -> int:
    """Unroll the best and some random imagined sequences into synthetic transitions."""
    if candidates is None or candidates.states is None or m_top + m_rand == 0:
        return 0
    ok = np.flatnonzero(np.isfinite(candidates.log_scores))
    ranked = ok[np.argsort(-candidates.log_scores[ok], kind="stable")]
    top = ranked[:m_top]
    rest = ranked[m_top:]
    rand = rng.choice(rest, size=min(m_rand, len(rest)), replace=False) if len(rest) else rest
    chosen = np.concatenate([top, rand]).astype(int)
    if len(chosen) == 0:
        return 0
    states = candidates.states[chosen]
    h = candidates.executed.shape[1]
    s = states[:, :-1].reshape(-1, states.shape[-1])
    s2 = states[:, 1:].reshape(-1, states.shape[-1])
    a = candidates.executed[chosen].reshape(len(chosen) * h, -1)
    r = candidates.rewards[chosen].reshape(-1)
    return buffer.add_batch(s, a, r, s2, np.zeros(len(r)), synthetic=True)


@dataclass
class EpisodeLog:
    total_return: float
    rewards: list[float] = field(default_factory=list)
    entropies: list[float] = field(default_factory=list)
    diagnostics: list[StepDiagnostics] = field(default_factory=list)
    states: list[Array] = field(default_factory=list)
    synthetic_added: int = 0
    sac: list[SacLosses] = field(default_factory=list)


def episode(
    cfg: AgentConfig,
    env: PointMass | Pendulum,
    models: Models,
    streams: Streams,
    *,
    training: bool,
    seed: int = 0,
    replay: ReplayBuffer | None = None,
    real_data: ReplayBuffer | None = None,
) -> EpisodeLog:
    """Run one full episode. In training mode store transitions and update the policy."""
    kind = AgentKind(cfg.kind)
    s = env.reset(seed)
    log = EpisodeLog(0.0)
    bound = env.spec.action_bound
    for _ in range(env.spec.episode_len):
        dec = select_action(cfg, s, models, env, streams, training)
        res = env.step(bound * dec.action)
        log.states.append(s)
        log.rewards.append(res.reward)
        log.entropies.append(float(gaussian_entropy(dec.diagnostics.action_dist)))
        log.diagnostics.append(dec.diagnostics)
        if training:
            # episodes end only by time limit, so the critic keeps bootstrapping through the last step
            t = Transition(s, dec.action, res.reward, res.next_state, False)
            if real_data is not None:
                real_data.add(t)
            if replay is not None:
                replay.add(t)
                if kind is AgentKind.CHI:
                    log.synthetic_added += harvest_counterfactuals(
                        dec.candidates, replay, cfg.m_top, cfg.m_rand, streams.harvest
                    )
                if kind is not AgentKind.CEM and len(replay) >= cfg.warmup:
                    for _ in range(cfg.updates_per_step):
                        batch = replay.sample(cfg.sac.batch_size, streams.sac, cfg.synthetic_cap)
                        log.sac.append(sac_update(models.policy, models.critics, cfg.sac, batch, streams.sac))
        s = res.next_state
    log.states.append(s)
    log.total_return = float(np.sum(log.rewards))
    return log
