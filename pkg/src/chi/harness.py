"""Experiment orchestration: configs, seeded runs, metrics files and multi-seed comparisons."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agent import AgentConfig, AgentKind, EpisodeLog, Models, Streams, episode
from .dynamics import EnsembleDynamics, train
from .envs import make_env
from .planner import PlanConfig
from .policy import Critics, Policy, SacConfig
from .replay import ReplayBuffer
from .tensor import CHECKPOINT_VERSION, DiagGaussian, gaussian_entropy, save_checkpoint

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "CHI_OUTPUT_ROOT"
METRICS_VERSION = 1


@dataclass(frozen=True)
class EnsembleConfig:
    members: int = 5
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 10
    batch: int = 50
    lr: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    env: str = "pointmass"
    agent: str = "chi"
    episodes: int = 30
    seed: int = 0
    out_dir: str = "runs/default"
    eval_every: int = 5
    replay_capacity: int = 100_000
    noise_std: float = 0.3
    m_top: int = 5
    m_rand: int = 5
    synthetic_cap: float = 0.8
    warmup: int = 1000
    updates_per_step: int = 1
    amortised_init: bool = True
    env_overrides: dict = field(default_factory=dict)
    # kappa 5: the toy posterior only reaches its optimum within tolerance for kappa > 4.5
    plan: PlanConfig = PlanConfig(samples=200, kappa=5.0)
    sac: SacConfig = SacConfig()
    ensemble: EnsembleConfig = EnsembleConfig()

    def __post_init__(self) -> None:
        AgentKind(self.agent)
        if self.episodes < 0 or self.eval_every < 1:
            raise ValueError("episodes must be >= 0 and eval_every >= 1")

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            kind=AgentKind(self.agent),
            plan=self.plan,
            sac=self.sac,
            noise_std=self.noise_std,
            m_top=self.m_top,
            m_rand=self.m_rand,
            synthetic_cap=self.synthetic_cap,
            warmup=self.warmup,
            updates_per_step=self.updates_per_step,
            amortised_init=self.amortised_init,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        nested = {"plan": PlanConfig, "sac": SacConfig, "ensemble": EnsembleConfig}
        for key, typ in nested.items():
            if key in d:
                sub = dict(d[key])
                if key == "ensemble" and "hidden" in sub:
                    sub["hidden"] = tuple(sub["hidden"])
                d[key] = typ(**sub)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kw) -> RunConfig:
        """Replace top-level keys; dotted keys like ``plan.samples`` reach nested configs."""
        top = {k: v for k, v in kw.items() if "." not in k and v is not None}
        cfg = dataclasses.replace(self, **top)
        for k, v in kw.items():
            if "." in k and v is not None:
                section, name = k.split(".", 1)
                cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **{name: v})})
        return cfg


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class MetricsRow:
    episode: int
    train_return: float
    eval_return: float | None = None
    eval_best_reward: float | None = None
    mean_policy_std: float | None = None
    mean_kl: float | None = None
    ensemble_nll: float | None = None
    elbo: float | None = None
    wall_seconds: float | None = None


# wall-clock time is not reproducible, so it lives in timings.csv instead
METRICS_COLUMNS = [f.name for f in dataclasses.fields(MetricsRow) if f.name != "wall_seconds"]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return repr(float(x)) if not isinstance(x, int) else str(x)


def format_row(row: MetricsRow) -> str:
    return ",".join(_fmt(getattr(row, c)) for c in METRICS_COLUMNS)


def read_metrics(path) -> list[MetricsRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            vals = {k: (None if v == "" else float(v)) for k, v in rec.items()}
            vals["episode"] = int(vals["episode"])  # type: ignore[arg-type]
            rows.append(MetricsRow(**vals))  # type: ignore[arg-type]
    return rows


def write_manifest(out: Path) -> None:
    manifest = {"metrics_version": METRICS_VERSION, "checkpoint_version": CHECKPOINT_VERSION, "metrics_columns": METRICS_COLUMNS}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def elbo_estimate(rewards: Sequence[float], dists: Sequence[DiagGaussian]) -> float:
    """Sum of rewards plus the summed per-step action entropies of a logged trajectory."""
    if len(rewards) != len(dists):
        raise ValueError("need one action distribution per reward")
    return float(sum(rewards)) + float(sum(float(gaussian_entropy(d)) for d in dists))


def _mean_or_none(xs) -> float | None:
    vals = [x for x in xs if x is not None and math.isfinite(x)]
    return float(np.mean(vals)) if vals else None


def build_models(cfg: RunConfig, env, rng: np.random.Generator) -> Models:
    sd, ad = env.spec.state_dim, env.spec.action_dim
    policy = Policy.create(sd, ad, rng, cfg.sac)
    critics = Critics.create(sd, ad, rng, cfg.sac)
    ens = EnsembleDynamics.create(sd, ad, rng, cfg.ensemble.members, cfg.ensemble.hidden)
    return Models(policy, critics, ens)


@dataclass
class RunResult:
    rows: list[MetricsRow]
    out_dir: Path
    models: Models
    logs: list[EpisodeLog] = field(default_factory=list, repr=False)


class RunFailed(RuntimeError):
    pass


def resolve_out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / out if root and not out.is_absolute() else out


def run(cfg: RunConfig, out_dir: str | Path | None = None, keep_logs: bool = False) -> RunResult:
    """Train one agent for ``cfg.episodes`` episodes, writing metrics after each one."""
    out = Path(out_dir) if out_dir is not None else resolve_out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    write_manifest(out)
    env = make_env(cfg.env, **cfg.env_overrides)
    acfg = cfg.agent_config()
    kind = acfg.kind
    root = np.random.SeedSequence(cfg.seed)
    init_ss, env_ss, ens_ss, agent_ss = root.spawn(4)
    env_rng = np.random.default_rng(env_ss)
    ens_rng = np.random.default_rng(ens_ss)
    models = build_models(cfg, env, np.random.default_rng(init_ss))
    streams = Streams.from_seed(agent_ss)
    sd, ad = env.spec.state_dim, env.spec.action_dim
    replay = ReplayBuffer(cfg.replay_capacity, sd, ad)
    real = ReplayBuffer(max(cfg.episodes * env.spec.episode_len, 1), sd, ad)

    rows: list[MetricsRow] = []
    logs: list[EpisodeLog] = []
    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as mfh, open(
        out / "timings.csv", "w", encoding="utf-8", newline="\n"
    ) as tfh:
        mfh.write(",".join(METRICS_COLUMNS) + "\n")
        tfh.write("episode,wall_seconds\n")
        mfh.flush()
        try:
            for ep in range(1, cfg.episodes + 1):
                t0 = time.perf_counter()
                lg = episode(
                    acfg, env, models, streams, training=True,
                    seed=int(env_rng.integers(2**31)), replay=replay, real_data=real,
                )
                nll = None
                if kind is not AgentKind.SAC:
                    data = real.arrays()
                    report = train(
                        models.ensemble, data["s"], data["a"], data["s2"], ens_rng,
                        cfg.ensemble.epochs, cfg.ensemble.batch, cfg.ensemble.lr,
                    )
                    nll = report.final_nll
                eval_return = eval_best = None
                eval_seed = int(env_rng.integers(2**31))
                if ep % cfg.eval_every == 0:
                    ev = episode(acfg, env, models, streams, training=False, seed=eval_seed)
                    eval_return, eval_best = ev.total_return, max(ev.rewards)
                diags = lg.diagnostics
                row = MetricsRow(
                    episode=ep,
                    train_return=lg.total_return,
                    eval_return=eval_return,
                    eval_best_reward=eval_best,
                    mean_policy_std=_mean_or_none(d.policy_std for d in diags),
                    mean_kl=_mean_or_none(d.kl for d in diags),
                    ensemble_nll=nll,
                    elbo=elbo_estimate(lg.rewards, [d.action_dist for d in diags]),
                    wall_seconds=time.perf_counter() - t0,
                )
                rows.append(row)
                if keep_logs:
                    logs.append(lg)
                mfh.write(format_row(row) + "\n")
                mfh.flush()
                tfh.write(f"{ep},{row.wall_seconds:.3f}\n")
                tfh.flush()
                log.info("episode %d return %.3f eval %s", ep, row.train_return, row.eval_return)
        except Exception as exc:
            (out / "failure.json").write_text(
                json.dumps({"episode": len(rows) + 1, "error": repr(exc)}, indent=2) + "\n", encoding="utf-8"
            )
            raise RunFailed(f"run aborted after {len(rows)} episodes: {exc!r}") from exc

    save_checkpoint(out / "policy.ckpt", [models.policy.params.arrays()])
    c = models.critics
    save_checkpoint(out / "critics.ckpt", [c.q1.arrays(), c.q2.arrays(), c.target1.arrays(), c.target2.arrays()])
    models.ensemble.save(out / "ensemble.ckpt")
    return RunResult(rows, out, models, logs)


# -- comparisons ---------------------------------------------------------------


@dataclass
class AgentSummary:
    label: str
    episodes: list[int]
    median: list[float]
    q25: list[float]
    q75: list[float]
    seeds_used: list[int]
    missing: list[int]
    episodes_to_threshold: int | None = None

    @property
    def final_median(self) -> float:
        return self.median[-1] if self.median else float("nan")


@dataclass
class CompareResult:
    agents: dict[str, AgentSummary]
    threshold: float

    def table(self) -> str:
        lines = ["agent,episode,median,q25,q75"]
        for name, s in self.agents.items():
            for e, m, lo, hi in zip(s.episodes, s.median, s.q25, s.q75):
                lines.append(f"{name},{e},{m!r},{lo!r},{hi!r}")
        lines.append("")
        lines.append("agent,final_median,episodes_to_threshold,missing_seeds")
        for name, s in self.agents.items():
            ett = "" if s.episodes_to_threshold is None else str(s.episodes_to_threshold)
            lines.append(f"{name},{s.final_median!r},{ett},{' '.join(map(str, s.missing))}")
        return "\n".join(lines) + "\n"


def summarise(curves: dict[str, dict[int, list[MetricsRow]]], threshold_frac: float = 0.9) -> CompareResult:
    """Median/IQR of evaluation returns per agent plus episodes-to-threshold.

    The threshold is ``threshold_frac`` of the best final median across agents;
    an agent's count is the first evaluated episode where its median reaches it.
    """
    agents: dict[str, AgentSummary] = {}
    for label, by_seed in curves.items():
        ok = {s: rows for s, rows in by_seed.items() if rows is not None}
        missing = sorted(s for s, rows in by_seed.items() if rows is None)
        if not ok:
            agents[label] = AgentSummary(label, [], [], [], [], [], missing)
            continue
        eps = sorted({r.episode for rows in ok.values() for r in rows if r.eval_return is not None})
        med, q25, q75 = [], [], []
        for e in eps:
            vals = [r.eval_return for rows in ok.values() for r in rows if r.episode == e and r.eval_return is not None]
            med.append(float(np.median(vals)))
            q25.append(float(np.percentile(vals, 25)))
            q75.append(float(np.percentile(vals, 75)))
        agents[label] = AgentSummary(label, eps, med, q25, q75, sorted(ok), missing)
    finals = [s.final_median for s in agents.values() if s.median]
    best = max(finals) if finals else float("nan")
    threshold = threshold_frac * best if best >= 0 else best / threshold_frac
    for s in agents.values():
        for e, m in zip(s.episodes, s.median):
            if m >= threshold:
                s.episodes_to_threshold = e
                break
    return CompareResult(agents, threshold)


def compare(
    configs: Sequence[RunConfig],
    seeds: Sequence[int],
    out_root: str | Path,
    threshold_frac: float = 0.9,
) -> CompareResult:
    """Run every config under every seed and summarise evaluation curves per agent label."""
    if len(configs) < 2:
        raise ValueError("compare needs at least two configs")
    out_root = Path(out_root)
    curves: dict[str, dict[int, list[MetricsRow] | None]] = {}
    for cfg in configs:
        label, n = cfg.agent, 1
        while label in curves:
            n += 1
            label = f"{cfg.agent}{n}"
        curves[label] = {}
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, seed=seed)
            try:
                res = run(run_cfg, out_root / f"{label}_seed{seed}")
                curves[label][seed] = res.rows
            except RunFailed as exc:
                log.error("run %s seed %d failed: %s", label, seed, exc)
                curves[label][seed] = None
    result = summarise(curves, threshold_frac)  # type: ignore[arg-type]
    (out_root / "summary.csv").write_text(result.table(), encoding="utf-8")
    return result
