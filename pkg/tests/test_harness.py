import json
import math

import numpy as np
import pytest

from chi.cli import main
from chi.harness import (
    METRICS_COLUMNS,
    OUTPUT_ROOT_ENV,
    EnsembleConfig,
    MetricsRow,
    RunConfig,
    compare,
    elbo_estimate,
    format_row,
    load_config,
    read_metrics,
    resolve_out_dir,
    run,
    save_config,
    summarise,
)
from chi.planner import PlanConfig
from chi.policy import SacConfig
from chi.tensor import DiagGaussian, gaussian_entropy, load_checkpoint


def tiny(agent="chi", **kw):
    base = dict(
        agent=agent,
        episodes=2,
        eval_every=1,
        warmup=8,
        env_overrides={"episode_len": 6},
        plan=PlanConfig(horizon=3, samples=16, kappa=5.0),
        sac=SacConfig(hidden=16, batch_size=8),
        ensemble=EnsembleConfig(members=2, hidden=(8,), epochs=2),
    )
    base.update(kw)
    return RunConfig(**base)


def entropy_one_quarter():
    # a 1-d Gaussian whose entropy is exactly 0.25 nats
    log_std = 0.25 - 0.5 * math.log(2 * math.pi * math.e)
    return DiagGaussian(np.zeros(1), np.array([log_std]))


def test_elbo_simple_sum():
    d = entropy_one_quarter()
    assert float(gaussian_entropy(d)) == pytest.approx(0.25, abs=1e-12)
    assert elbo_estimate([1.0, 2.0], [d, d]) == pytest.approx(3.5, abs=1e-12)


def test_elbo_empty_trajectory():
    assert elbo_estimate([], []) == 0.0


def test_elbo_independent_of_order():
    rng = np.random.default_rng(0)
    rewards = rng.normal(size=12).tolist()
    dists = [DiagGaussian(rng.normal(size=2), rng.normal(size=2) * 0.3) for _ in range(12)]
    perm = rng.permutation(12)
    a = elbo_estimate(rewards, dists)
    b = elbo_estimate([rewards[i] for i in perm], [dists[i] for i in perm])
    assert a == pytest.approx(b, abs=1e-12)


def test_elbo_length_mismatch():
    with pytest.raises(ValueError):
        elbo_estimate([1.0], [])


def test_config_round_trip(tmp_path):
    cfg = tiny(seed=7, env_overrides={"episode_len": 6, "gap_low": 0.3})
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"agent": "chi", "colour": "blue"})
    with pytest.raises(ValueError):
        RunConfig(agent="ppo")


def test_dotted_overrides():
    cfg = RunConfig().with_overrides(**{"plan.kappa": 3.0, "seed": 4, "episodes": None})
    assert cfg.plan.kappa == 3.0 and cfg.seed == 4 and cfg.episodes == RunConfig().episodes


def test_metrics_row_round_trip(tmp_path):
    rows = [
        MetricsRow(1, -3.25, mean_policy_std=0.1 + 0.2, mean_kl=1e-300, elbo=7.5),
        MetricsRow(2, 1 / 3, 2.0, 0.99, 0.123456789012345678, -0.0, 12.0, -1e17),
    ]
    path = tmp_path / "m.csv"
    path.write_text(",".join(METRICS_COLUMNS) + "\n" + "".join(format_row(r) + "\n" for r in rows))
    back = read_metrics(path)
    for a, b in zip(rows, back):
        for col in METRICS_COLUMNS:
            assert getattr(a, col) == getattr(b, col)


def test_zero_episodes_writes_header_only(tmp_path):
    res = run(tiny(episodes=0), tmp_path / "r")
    assert (tmp_path / "r" / "metrics.csv").read_text() == ",".join(METRICS_COLUMNS) + "\n"
    assert res.rows == []


def test_run_writes_all_artifacts(tmp_path):
    res = run(tiny(), tmp_path / "r")
    out = tmp_path / "r"
    for name in ("metrics.csv", "timings.csv", "config.json", "manifest.json", "policy.ckpt", "critics.ckpt", "ensemble.ckpt"):
        assert (out / name).exists(), name
    rows = read_metrics(out / "metrics.csv")
    assert [r.episode for r in rows] == [1, 2]
    assert all(r.eval_return is not None and r.mean_kl is not None for r in rows)
    assert json.loads((out / "manifest.json").read_text())["metrics_columns"] == METRICS_COLUMNS
    assert len(load_checkpoint(out / "critics.ckpt")) == 4
    for a, b in zip(res.rows, rows):
        assert all(getattr(a, c) == getattr(b, c) for c in METRICS_COLUMNS)


@pytest.mark.parametrize("agent", ["chi", "sac", "cem"])
def test_metrics_byte_identical_across_runs(tmp_path, agent):
    run(tiny(agent), tmp_path / "a")
    run(tiny(agent), tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_different_seeds_differ(tmp_path):
    run(tiny(seed=0), tmp_path / "a")
    run(tiny(seed=1), tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert resolve_out_dir(RunConfig(out_dir="x/y")) == tmp_path / "x" / "y"
    assert resolve_out_dir(RunConfig(out_dir="/abs")).as_posix() == "/abs"


def row(ep, value):
    return MetricsRow(ep, 0.0, eval_return=value)


def test_summary_single_run_is_its_curve():
    res = summarise({"chi": {0: [row(1, 1.0), row(2, 4.0)]}})
    s = res.agents["chi"]
    assert s.episodes == [1, 2] and s.median == [1.0, 4.0]
    assert s.q25 == s.median == s.q75


def test_summary_median_of_three():
    res = summarise({"chi": {0: [row(1, 1.0)], 1: [row(1, 2.0)], 2: [row(1, 3.0)]}})
    assert res.agents["chi"].median == [2.0]


def test_summary_threshold_and_missing_runs():
    curves = {
        "a": {0: [row(1, 5.0), row(2, 10.0)], 1: None},
        "b": {0: [row(1, 9.5), row(2, 9.6)]},
    }
    res = summarise(curves)
    assert res.threshold == pytest.approx(9.0)
    assert res.agents["a"].episodes_to_threshold == 2
    assert res.agents["b"].episodes_to_threshold == 1
    assert res.agents["a"].missing == [1]
    assert "a,10.0,2,1" in res.table()


def test_compare_needs_two_configs(tmp_path):
    with pytest.raises(ValueError):
        compare([tiny()], [0], tmp_path)


def test_compare_writes_summary(tmp_path):
    res = compare([tiny("chi", episodes=1), tiny("cem", episodes=1)], [0, 1], tmp_path)
    assert set(res.agents) == {"chi", "cem"}
    assert (tmp_path / "summary.csv").read_text() == res.table()
    assert (tmp_path / "chi_seed1" / "metrics.csv").exists()


def test_cli_run_with_overrides(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    save_config(tiny(), cfg_path)
    code = main(["run", "--config", str(cfg_path), "--agent", "cem", "--episodes", "1", "--kappa", "2.5",
                 "--elite-fraction", "0.25", "--iters", "2", "--horizon", "2", "--samples", "12", "--out-dir", str(tmp_path / "out")])
    assert code == 0
    saved = load_config(tmp_path / "out" / "config.json")
    assert saved.agent == "cem" and saved.episodes == 1
    assert (saved.plan.kappa, saved.plan.elite_fraction, saved.plan.iterations, saved.plan.horizon, saved.plan.samples) == (2.5, 0.25, 2, 2, 12)
    assert "metrics.csv" in capsys.readouterr().out


def test_cli_compare(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    paths = []
    for agent in ("sac", "cem"):
        p = tmp_path / f"{agent}.json"
        save_config(tiny(agent, episodes=1), p)
        paths.append(str(p))
    assert main(["compare", "--configs", *paths, "--seeds", "0,1", "--out-dir", "sweep"]) == 0
    assert (tmp_path / "sweep" / "summary.csv").exists()
    assert "final_median" in capsys.readouterr().out


def test_cli_reports_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"agent": "chi", "nonsense": 1}))
    assert main(["run", "--config", str(p)]) == 2
    assert "unknown config keys" in capsys.readouterr().err
