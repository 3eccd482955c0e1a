import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chi.dynamics import EnsembleDynamics
from chi.envs import PointMass
from chi.planner import (
    SIGMA_MIN,
    ActionSequenceDist,
    CandidateSet,
    PlanConfig,
    cem_refit,
    plan,
    refit,
    score_sequences,
    update_weights,
)
from chi.tensor import ConfigurationError

from .helpers import linear_toy, toy_reward


def cands(actions, log_scores):
    a = np.asarray(actions, dtype=float)
    return CandidateSet(a, a, np.asarray(log_scores, dtype=float))


def test_zero_reward_scores_one():
    ens = linear_toy()
    cfg = PlanConfig(horizon=2, kappa=1.0)
    c = score_sequences(ens, np.zeros(1), np.zeros((3, 2, 1)), lambda s, a: np.zeros(len(s)), cfg)
    np.testing.assert_array_equal(c.scores, 1.0)


def test_score_ratio_follows_return_difference():
    # one step from s0 = 0 with reward s': returns 0 and ln 3
    ens = linear_toy()
    cfg = PlanConfig(horizon=1, kappa=1.0, action_bound=2.0)
    c = score_sequences(ens, np.zeros(1), np.array([[[0.0]], [[math.log(3)]]]), lambda s, a: s[..., 0], cfg)
    assert c.scores[1] / c.scores[0] == pytest.approx(3.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_rollout_scores_zero():
    ens = linear_toy()
    cfg = PlanConfig(horizon=1, action_bound=np.inf)
    c = score_sequences(ens, np.zeros(1), np.array([[[np.inf]], [[0.0]]]), toy_reward, cfg)
    assert c.scores[0] == 0.0 and c.scores[1] > 0.0


def test_opening_beats_wall_under_perfect_model():
    env = PointMass()

    class Perfect(EnsembleDynamics):
        def delta(self, s, a):
            s2, a2 = np.atleast_2d(s), np.atleast_2d(a)
            nxt = np.stack([env.move(x, env.spec.action_bound * u) for x, u in zip(s2, a2)])
            return (nxt - s2)[None], np.ones((1, *s2.shape))

    ens = Perfect(EnsembleDynamics.create(2, 2, np.random.default_rng(0), n_members=1, hidden=(2,)).params, 2, 2)
    s0 = np.array([0.45, 0.5])
    to_opening = np.tile([1.0, 0.0], (7, 1))
    into_wall = np.tile([0.3, -1.0], (7, 1))
    cfg = PlanConfig(horizon=7)
    c = score_sequences(ens, s0, np.stack([to_opening, into_wall]), env.model_reward, cfg)
    assert c.log_scores[0] > c.log_scores[1]


def test_equal_scores_and_densities_give_uniform_weights():
    q = ActionSequenceDist(np.zeros((1, 1)), np.ones((1, 1)))
    c = update_weights(cands([[[0.5]], [[-0.5]], [[0.5]], [[-0.5]]], [0.0] * 4), q)
    np.testing.assert_allclose(c.weights, 0.25, atol=1e-15)


def test_weights_follow_scores():
    q = ActionSequenceDist(np.zeros((1, 1)), np.ones((1, 1)))
    c = update_weights(cands([[[0.5]], [[-0.5]]], [0.0, math.log(3)]), q)
    np.testing.assert_allclose(c.weights, [0.25, 0.75], atol=1e-12)


def test_zero_score_gets_exact_zero_weight():
    q = ActionSequenceDist(np.zeros((1, 1)), np.ones((1, 1)))
    c = update_weights(cands([[[0.1]], [[0.2]], [[0.3]]], [-np.inf, 1.0, 2.0]), q)
    assert c.weights[0] == 0.0
    assert c.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_all_zero_scores_fall_back_to_uniform():
    q = ActionSequenceDist(np.zeros((1, 1)), np.ones((1, 1)))
    c = update_weights(cands([[[0.1]], [[0.2]]], [-np.inf, -np.inf]), q)
    np.testing.assert_array_equal(c.weights, [0.5, 0.5])


def test_weights_multiply_in_the_density():
    q = ActionSequenceDist(np.zeros((1, 1)), np.ones((1, 1)))
    c = update_weights(cands([[[0.0]], [[1.0]]], [0.0, 0.0]), q)
    ratio = math.exp(-0.5)  # N(1; 0, 1) / N(0; 0, 1)
    np.testing.assert_allclose(c.weights, [1 / (1 + ratio), ratio / (1 + ratio)], rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.floats(-500, 500))
def test_weights_invariant_to_return_shift(seed, shift):
    rng = np.random.default_rng(seed)
    q = ActionSequenceDist(rng.normal(size=(3, 2)), rng.uniform(0.1, 1.0, size=(3, 2)))
    acts = q.mean + q.std * rng.standard_normal((20, 3, 2))
    log_scores = rng.normal(scale=5.0, size=20)
    w1 = update_weights(cands(acts, log_scores), q).weights
    w2 = update_weights(cands(acts, log_scores + shift), q).weights
    np.testing.assert_allclose(w1, w2, atol=1e-9)
    assert np.all(w1 >= 0) and w1.sum() == pytest.approx(1.0, abs=1e-9)


def test_refit_two_symmetric_samples():
    c = cands([[[-1.0]], [[1.0]]], [0.0, 0.0])
    c.weights = np.array([0.5, 0.5])
    q = refit(c)
    assert q.mean[0, 0] == 0.0 and q.std[0, 0] == 1.0


def test_refit_degenerate_weight_pins_sample():
    c = cands([[[0.3]], [[-0.7]]], [0.0, 0.0])
    c.weights = np.array([0.0, 1.0])
    q = refit(c)
    assert q.mean[0, 0] == -0.7 and q.std[0, 0] == SIGMA_MIN


def test_refit_identical_samples():
    c = cands([[[0.2, 0.4]]] * 3, [0.0] * 3)
    c.weights = np.full(3, 1 / 3)
    q = refit(c)
    np.testing.assert_allclose(q.mean, [[0.2, 0.4]])
    np.testing.assert_array_equal(q.std, SIGMA_MIN)


def test_cem_full_elite_equals_uniform_refit():
    rng = np.random.default_rng(1)
    c = cands(rng.normal(size=(10, 2, 1)), rng.normal(size=10))
    c.weights = np.full(10, 0.1)
    a, b = cem_refit(c, 1.0), refit(c)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-15)
    np.testing.assert_allclose(a.std, b.std, atol=1e-15)


def test_cem_top_half():
    acts = [[[0.1]], [[0.5]], [[-0.3]], [[0.9]]]
    q = cem_refit(cands(acts, [4.0, 3.0, 2.0, 1.0]), 0.5)
    assert q.mean[0, 0] == pytest.approx(0.3)
    assert q.std[0, 0] == pytest.approx(0.2)


def test_cem_ties_keep_index_order():
    acts = [[[0.1]], [[0.5]], [[-0.3]], [[0.9]]]
    q = cem_refit(cands(acts, [1.0] * 4), 0.25)
    assert q.mean[0, 0] == 0.1


def test_zero_iterations_return_init():
    init = ActionSequenceDist(np.full((1, 1), 0.4), np.full((1, 1), 0.2))
    out = plan(linear_toy(), np.ones(1), init, PlanConfig(horizon=1, iterations=0), toy_reward, np.random.default_rng(0))
    assert out is init


def test_horizon_mismatch_raises():
    init = ActionSequenceDist.uninformative(2, 1)
    with pytest.raises(ConfigurationError):
        plan(linear_toy(), np.ones(1), init, PlanConfig(horizon=3), toy_reward, np.random.default_rng(0))


@pytest.mark.parametrize("kwargs", [dict(horizon=0), dict(samples=1), dict(kappa=0.0), dict(elite_fraction=1.5)])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigurationError):
        PlanConfig(**kwargs)


def test_toy_expected_reward_non_decreasing():
    ens = linear_toy()
    cfg = PlanConfig(horizon=1, iterations=1, samples=500, kappa=5.0)
    eval_noise = np.random.default_rng(99).standard_normal(20_000)
    curves = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        q = ActionSequenceDist.uninformative(1, 1)
        values = []
        for _ in range(4):
            a = np.clip(q.mean[0, 0] + q.std[0, 0] * eval_noise, -1, 1)
            values.append(float(np.mean(-((1 + a) ** 2))))
            q = plan(ens, np.ones(1), q, cfg, toy_reward, rng)
        curves.append(values)
    med = np.median(curves, axis=0)
    assert np.all(np.diff(med) >= 0)


@settings(max_examples=20, deadline=None)
@given(mu=st.floats(-0.9, 0.9), seed=st.integers(0, 2**31))
def test_tight_init_pins_posterior(mu, seed):
    init = ActionSequenceDist(np.full((1, 1), mu), np.full((1, 1), SIGMA_MIN))
    cfg = PlanConfig(horizon=1, iterations=3, samples=100, kappa=5.0)
    out = plan(linear_toy(), np.ones(1), init, cfg, toy_reward, np.random.default_rng(seed))
    assert abs(out.mean[0, 0] - mu) <= 3 * SIGMA_MIN


@pytest.mark.parametrize("method", ["mppi", "cem"])
def test_plan_bit_reproducible(method):
    init = ActionSequenceDist.uninformative(3, 1)
    cfg = PlanConfig(horizon=3, samples=64)
    a = plan(linear_toy(), np.ones(1), init, cfg, toy_reward, np.random.default_rng(7), method)
    b = plan(linear_toy(), np.ones(1), init, cfg, toy_reward, np.random.default_rng(7), method)
    assert a.mean.tobytes() == b.mean.tobytes() and a.std.tobytes() == b.std.tobytes()


def test_stds_stay_within_bounds():
    init = ActionSequenceDist.uninformative(4, 2)
    ens = EnsembleDynamics.create(2, 2, np.random.default_rng(0), n_members=2, hidden=(8,))
    cfg = PlanConfig(horizon=4, samples=50, iterations=5)
    out = plan(ens, np.zeros(2), init, cfg, lambda s, a: -np.sum(s * s, -1), np.random.default_rng(0))
    assert np.all(out.std >= cfg.sigma_min) and np.all(out.std <= cfg.sigma_max)
