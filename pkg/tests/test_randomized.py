import math

import numpy as np
import pytest
from scipy import optimize, stats

from lossless_hedge.confidence import ConfidenceParams, derive_params, eval_g
from lossless_hedge.predictor import simulate
from lossless_hedge.randomized import (RandomizedBetState, loss_tail_probe, randomized_step, run_with_costs,
                                       simulate_randomized, stop_rule, stop_threshold, transaction_params)
from lossless_hedge.rng import uniforms


@pytest.fixture
def params():
    return ConfidenceParams.from_window(1000, 1e-3)


def test_zero_confidence_never_bets(params):
    s = RandomizedBetState(params, seed=1)
    for _ in range(200):
        s.x = 0.0
        bet, s = randomized_step(s, 0.0)
        assert bet == 0


def test_saturated_always_bets(params):
    s = RandomizedBetState(params, seed=1)
    for _ in range(200):
        s.x = params.U + 5
        bet, s = randomized_step(s, 0.0)
        assert bet == 1


def test_trade_frequency_matches_confidence(params):
    x = optimize.brentq(lambda v: eval_g(params, v) - 0.3, 0.0, params.U)
    s = RandomizedBetState(params, seed=5)
    n, hits = 200_000, 0
    for _ in range(n):
        s.x = x
        bet, s = randomized_step(s, 0.0)
        hits += bet != 0
        assert bet >= 0
    lo, hi = stats.binom.ppf([3.2e-5, 1 - 3.2e-5], n, 0.3)  # exact 4 sigma band
    assert lo <= hits <= hi


def test_cost_zero_reduces_to_plain_randomized(rng):
    b = rng.choice([-1.0, 1.0], 500)
    p = ConfidenceParams.from_window(500, 1e-3)
    tr = run_with_costs(b, 0.0, params=p, seed=3)
    assert np.all(tr.extra["cumulative_cost"] == 0)
    assert np.array_equal(tr.confidence, simulate(b[None], p)["conf"][0])
    assert set(np.unique(tr.extra["bet"])) <= {-1.0, 0.0, 1.0}


def test_run_with_costs_reproducible(rng):
    b = rng.choice([-1.0, 1.0], 300)
    a, c = run_with_costs(b, 0.05, Z=1e-3, seed=11), run_with_costs(b, 0.05, Z=1e-3, seed=11)
    assert np.array_equal(a.extra["bet"], c.extra["bet"]) and a.seed == 11


def _cost_runs(B, cost, Z, seeds=200):
    T = B.shape[1]
    p = transaction_params(cost, T, Z)
    U = uniforms(0, seeds, T, purpose=1)
    return simulate_randomized(np.broadcast_to(B, (seeds, T)), p, U, cost=cost)


def test_all_ones_with_costs():
    T, c = 10_000, 0.05
    out = _cost_runs(np.ones((1, T)), c, 1e-4)
    net = out["net"]
    assert net.mean() >= T - 4 * c * T - 3 * net.std(ddof=1) / math.sqrt(len(net))


def test_fair_coin_with_costs():
    T, c, Z = 10_000, 0.05, 1e-4
    B = np.where(uniforms(1, 200, T, purpose=2) < 0.5, 1.0, -1.0)
    p = transaction_params(c, T, Z)
    out = simulate_randomized(B, p, uniforms(0, 200, T, purpose=1), cost=c)
    net = out["net"]
    assert net.mean() >= -3 * c * Z * T - 3 * net.std(ddof=1) / math.sqrt(len(net))


def test_realized_gain_concentrates(rng):
    T = 2000
    b = np.clip(rng.normal(0.2, 0.7, T), -1, 1)
    p = ConfidenceParams.from_window(T, 1e-3)
    det = simulate(b[None], p, record=False)["gain"][0]
    out = simulate_randomized(np.broadcast_to(b, (200, T)), p, uniforms(4, 200, T))
    g = out["gross"]
    assert abs(g.mean() - det) <= 3 * g.std(ddof=1) / math.sqrt(200)


def test_stop_threshold_value():
    assert stop_threshold(0.1, 4) == pytest.approx(4 * math.log(10) / 0.1)
    assert stop_threshold(0.1) == pytest.approx(92.1, abs=0.05)


def test_stop_rule_never_fires_without_loss(params):
    s = RandomizedBetState.with_stop_rule(params, 0.1, seed=2)
    for _ in range(500):
        randomized_step(s, 1.0)
    assert not s.stopped


def _loose():
    return ConfidenceParams.from_window(50, log_inv_z=1.0)


def test_adversary_triggers_stop_within_one_step():
    """Adversary pays against every nonzero bet; the stop rule must cap the loss."""
    thr = stop_threshold(0.1)

    def adversary(x, conf):
        return np.where(conf > 0, -1.0, 1.0)

    out = simulate_randomized(None, _loose(), uniforms(8, 50, 20_000), threshold=thr, adversary=adversary)
    assert np.all(out["stopped"])
    assert np.all(out["max_loss"] <= thr + 1)
    assert np.all(out["max_loss"] > thr)


def test_stopped_state_rejects_steps():
    s = RandomizedBetState.with_stop_rule(_loose(), 0.1, seed=3)
    s.gross = -200.0
    assert stop_rule(s)
    with pytest.raises(RuntimeError):
        randomized_step(s, 1.0)


def test_stop_rule_caps_loss_on_random_sequences(rng):
    thr = stop_threshold(0.1)
    B = rng.choice([-1.0, 1.0], p=[0.55, 0.45], size=(100, 5000))
    out = simulate_randomized(B, _loose(), uniforms(9, 100, 5000), threshold=thr)
    assert np.all(out["max_loss"] <= thr + 1)


def test_invalid_cost():
    with pytest.raises(ValueError):
        RandomizedBetState(ConfidenceParams.from_window(100, 1e-2), cost=1.5)


def test_tail_probe_never_bet():
    rep = loss_tail_probe("never", 0.1, 0.1, 1000, T=500)
    assert rep.loss_quantile == 0.0
    assert rep.mean_regret == pytest.approx(0.1 * 500, rel=0.1)


def test_tail_probe_stopped_capped():
    rep = loss_tail_probe("stopped", 0.1, 0.1, 1000, T=2000)
    assert rep.loss_quantile <= stop_threshold(0.1) + 1
    assert rep.ci[0] <= rep.loss_quantile <= rep.ci[1]


def test_tail_probe_rejects_few_trials():
    with pytest.raises(ValueError, match="100/delta"):
        loss_tail_probe("never", 0.1, 0.01, 500)


def test_self_tuned_constructor():
    s = RandomizedBetState.self_tuned(0.2, 1000)
    assert s.threshold == stop_threshold(0.2)
    assert s.params.log_inv_z == pytest.approx(derive_params(1000, 0.05).log_inv_z)
