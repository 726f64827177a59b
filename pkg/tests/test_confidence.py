import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lossless_hedge.confidence import (ConfidenceParams, Variant, check_drift_condition, derive_params,
                                       eval_g, eval_g_prime, eval_h, potential, potential_closed_form)


def test_derive_params_substitution():
    p = derive_params(10_000, 0.1)
    assert p.log_inv_z == pytest.approx(100.0)
    assert (p.L, p.n) == (100.0, 10_000.0)
    assert p.U == pytest.approx(2000.0, rel=1e-12)


def test_derive_params_boundary_accepted():
    p = derive_params(100, 0.1)
    assert p.log_inv_z == pytest.approx(1.0)
    assert p.U == pytest.approx(20.0)


def test_derive_params_rejects_small_epsilon():
    with pytest.raises(ValueError, match="1/sqrt"):
        derive_params(100, 0.05)


def test_u_recomputed_from_l_and_z():
    p = ConfidenceParams.from_window(5000, 1e-6)
    assert p.U == pytest.approx(2 * p.L * math.sqrt(-math.log(1e-6)), rel=1e-12)


def test_preconditions_named():
    bad = ConfidenceParams(log_inv_z=100, L=1, n=2)
    msgs = bad.preconditions()
    assert any("40 ln(1/Z)" in m for m in msgs)
    good = ConfidenceParams.from_window(10_000, 1e-4)
    assert good.preconditions() == []


def test_invalid_z_rejected():
    with pytest.raises(ValueError):
        ConfidenceParams.from_window(100, 0.5)


def test_step_exp_values():
    p = ConfidenceParams.from_window(10_000, 0.1, variant="step")
    assert eval_g(p, 0.0) == 0.0  # no bet at zero deviation
    assert eval_g(p, 1e-9) == pytest.approx(0.1)  # the right limit at 0 is Z
    assert eval_g(p, p.U) == 1.0
    assert eval_g(p, p.U + 10) == 1.0
    assert eval_g(p, -p.U - 10) == -1.0


def test_ramp_exp_continuous_at_l():
    p = ConfidenceParams.from_window(10_000, 1e-3)
    assert eval_g(p, p.L) == pytest.approx(p.Z * math.exp(0.25), rel=1e-12)
    # the exponential branch formula evaluated at L gives the same value
    assert p.Z * math.exp((p.L / (2 * p.L)) ** 2) == pytest.approx(eval_g(p, p.L), rel=1e-12)
    d = 1e-8
    assert abs(eval_g(p, p.L - d) - eval_g(p, p.L + d)) < 1e-9
    assert abs(eval_g(p, p.U - d) - eval_g(p, p.U + d)) < 1e-6


def test_transaction_ramp_at_offset():
    p = ConfidenceParams.transaction(0.1, 1000, 1e-3)
    assert eval_g(p, 100.0) == pytest.approx(1e-3, rel=1e-12)
    assert eval_g(p, p.saturation + 1) == 1.0


def test_h_values():
    p = ConfidenceParams.from_window(10_000, 0.1, variant="step")
    assert eval_h(p, 0.0) == 1.0
    assert eval_h(p, p.h_band + 1) == 0.0
    tr = ConfidenceParams.transaction(0.1, 1000, 1e-3)
    assert eval_h(tr, 150.0) == 0.5


def test_no_overflow_huge_log_inv_z():
    p = ConfidenceParams.from_window(1e6, log_inv_z=1e4)
    xs = np.linspace(-2 * p.U, 2 * p.U, 1001)
    g = eval_g(p, xs)
    assert np.all(np.isfinite(g)) and np.all(np.abs(g) <= 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e4, 1e4), st.sampled_from(["step", "ramp"]))
def test_g_is_odd(x, variant):
    p = ConfidenceParams.from_window(10_000, 1e-4, variant=variant)
    assert eval_g(p, -x) + eval_g(p, x) == 0.0


@pytest.mark.parametrize("variant", ["step", "ramp"])
def test_g_odd_bulk(variant, rng):
    p = ConfidenceParams.from_window(10_000, 1e-4, variant=variant)
    x = rng.uniform(-3 * p.U, 3 * p.U, 10_000)
    assert np.all(eval_g(p, -x) + eval_g(p, x) == 0.0)


@pytest.mark.parametrize("p", [
    ConfidenceParams.from_window(10_000, 1e-4, variant="step"),
    ConfidenceParams.from_window(10_000, 1e-4, variant="ramp"),
    ConfidenceParams.transaction(0.1, 10_000, 1e-4),
])
def test_g_monotone(p):
    x = np.linspace(-1.5 * (p.saturation + 10), 1.5 * (p.saturation + 10), 200_001)
    assert np.all(np.diff(eval_g(p, x)) >= 0)


def test_g_prime_matches_finite_difference():
    p = ConfidenceParams.from_window(10_000, 1e-4)
    for x in (0.3 * p.L, 2 * p.L, 0.9 * p.U):
        h = 1e-5
        fd = (eval_g(p, x + h) - eval_g(p, x - h)) / (2 * h)
        assert eval_g_prime(p, x) == pytest.approx(fd, rel=1e-5)


def test_potential_basic_values():
    p = ConfidenceParams.from_window(10_000, 1e-4)
    assert potential(p, 0.0) == 0.0
    assert potential(p, p.U + 5) == pytest.approx(potential(p, p.U) + 5, abs=1e-9)


def test_potential_against_trapezoid_oracle():
    p = ConfidenceParams(log_inv_z=-math.log(0.1), L=10, n=1e4, variant="step")
    s = np.linspace(0.0, p.U, int(round(p.U / 1e-5)) + 1)
    f = 0.1 * np.exp((s / (2 * p.L)) ** 2)
    f[0] = 0.0
    oracle = float(np.sum((f[1:] + f[:-1]) * np.diff(s)) / 2)
    # the jump of g at 0 contributes at most one step of width 1e-5
    assert potential(p, p.U) == pytest.approx(oracle, abs=1e-6)
    assert potential_closed_form(p, p.U) == pytest.approx(potential(p, p.U), abs=1e-9)


def test_potential_sandwich(rng):
    for variant in ("step", "ramp"):
        p = ConfidenceParams.from_window(10_000, 1e-4, variant=variant)
        x = rng.uniform(-2 * p.U, 2 * p.U, 1000)
        phi = potential_closed_form(p, x)
        assert np.all(phi <= np.abs(x) + 1e-12)
        assert np.all(phi >= np.abs(x) - p.U - 1e-9)


@pytest.mark.parametrize("variant", ["step", "ramp"])
def test_drift_condition_holds(variant):
    p = derive_params(10_000, 0.1, variant)
    rep = check_drift_condition(p, p.z_prime)
    assert rep.ok, rep


def test_drift_condition_negative_control():
    bad = ConfidenceParams(log_inv_z=100, L=1, n=2, variant="step")
    assert check_drift_condition(bad, bad.Z).max_violation > 0


def test_drift_condition_rejects_coarse_grid():
    p = derive_params(10_000, 0.1)
    with pytest.raises(ValueError):
        check_drift_condition(p, p.z_prime, grid_step=0.1)
