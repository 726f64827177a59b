import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lossless_hedge.combiner import build_multiscale_tree, run_tree
from lossless_hedge.uniformity import (UniformityReport, audit, cross_scale_check, discounted_error,
                                       noise_like_predict, smooth, smooth_direct, write_smoothed_csv)


def test_smooth_constant_series():
    rho, c = 0.9, 0.7
    v = smooth(np.full(50, c), rho).values
    assert np.allclose(v, c * (1 - rho ** np.arange(1, 51)), atol=1e-14)


def test_smooth_rho_zero_is_identity(rng):
    s = rng.uniform(-1, 1, 40)
    assert np.array_equal(smooth(s, 0.0).values, s)


def test_smooth_matches_direct_sum(rng):
    s = rng.uniform(-1, 1, 500)
    assert np.max(np.abs(smooth(s, 0.99).values - smooth_direct(s, 0.99))) <= 1e-12


def test_smooth_rejects_rho_one():
    with pytest.raises(ValueError):
        smooth([1.0, 2.0], 1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.integers(1, 200), elements=st.floats(-1, 1)), st.floats(0, 0.999))
def test_smoothed_values_bounded(s, rho):
    v = smooth(s, rho).values
    assert np.all(np.abs(v) <= np.max(np.abs(s)) + 1e-12)


def test_cross_scale_constant_series():
    out = cross_scale_check(np.full(300, 0.4), 0.99, 0.9)
    assert out["residual"] <= 1e-12


def test_cross_scale_rho2_zero(rng):
    out = cross_scale_check(rng.uniform(-1, 1, 200), 0.95, 0.0)
    assert out["residual"] <= 1e-12


def test_cross_scale_random(rng):
    out = cross_scale_check(rng.choice([-1.0, 1.0], 1000), 0.99, 0.9)
    assert out["residual"] <= 1e-9


def test_cross_scale_many_triples(rng):
    for _ in range(100):
        r2 = rng.uniform(0, 0.98)
        r1 = rng.uniform(r2 + 1e-3, 0.999)
        out = cross_scale_check(rng.uniform(-1, 1, int(rng.integers(1, 400))), r1, r2)
        assert out["residual"] <= 1e-9
        assert out["min_coefficient"] >= 0
        assert out["coefficient_mass_limit"] == pytest.approx(1.0, abs=1e-12)


def test_cross_scale_rejects_ordering():
    with pytest.raises(ValueError, match="rho1 > rho2"):
        cross_scale_check([0.1, 0.2], 0.9, 0.9)


def test_audit_null_model_passes():
    T, N = 4096, 1
    Z = (N * T) ** -2.0
    R = np.random.default_rng(7).choice([-1.0, 1.0], size=(20, T))
    rep = audit(R, Z, N, T)
    assert rep.passed, rep.worst_ratio
    assert any(not d for d in rep.dyadic)


def test_audit_biased_negative_control():
    T = 4096
    R = np.random.default_rng(7).choice([-1.0, 1.0], size=T) * 0.5 + 0.5
    rep = audit(R, T ** -2.0, 1, T)
    assert not rep.passed


def test_audit_rejects_large_z():
    with pytest.raises(ValueError, match=r"\(N T\)\^-2"):
        audit(np.zeros(100), 0.1, 2, 100)


def test_audit_tree_residuals_with_dominant_strategy():
    T, N = 4096, 3
    Z = (N * T) ** -2.0
    tree = build_multiscale_tree(N, T, Z)
    for seed in range(5):
        g = np.random.default_rng(seed)
        P = np.clip(g.normal([0.0, 0.4, -0.2], 0.4, (T, N)), -1, 1)
        root = run_tree(tree, P, record_weights=False).root[0]
        for i in range(N):
            assert audit(P[:, i] - root, Z, N, T).passed


def test_report_json_roundtrip():
    rep = audit(np.random.default_rng(1).choice([-1.0, 1.0], 2048), 2048 ** -2.0, 1, 2048)
    back = UniformityReport.from_json(rep.to_json())
    assert back.worst_ratio == rep.worst_ratio and back.passed == rep.passed


def test_smoothed_csv(tmp_path, rng):
    path = tmp_path / "s.csv"
    write_smoothed_csv(path, rng.uniform(-1, 1, 10), [2.0, 4.0])
    lines = path.read_text().splitlines()
    assert lines[0] == "t,n=2,n=4" and len(lines) == 11


def test_discounted_error_geometric():
    e = discounted_error(np.ones(100), 10)
    assert e[-1] == pytest.approx((1 - 0.9 ** 100) / 0.1)


def test_noise_like_constant_signal():
    n = 512
    res = noise_like_predict(np.full(3000, 0.5), n, log_inv_z=1.0)
    # 0.5 is on the grid, so the best constant is exact
    assert res.best_constant_error[0, -1] == pytest.approx(0.0, abs=1e-9)
    assert res.error[0, -1] / n <= 1 / 32 / 2 + 0.01


def test_noise_like_commitment_needs_gap_above_saturation():
    """A window-n level only commits once the gap times n exceeds about 2U."""
    errs = [noise_like_predict(np.full(3000, 0.5), 512, log_inv_z=lz).error[0, -1] for lz in (1, 3, 10)]
    assert errs[0] < errs[1] < errs[2]


def test_noise_like_piecewise_signal():
    n = 512
    sig = np.where((np.arange(6000) // 2000) % 2 == 0, -0.8, 0.8)
    res = noise_like_predict(sig, n, log_inv_z=10.0)
    assert res.worst_excess <= 8


def test_noise_like_uniform_noise():
    sig = np.random.default_rng(3).uniform(-1, 1, (3, 3000))
    res = noise_like_predict(sig, 512, log_inv_z=10.0)
    assert res.worst_excess <= 8


def test_noise_like_rejects_small_window():
    with pytest.raises(ValueError, match="40 ln"):
        noise_like_predict(np.zeros(10), 100, log_inv_z=10.0)
