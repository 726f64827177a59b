import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lossless_hedge.oco import (Ball, Box, Scenario, adaptive_grid_run, dynamic_regret, gp_step,
                                greedy_projection, grid_regret_bound, load_scenario, path_lengths, project,
                                save_scenario, static_regret, static_regret_bound)

BOX = Box([-1.0, -1.0], [1.0, 1.0])
BALL = Ball([0.0, 0.0], 1.0)


def test_project_examples():
    assert np.array_equal(project(BOX, [0.2, -0.3]), [0.2, -0.3])
    assert np.array_equal(project(BOX, [3.0, 0.5]), [1.0, 0.5])
    assert np.allclose(project(BALL, [3.0, 4.0]), [0.6, 0.8])


def test_project_rejects_nonfinite():
    with pytest.raises(ValueError):
        project(BOX, [np.nan, 0.0])


@settings(max_examples=60, deadline=None)
@given(arrays(float, 3, elements=st.floats(-50, 50)), st.booleans())
def test_projection_idempotent(y, ball):
    F = Ball(np.zeros(3), 2.0) if ball else Box(-np.ones(3), 2 * np.ones(3))
    p = project(F, y)
    assert F.contains(p)
    assert np.allclose(project(F, p), p, atol=1e-12)


def test_projection_optimality(rng):
    for _ in range(1000):
        d = int(rng.integers(1, 4))
        if rng.random() < 0.5:
            lo = rng.uniform(-2, 0, d)
            F = Box(lo, lo + rng.uniform(0.1, 3, d))
        else:
            F = Ball(rng.uniform(-1, 1, d), rng.uniform(0.1, 2))
        y = rng.uniform(-5, 5, d)
        p = project(F, y)
        pts = F.sample(rng, 1000)
        assert np.linalg.norm(p - y) <= np.min(np.linalg.norm(pts - y, axis=1)) + 1e-12


def test_gp_step_examples():
    x = np.array([0.1, 0.2])
    assert np.array_equal(gp_step(BOX, x, np.zeros(2), 0.5), x)
    assert np.allclose(gp_step(BOX, x, np.array([0.1, -0.1]), 0.5), [0.05, 0.25])
    with pytest.raises(ValueError):
        gp_step(BOX, x, [np.inf, 0.0], 0.5)


def test_static_regret_bound_quadratic():
    T = 10_000
    t = np.arange(T)
    y = np.stack([0.5 * np.cos(t / 50.0), 0.5 * np.sin(t / 77.0)], 1)
    sc = Scenario(BOX, y)
    run = greedy_projection(sc, lambda s: s ** -0.5)
    assert np.all(BOX.contains(run.points))
    assert static_regret(run, sc)[0] <= static_regret_bound(BOX.diameter, sc.grad_bound, T)


def test_greedy_projection_on_ball_stays_feasible(rng):
    sc = Scenario(BALL, rng.uniform(-2, 2, (500, 2)), kind="linear")
    run = greedy_projection(sc, 0.1)
    assert np.all(np.linalg.norm(run.points, axis=-1) <= 1 + 1e-10)


def test_single_cell_reduces_to_greedy_projection():
    sc = Scenario.piecewise(BOX, 2000, 3, seeds=2, noise=0.2)
    ar = adaptive_grid_run(sc, log_inv_z=2 * math.log(2000), etas=[0.1])
    gp = greedy_projection(sc, 0.1)
    assert np.allclose(ar.points, gp.points, atol=1e-14)
    assert np.allclose(ar.losses, gp.losses, atol=1e-14)


def test_adaptive_run_feasible_and_jensen():
    sc = Scenario.piecewise(BALL, 3000, 3, seeds=3, noise=0.3)
    ar = adaptive_grid_run(sc, log_inv_z=2 * math.log(3000), record_weights=True)
    assert ar.feasible
    assert ar.jensen_gap <= 1e-12
    assert np.allclose(ar.weights.sum(axis=2), 1.0, atol=1e-12)
    assert min(ar.windows) >= 40 * 2 * math.log(3000)


def test_piecewise_grid_bound_holds():
    T = 10_000
    lz = 2 * math.log(T)
    sc = Scenario.piecewise(BOX, T, 4, seeds=10, noise=0.3)
    ar = adaptive_grid_run(sc, log_inv_z=lz)
    assert np.all(dynamic_regret(ar.losses, sc) <= grid_regret_bound(sc, lz, 1, 1, 1))


def test_stationary_within_twice_best_cell():
    T = 10_000
    lz = 2 * math.log(T)
    sc = Scenario.piecewise(BOX, T, 1, seeds=50, noise=0.3)
    ar = adaptive_grid_run(sc, log_inv_z=lz)
    combined = dynamic_regret(ar.losses, sc).mean()
    cells = [dynamic_regret(ar.leaf_losses[:, :, j], sc).mean() for j in range(len(ar.etas))]
    assert combined <= 2 * min(cells), (combined, cells)


def test_path_lengths_count_jumps():
    comp = np.zeros((1, 10, 1))
    comp[0, 5:] = 1.0
    assert np.array_equal(path_lengths(comp, [0, 5], 10), [[0.0, 1.0]])


def test_scenario_roundtrip(tmp_path):
    sc = Scenario.piecewise(BALL, 50, 2, seeds=1, noise=0.1, kind="abs")
    path = tmp_path / "s.json"
    save_scenario(sc, path)
    back = load_scenario(path)
    assert np.array_equal(back.targets, sc.targets) and back.kind == "abs"


def test_scenario_description_file(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"set": {"type": "box", "lo": [-1, -1], "hi": [1, 1]}, "T": 100, "k": 2}')
    sc = load_scenario(path)
    assert sc.T == 100 and sc.shifts == [0, 50]


def test_rejects_unknown_loss():
    with pytest.raises(ValueError, match="loss kind"):
        Scenario(BOX, np.zeros((5, 2)), kind="huber")
