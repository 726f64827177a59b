import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lossless_hedge.combiner import (CombinerNode, ComparisonTree, build_from_nested, build_linear_tree,
                                     build_multiscale_tree, build_unbalanced_tree, combine_pair_step, g_bar,
                                     run_tree, windowed_regret_audit)
from lossless_hedge.confidence import ConfidenceParams, eval_g


@pytest.fixture
def params():
    return ConfidenceParams.from_window(1000, 1e-4)


def test_g_bar_examples(params):
    assert g_bar(params, -5.0) == 0.0
    assert g_bar(params, 2 * params.U) == 1.0
    assert g_bar(params, 0.0) == 0.0
    assert g_bar(params, 10.0) == eval_g(params, 5.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e4, 1e4))
def test_g_bar_in_unit_interval(x):
    w = g_bar(ConfidenceParams.from_window(1000, 1e-4), x)
    assert 0.0 <= w <= 1.0


def test_pair_step_fresh_node_uses_base(params):
    node = CombinerNode(params)
    mixed, w, node = combine_pair_step(node, 0.3, -0.7)
    assert w == 0.0 and mixed == 0.3
    assert node.x == -1.0


def test_pair_equal_streams(params, rng):
    node = CombinerNode(params)
    for s in rng.uniform(-1, 1, 200):
        mixed, w, node = combine_pair_step(node, s, s)
        assert mixed == s and w == 0.0
    assert node.x == 0.0


def test_pair_rejects_out_of_range(params):
    with pytest.raises(ValueError):
        combine_pair_step(CombinerNode(params), 1.2, 0.0)


def test_pair_improver_and_base_sides():
    T, Z = 10_000, 1e-4
    node = CombinerNode(ConfidenceParams.from_window(T, Z))
    total = 0.0
    worst = 0.0
    for _ in range(T):
        mixed, _, node = combine_pair_step(node, 0.0, 1.0)
        total += mixed
        worst = min(worst, total)
    assert total >= T - 9 * math.sqrt(T * math.log(1 / Z))
    assert worst >= -math.e * Z * math.sqrt(T)


def test_single_leaf_tree():
    tree = build_linear_tree([0], 100, 1e-3)
    r = run_tree(tree, np.array([[0.4], [-0.2]]))
    assert np.allclose(r.weights[0, :, 0], 1.0)
    assert np.array_equal(r.root[0], [0.4, -0.2])


def test_two_leaf_fresh_tree():
    tree = build_linear_tree([0, 1], 100, 1e-3)
    r = run_tree(tree, np.array([[0.4, 1.0]]))
    assert np.array_equal(r.weights[0, 0], [1.0, 0.0])


def _oracle(tree, xs, nested_params):
    """Recursive weight oracle written independently of the flat engine."""
    nl = tree.n_leaves

    def mass(slot, m, out):
        if slot < nl:
            out[tree.leaf_strategy[slot]] += m
            return
        k = slot - nl
        w = g_bar(nested_params[k], xs[k])
        mass(tree.left[k], m * (1 - w), out)
        mass(tree.right[k], m * w, out)

    out = np.zeros(tree.n_strategies)
    mass(nl + tree.n_nodes - 1, 1.0, out)
    return out


def _oracle_payoff(tree, slot, pay, xs, ps):
    nl = tree.n_leaves
    if slot < nl:
        return pay[tree.leaf_strategy[slot]]
    k = slot - nl
    w = g_bar(ps[k], xs[k])
    a = _oracle_payoff(tree, tree.left[k], pay, xs, ps)
    b = _oracle_payoff(tree, tree.right[k], pay, xs, ps)
    return (1 - w) * a + w * b


@pytest.mark.parametrize("nested", [None, ((0, 1), 2), (0, (1, 2)), ((0, 2), (1, 0))])
def test_tree_matches_recursive_oracle(nested, rng):
    if nested is None:
        tree = build_linear_tree([0, 1, 2], 50, 1e-3)
    else:
        tree = build_from_nested(nested, 50, 1e-3)
    ps = [tree.node_params(k) for k in range(tree.n_nodes)]
    P = rng.uniform(-1, 1, (100, 3))
    P[:, 2] += 0.3
    P = np.clip(P, -1, 1)
    r = run_tree(tree, P, record_nodes=True)
    xs = np.zeros(tree.n_nodes)
    nl = tree.n_leaves
    for t in range(100):
        w = _oracle(tree, xs, ps)
        assert np.allclose(r.weights[0, t], w, atol=1e-12)
        assert r.root[0, t] == pytest.approx(w @ P[t], abs=1e-12)
        # oracle deviation update from recursively mixed child payoffs
        new = xs.copy()
        for k in range(tree.n_nodes):
            d = (_oracle_payoff(tree, tree.right[k], P[t], xs, ps)
                 - _oracle_payoff(tree, tree.left[k], P[t], xs, ps))
            new[k] = ps[k].rho * xs[k] + d
        assert r.node_payoffs[0, t, -1] == pytest.approx(
            _oracle_payoff(tree, nl + tree.n_nodes - 1, P[t], xs, ps), abs=1e-12)
        xs = new
    assert np.allclose(r.x_final[0], xs, atol=1e-9)


def test_tree_rejects_payoff_count():
    tree = build_linear_tree([0, 1, 2], 50, 1e-3)
    with pytest.raises(ValueError, match="3 strategies"):
        run_tree(tree, np.zeros((5, 2)))


def test_weights_are_distribution(rng):
    tree = build_multiscale_tree(4, 2000, 1e-9)
    P = np.clip(rng.normal(0, 0.5, (3, 2000, 4)) + [0, 0.1, 0.2, -0.1], -1, 1)
    r = run_tree(tree, P)
    assert np.all(r.weights >= 0)
    assert np.max(np.abs(r.weights.sum(axis=2) - 1)) <= 1e-12
    assert np.max(np.abs(np.einsum("stn,stn->st", r.weights, P) - r.root)) <= 1e-12


def test_equal_children_never_move(rng):
    tree = build_multiscale_tree(3, 2000, 1e-9)
    col = rng.uniform(-1, 1, (2000, 1))
    r = run_tree(tree, np.repeat(col, 3, axis=1))
    assert np.all(r.x_final == 0)
    assert np.all(r.weights[0, :, 0] == 1.0)


def test_clipped_deviation_bounded(rng):
    tree = build_multiscale_tree(2, 4096, 1e-9)
    P = np.zeros((4096, 2))
    P[:, 1] = 1.0
    r = run_tree(tree, P)
    assert np.all(r.max_abs_half_x <= tree.U + 1)


def test_multiscale_levels():
    tree = build_multiscale_tree(3, 1024, 1e-8)
    assert tree.n_nodes == 3
    assert np.all(tree.window == 1024)


def test_multiscale_small_horizon_has_no_levels():
    with pytest.raises(ValueError, match="40 ln"):
        build_multiscale_tree(1, 4, 1 / 16)


def test_multiscale_rejects_large_z():
    with pytest.raises(ValueError, match=r"\(N T\)\^-2"):
        build_multiscale_tree(10, 100, 0.5)


def test_multiscale_one_right_transition_per_level():
    tree = build_multiscale_tree(3, 1 << 14, 1e-10)
    nl = tree.n_leaves
    # on a left spine every non-base leaf is a right child exactly once
    assert sorted(tree.right.tolist()) == list(range(1, nl))
    _, dr = tree.depths()
    assert np.all(dr[1:] == 1) and dr[0] == 0


def test_unbalanced_structure():
    one = build_unbalanced_tree(1, 1000, null_base=False)
    assert one.n_nodes == 0
    spine = build_unbalanced_tree(3, 1000, null_base=False)
    assert spine.n_nodes == 2
    three = build_unbalanced_tree(3, 1000)
    dl, dr = three.depths()
    by_strategy = {int(s): (int(a), int(b)) for s, a, b in zip(three.leaf_strategy, dl, dr) if s >= 0}
    # strategy j sits behind j left moves and exactly one right move
    assert by_strategy == {0: (0, 1), 1: (1, 1), 2: (2, 1)}
    assert np.allclose(three.log_inv_z, [max(1.0, 2 * math.log(j)) for j in (3, 2, 1)])
    assert np.all(three.log_inv_z >= 1.0)
    assert np.all(three.window >= 40 * three.log_inv_z)


def test_unbalanced_regret_ordering():
    """Regret to the best strategy is smaller when the best one is the simplest."""
    T = 2000
    tree = build_unbalanced_tree(3, T)
    better = 0
    for seed in range(50):
        g = np.random.default_rng(seed)
        noise = g.normal(0.0, 0.5, (T, 3))
        P1 = np.clip(noise + [0.3, 0.0, 0.0], -1, 1)
        P3 = np.clip(noise + [0.0, 0.0, 0.3], -1, 1)
        r1 = P1[:, 0].sum() - run_tree(tree, P1, record_weights=False).root[0].sum()
        r3 = P3[:, 2].sum() - run_tree(tree, P3, record_weights=False).root[0].sum()
        better += r1 < r3
    assert better == 50


def test_tree_json_roundtrip():
    tree = build_multiscale_tree(3, 4096, 1e-9)
    text = tree.to_json()
    back = ComparisonTree.from_json(text)
    assert back.to_json() == text
    nodes = json.loads(text)["nodes"]
    assert {"id", "left", "right", "window", "Z", "schedule"} <= set(nodes[0])


def test_affine_shift_leaves_weights_unchanged(rng):
    tree = build_linear_tree([0, 1, 2], 100, 1e-3)
    P = rng.uniform(-0.5, 0.5, (300, 3))
    a = run_tree(tree, P)
    b = run_tree(tree, P + 0.25)
    assert np.allclose(a.weights, b.weights, atol=1e-12)


def test_audit_single_interval(rng):
    P = rng.uniform(-1, 1, (100, 2))
    root = P[:, 0] * 0.5
    a = windowed_regret_audit(root, P, [(0, 100, 1)])
    assert a["total"] == pytest.approx(P[:, 1].sum() - root.sum())


def test_audit_rejects_bad_partition(rng):
    P = rng.uniform(-1, 1, (100, 2))
    with pytest.raises(ValueError, match="disjoint cover"):
        windowed_regret_audit(P[:, 0], P, [(0, 50, 0), (40, 100, 1)])
    with pytest.raises(ValueError, match="covers"):
        windowed_regret_audit(P[:, 0], P, [(0, 50, 0)])


def test_windowed_regret_dominant_blocks():
    T, N, k = 10_000, 4, 4
    P = -np.ones((T, N))
    L = T // k
    for j in range(k):
        P[j * L:(j + 1) * L, j] = 1.0
    tree = build_multiscale_tree(N, T, 1.0 / (N * T), check_z=False)
    root = run_tree(tree, P, record_weights=False).root[0]
    parts = [(j * L, (j + 1) * L, j) for j in range(k)]
    a = windowed_regret_audit(root, P, parts, c=8)
    assert a["ok"], a
    # the same run audited against a partition chosen after the fact
    post = [(0, 1000, 0), (1000, 2600, 0), (2600, 5000, 1), (5000, 10_000, 2)]
    post_audit = windowed_regret_audit(root, P, post, c=8, n_strategies=N)
    assert post_audit["total"] <= 8 * post_audit["scale"] + 2 * 2400
