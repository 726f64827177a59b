"""Combining strategies with comparison trees.

A comparison node watches two payoff streams, a protected *base* (left) and
an *improver* (right). It keeps a discounted deviation ``x`` of the
difference ``s_right - s_left`` and puts weight ``g_bar(x) = g(x/2)`` (zero
for ``x <= 0``) on the improver. Nodes compose into binary trees; the leaf
weight of a strategy is the product of the edge weights from the root.

Trees are stored as flat arrays so many independent runs (seeds) advance in
lock-step:

* slots ``0 .. n_leaves-1`` are leaves, each mapped to a strategy index
  (``-1`` is the never-bet strategy with payoff 0);
* slots ``n_leaves ..`` are internal nodes in post-order, root last.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .confidence import ConfidenceParams, Variant, _g

__all__ = [
    "g_bar",
    "CombinerNode",
    "combine_pair_step",
    "ComparisonTree",
    "TreeRun",
    "TreeEngine",
    "build_linear_tree",
    "build_multiscale_tree",
    "build_unbalanced_tree",
    "build_from_nested",
    "run_tree",
    "windowed_regret_audit",
    "multiscale_windows",
]

PLAIN, CLIPPED, PNORM = "plain", "clipped", "pnorm"
_SCHEDULES = (PLAIN, CLIPPED, PNORM)


def g_bar(params: ConfidenceParams, x):
    """Weight on the improver: ``g(x/2)`` for ``x > 0`` and 0 otherwise."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("deviation must be finite")
    out = np.where(arr > 0, _g(params, arr / 2.0), 0.0)
    return float(out) if np.ndim(x) == 0 else out


def _check_payoffs(*vals):
    for v in vals:
        a = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(a)):
            raise ValueError("payoffs must be finite")
        if a.size and np.max(np.abs(a)) > 1.0:
            raise ValueError(f"payoffs must satisfy |s| <= 1, got {np.max(np.abs(a)):g}")


@dataclass
class CombinerNode:
    """A single comparison node, used on its own for pairwise combination."""

    params: ConfidenceParams
    schedule: str = PLAIN
    p: float = 1.0
    x: float = 0.0

    def __post_init__(self):
        if self.schedule not in _SCHEDULES:
            raise ValueError(f"schedule must be one of {_SCHEDULES}, got {self.schedule!r}")

    @property
    def weight(self):
        return g_bar(self.params, self.x)

    def rho(self, d):
        if self.schedule == PNORM:
            return 1.0 - abs(d / 2.0) ** self.p / self.params.n
        return self.params.rho

    def update(self, d):
        y = self.x / 2.0
        grow = True
        if self.schedule == CLIPPED:
            gy = float(_g(self.params, np.float64(y)))
            grow = abs(y) < self.params.U or gy * d < 0
        self.x = self.rho(d) * self.x + (d if grow else 0.0)


def combine_pair_step(node: CombinerNode, s1, s2):
    """Mix base ``s1`` and improver ``s2`` for one step.

    Returns ``(mixed payoff, weight on s2, node)``; the weight is fixed before
    the payoffs are looked at.
    """
    _check_payoffs(s1, s2)
    w = node.weight
    mixed = (1.0 - w) * s1 + w * s2
    node.update(float(s2) - float(s1))
    return mixed, w, node


@dataclass
class ComparisonTree:
    """Flat description of a comparison tree.

    ``left``/``right`` give child slots of every internal node (post-order).
    Per-node arrays hold the window, ``ln(1/Z)`` and the update schedule.
    """

    leaf_strategy: np.ndarray
    left: np.ndarray
    right: np.ndarray
    window: np.ndarray
    log_inv_z: np.ndarray
    schedule: list
    n_strategies: int
    variant: Variant = Variant.RAMP_EXP
    p: float = 1.0
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.leaf_strategy = np.asarray(self.leaf_strategy, dtype=int)
        self.left = np.asarray(self.left, dtype=int)
        self.right = np.asarray(self.right, dtype=int)
        self.window = np.asarray(self.window, dtype=float)
        self.log_inv_z = np.asarray(self.log_inv_z, dtype=float)
        self.variant = Variant(self.variant)
        K = len(self.left)
        nl = len(self.leaf_strategy)
        if not (len(self.right) == len(self.window) == len(self.log_inv_z) == len(self.schedule) == K):
            raise ValueError("per-node arrays must have equal length")
        if K != nl - 1:
            raise ValueError(f"a binary tree with {nl} leaves has {nl - 1} internal nodes, got {K}")
        for k in range(K):
            for c in (self.left[k], self.right[k]):
                if not 0 <= c < nl + k:
                    raise ValueError(f"node {nl + k} has child {c} that is not defined before it")
        children = np.concatenate([self.left, self.right])
        if len(set(children.tolist())) != len(children):
            raise ValueError("every slot must have exactly one parent")
        if np.any(self.leaf_strategy < -1) or np.any(self.leaf_strategy >= self.n_strategies):
            raise ValueError("leaf strategy index out of range")
        if np.any(self.log_inv_z < 1.0 - 1e-12):
            raise ValueError("every node needs Z <= e^-1")
        for s in self.schedule:
            if s not in _SCHEDULES:
                raise ValueError(f"unknown schedule {s!r}")
        if not self.labels:
            self.labels = [str(i) for i in range(K)]

    @property
    def n_leaves(self):
        return len(self.leaf_strategy)

    @property
    def n_nodes(self):
        return len(self.left)

    @property
    def root(self):
        return self.n_leaves + self.n_nodes - 1

    @property
    def L(self):
        return np.sqrt(self.window)

    @property
    def U(self):
        return 2.0 * self.L * np.sqrt(self.log_inv_z)

    def node_params(self, k) -> ConfidenceParams:
        return ConfidenceParams(log_inv_z=float(self.log_inv_z[k]), L=float(self.L[k]),
                                n=float(self.window[k]), variant=self.variant)

    def depths(self):
        """``(left transitions, right transitions)`` from the root to every leaf slot."""
        nl = self.n_leaves
        dl = np.zeros(nl + self.n_nodes, dtype=int)
        dr = np.zeros(nl + self.n_nodes, dtype=int)
        for k in range(self.n_nodes - 1, -1, -1):
            v = nl + k
            dl[self.left[k]] = dl[v] + 1
            dr[self.left[k]] = dr[v]
            dl[self.right[k]] = dl[v]
            dr[self.right[k]] = dr[v] + 1
        return dl[:nl], dr[:nl]

    def to_json(self) -> str:
        nl = self.n_leaves
        leaves = [{"id": i, "strategy": int(s)} for i, s in enumerate(self.leaf_strategy)]
        nodes = [
            {"id": nl + k, "left": int(self.left[k]), "right": int(self.right[k]),
             "window": float(self.window[k]), "Z": math.exp(-self.log_inv_z[k]),
             "log_inv_z": float(self.log_inv_z[k]), "schedule": self.schedule[k],
             "label": self.labels[k]}
            for k in range(self.n_nodes)
        ]
        doc = {"n_strategies": self.n_strategies, "variant": self.variant.value, "p": self.p,
               "leaves": leaves, "nodes": nodes}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        nl = len(doc["leaves"])
        leaves = sorted(doc["leaves"], key=lambda r: r["id"])
        nodes = sorted(doc["nodes"], key=lambda r: r["id"])
        if [r["id"] for r in leaves] != list(range(nl)):
            raise ValueError("leaf ids must be 0..n_leaves-1")
        if [r["id"] for r in nodes] != list(range(nl, nl + len(nodes))):
            raise ValueError("node ids must follow the leaves consecutively")
        return cls(
            leaf_strategy=[r["strategy"] for r in leaves],
            left=[r["left"] for r in nodes],
            right=[r["right"] for r in nodes],
            window=[r["window"] for r in nodes],
            log_inv_z=[r.get("log_inv_z", -math.log(r["Z"])) for r in nodes],
            schedule=[r["schedule"] for r in nodes],
            n_strategies=doc["n_strategies"],
            variant=doc.get("variant", "ramp"),
            p=doc.get("p", 1.0),
            labels=[r.get("label", str(i)) for i, r in enumerate(nodes)],
        )


def _as_log_inv_z(Z=None, log_inv_z=None):
    if log_inv_z is not None:
        return float(log_inv_z)
    if Z is None or not 0 < Z < 1:
        raise ValueError(f"Z must lie in (0, 1), got {Z!r}")
    return -math.log(Z)


def build_linear_tree(order, window, Z=None, *, log_inv_z=None, schedule=PLAIN,
                      n_strategies=None, variant=Variant.RAMP_EXP, p=1.0) -> ComparisonTree:
    """Left-spine tree: ``order[0]`` is the base, each later strategy improves on it.

    ``window`` may be a scalar or one value per node (``len(order) - 1``).
    """
    order = [int(s) for s in order]
    if not order:
        raise ValueError("need at least one strategy")
    K = len(order) - 1
    lz = _as_log_inv_z(Z, log_inv_z)
    windows = np.broadcast_to(np.asarray(window, dtype=float), (K,)).copy()
    nl = len(order)
    left = ([0] if K else []) + [nl + k - 1 for k in range(1, K)]
    right = list(range(1, nl))
    return ComparisonTree(order, left, right, windows, np.full(K, lz), [schedule] * K,
                          n_strategies if n_strategies is not None else max(order) + 1,
                          variant, p, [f"S{order[k + 1]}" for k in range(K)])


def multiscale_windows(T, log_inv_z):
    """Dyadic windows ``2^j``, ``j = 1..ceil(log2 T)``, at or above ``40 ln(1/Z)``."""
    jmax = max(1, math.ceil(math.log2(T)))
    return [2**j for j in range(1, jmax + 1) if 2**j >= 40.0 * log_inv_z * (1 - 1e-12)]


def build_multiscale_tree(N, T, Z=None, *, log_inv_z=None, schedule=CLIPPED,
                          variant=Variant.RAMP_EXP, check_z=True) -> ComparisonTree:
    """Linear comparison tree over ``N`` strategies at every admissible dyadic window.

    The base leaf is strategy 0. Levels ``(i, j)`` put strategy ``i`` on top
    with window ``2^j``, ordered by window and then strategy, so the root is
    the level of the last strategy at the largest window.
    """
    if N < 1 or T < 2:
        raise ValueError(f"need N >= 1 and T >= 2, got N={N}, T={T}")
    lz = _as_log_inv_z(Z, log_inv_z)
    if check_z and lz < 2.0 * math.log(N * T) * (1 - 1e-12):
        raise ValueError(
            f"Z must be at most (N T)^-2 = {(N * T) ** -2.0:.3g}, got Z = {math.exp(-lz):.3g}"
        )
    windows = multiscale_windows(T, lz)
    if not windows:
        raise ValueError(f"no dyadic window up to 2^ceil(log2 T) reaches the floor 40 ln(1/Z) = {40 * lz:g}")
    order = [0]
    node_windows = []
    labels = []
    for w in windows:
        for i in range(N):
            order.append(i)
            node_windows.append(w)
            labels.append(f"({i},{int(math.log2(w))})")
    tree = build_linear_tree(order, node_windows, log_inv_z=lz, schedule=schedule,
                             n_strategies=N, variant=variant)
    tree.labels = labels
    return tree


def build_unbalanced_tree(n_strategies, T, *, null_base=True, schedule=PLAIN,
                          variant=Variant.RAMP_EXP) -> ComparisonTree:
    """Spine tree for strategies ordered from simplest (0) to most complex.

    Strategy ``j`` (0-based) is the right child of comparison node ``j + 1``
    counted from the root, so it sits at depth ``j + 1`` behind exactly one
    right transition. Node ``j`` uses ``Z_j = 1/j^2``, capped at ``e^-1``, and
    window ``max(T, 40 ln(1/Z_j))``. With ``null_base`` the bottom of the spine
    is the never-bet strategy; otherwise the last strategy takes that place.
    """
    K = int(n_strategies)
    if K < 1:
        raise ValueError("need at least one strategy")
    if K == 1 and not null_base:
        return ComparisonTree([0], [], [], [], [], [], 1, variant)
    # Leaves in bottom-up order: the base first, then strategies deepest first.
    if null_base:
        spine = [-1] + list(range(K - 1, -1, -1))
    else:
        spine = list(range(K - 1, -1, -1))
    n_nodes = len(spine) - 1
    # Bottom node is farthest from the root: node index from the root is n_nodes - k.
    depth_idx = [n_nodes - k for k in range(n_nodes)]
    lz = np.array([max(2.0 * math.log(j), 1.0) for j in depth_idx])
    windows = np.maximum(float(T), 40.0 * lz)
    tree = build_linear_tree(spine, windows, log_inv_z=1.0, schedule=schedule,
                             n_strategies=K, variant=variant)
    tree.log_inv_z = lz
    tree.labels = [f"Z=1/{j}^2" for j in depth_idx]
    return tree


def build_from_nested(nested, window, Z=None, *, log_inv_z=None, schedule=PLAIN,
                      n_strategies=None, variant=Variant.RAMP_EXP) -> ComparisonTree:
    """Tree from nested pairs such as ``((0, 1), 2)``; tuples are ``(left, right)``."""
    lz = _as_log_inv_z(Z, log_inv_z)
    leaves, left, right = [], [], []

    def collect(t):
        if isinstance(t, (tuple, list)):
            if len(t) != 2:
                raise ValueError("internal nodes must be pairs")
            collect(t[0])
            collect(t[1])
        else:
            leaves.append(int(t))

    collect(nested)
    nl = len(leaves)
    counter = iter(range(nl))

    def build(t):
        if isinstance(t, (tuple, list)):
            a = build(t[0])
            b = build(t[1])
            left.append(a)
            right.append(b)
            return nl + len(left) - 1
        return next(counter)

    build(nested)
    K = len(left)
    return ComparisonTree(leaves, left, right, np.full(K, float(window)), np.full(K, lz),
                          [schedule] * K,
                          n_strategies if n_strategies is not None else max(leaves) + 1, variant)


def _g_half(x, lz, L, U, ramp):
    """Vectorised ``g(x/2)`` with per-node parameters (odd, not clamped at 0)."""
    y = x / 2.0
    a = np.abs(y)
    u = a / (2.0 * L)
    v = np.where(a >= U, 1.0, np.exp(np.minimum(u * u - lz, 0.0)))
    if ramp:
        v = np.where(a <= L, np.exp(0.25 - lz) * a / L, v)
    else:
        v = np.where(a == 0.0, 0.0, v)
    return np.copysign(v, y)


class TreeEngine:
    """Step-by-step evaluation of a tree over ``S`` independent runs."""

    def __init__(self, tree: ComparisonTree, S=1):
        self.tree = tree
        self.S = S
        nl, K = tree.n_leaves, tree.n_nodes
        self._leaf_cols = np.where(tree.leaf_strategy < 0, tree.n_strategies, tree.leaf_strategy)
        self._onehot = np.zeros((nl, tree.n_strategies))
        for slot, st in enumerate(tree.leaf_strategy):
            if st >= 0:
                self._onehot[slot, st] = 1.0
        self._lz, self._L, self._U = tree.log_inv_z, tree.L, tree.U
        self._ramp = tree.variant is Variant.RAMP_EXP
        sched = np.array(tree.schedule)
        self._clip = sched == CLIPPED
        self._pnorm = sched == PNORM
        self._rho = 1.0 - 1.0 / tree.window
        self.x = np.zeros((S, K))
        self.max_abs_half_x = np.zeros((S, K))
        self.vals = np.empty((S, nl + K))
        self._mass = np.empty((S, nl + K))
        self._gx = None

    def node_weights(self):
        """Improver weight of every node, fixed before the step's payoffs."""
        self._gx = _g_half(self.x, self._lz, self._L, self._U, self._ramp)
        return np.where(self.x > 0, self._gx, 0.0)

    def strategy_weights(self, w):
        """Per-strategy weights from node weights (top-down mass pass)."""
        tree = self.tree
        nl, K = tree.n_leaves, tree.n_nodes
        mass = self._mass
        if K == 0:
            mass[:, 0] = 1.0
        else:
            mass[:, nl + K - 1] = 1.0
            for k in range(K - 1, -1, -1):
                m = mass[:, nl + k]
                mass[:, tree.right[k]] = m * w[:, k]
                mass[:, tree.left[k]] = m * (1.0 - w[:, k])
        return mass[:, :nl] @ self._onehot

    def advance(self, payoffs, w):
        """Mix ``payoffs`` (shape ``(S, N)``) bottom-up, update deviations, return root payoff."""
        tree = self.tree
        nl, K = tree.n_leaves, tree.n_nodes
        vals = self.vals
        ext = np.concatenate([payoffs, np.zeros((self.S, 1))], axis=1)
        vals[:, :nl] = ext[:, self._leaf_cols]
        for k in range(K):
            a = vals[:, tree.left[k]]
            vals[:, nl + k] = a + w[:, k] * (vals[:, tree.right[k]] - a)
        root = vals[:, nl + K - 1].copy() if K else vals[:, 0].copy()
        if K:
            x = self.x
            d = vals[:, tree.right] - vals[:, tree.left]
            rho = np.where(self._pnorm, 1.0 - np.abs(d / 2.0) ** tree.p / tree.window, self._rho)
            grow = ~self._clip | (np.abs(x / 2.0) < self._U) | (self._gx * d < 0)
            self.x = rho * x + np.where(grow, d, 0.0)
            np.maximum(self.max_abs_half_x, np.abs(self.x) / 2.0, out=self.max_abs_half_x)
        return root


@dataclass
class TreeRun:
    """Output of :func:`run_tree`: arrays indexed ``[seed, t]`` (and strategy)."""

    root: np.ndarray
    weights: np.ndarray | None
    x_final: np.ndarray
    max_abs_half_x: np.ndarray
    node_payoffs: np.ndarray | None = None


def run_tree(tree: ComparisonTree, payoffs, record_weights=True, record_nodes=False) -> TreeRun:
    """Advance ``tree`` over ``payoffs`` of shape ``(T, N)`` or ``(S, T, N)``.

    Each step first fixes every node weight from the current deviations, then
    mixes payoffs bottom-up, then updates all deviations.
    """
    P = np.asarray(payoffs, dtype=float)
    if P.ndim == 2:
        P = P[None]
    if P.ndim != 3:
        raise ValueError("payoffs must have shape (T, N) or (S, T, N)")
    S, T, N = P.shape
    if N != tree.n_strategies:
        raise ValueError(f"tree has {tree.n_strategies} strategies, payoffs have {N} columns")
    _check_payoffs(P)
    eng = TreeEngine(tree, S)
    nl, K = tree.n_leaves, tree.n_nodes
    root_pay = np.empty((S, T))
    weights = np.empty((S, T, N)) if record_weights else None
    nodes_out = np.empty((S, T, K)) if record_nodes else None
    for t in range(T):
        w = eng.node_weights()
        if record_weights:
            weights[:, t] = eng.strategy_weights(w)
        root_pay[:, t] = eng.advance(P[:, t], w)
        if record_nodes:
            nodes_out[:, t] = eng.vals[:, nl:]
    return TreeRun(root_pay, weights, eng.x, eng.max_abs_half_x, nodes_out)


def windowed_regret_audit(root_payoffs, strategy_payoffs, partition, c=None, n_strategies=None):
    """Regret of the root payoff against the assigned strategy on each interval.

    ``partition`` is a list of ``(start, stop, strategy)`` with half-open,
    0-based intervals that must tile ``[0, T)``. Returns a dict with the
    per-interval regrets, their sum, the budget ``c * sum sqrt(|I| ln(N T))``
    and whether the sum fits (``c`` optional).
    """
    root = np.asarray(root_payoffs, dtype=float).ravel()
    sp = np.asarray(strategy_payoffs, dtype=float)
    T = len(root)
    if sp.shape[0] != T:
        raise ValueError("strategy payoffs must have one row per step")
    N = n_strategies if n_strategies is not None else sp.shape[1]
    parts = sorted((int(a), int(b), int(s)) for a, b, s in partition)
    pos = 0
    for a, b, s in parts:
        if a != pos:
            raise ValueError(f"partition is not a disjoint cover: interval starts at {a}, expected {pos}")
        if b <= a:
            raise ValueError(f"empty or reversed interval [{a}, {b})")
        if not 0 <= s < sp.shape[1]:
            raise ValueError(f"strategy {s} out of range")
        pos = b
    if pos != T:
        raise ValueError(f"partition covers [0, {pos}) but the run has T = {T}")
    regrets = [math.fsum(sp[a:b, s]) - math.fsum(root[a:b]) for a, b, s in parts]
    scale = sum(math.sqrt((b - a) * math.log(N * T)) for a, b, _ in parts)
    out = {"intervals": parts, "regrets": regrets, "total": math.fsum(regrets), "scale": scale}
    if c is not None:
        out["budget"] = c * scale
        out["ok"] = out["total"] <= c * scale
    return out
