"""Partial-information (bandit) wrapper around a comparison tree.

Only the chosen arm's reward is seen. Each step the observed reward is turned
into an importance-weighted estimate (reward over its sampling probability,
zero for the other arms), scaled down by ``gamma / N`` so it fits in
``[0, 1]``, and fed to a linear comparison tree whose base leaf is the
average of all arms. Arms are then sampled from the tree's weights mixed with
uniform exploration ``gamma``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .combiner import PNORM, ComparisonTree, TreeEngine, build_linear_tree
from .confidence import Variant
from .rng import check_seed, stream, streams

__all__ = [
    "BanditState",
    "bandit_init",
    "bandit_step",
    "exploration_rate",
    "importance_estimate",
    "estimator_expectation",
    "simulate_bandit",
    "BanditRun",
    "bandit_regret_report",
    "RegretReport",
    "read_rewards_csv",
    "write_rewards_csv",
]

GAMMA_MIN, GAMMA_MAX = 1e-6, 0.5
_ARM, _REWARD = 1, 2  # stream purposes


def exploration_rate(N, T, log_inv_z):
    """``gamma`` with ``gamma^{3/2} = sqrt(N ln(1/Z) / T)``."""
    return math.sqrt(N * log_inv_z / T) ** (2.0 / 3.0)


def _log_inv_z(Z, log_inv_z):
    if (Z is None) == (log_inv_z is None):
        raise ValueError("give exactly one of Z and log_inv_z")
    if log_inv_z is None:
        if not 0.0 < Z < 1.0:
            raise ValueError(f"Z must lie in (0, 1), got {Z!r}")
        return -math.log(Z)
    return float(log_inv_z)


@dataclass
class BanditState:
    """One bandit run. ``p`` is the sampling distribution for the next step."""

    N: int
    T: int
    log_inv_z: float
    gamma: float
    n_inner: float
    tree: ComparisonTree
    engine: TreeEngine = field(repr=False)
    p: np.ndarray
    t: int = 0
    cumulative_reward: float = 0.0
    rng: np.random.Generator = field(default=None, repr=False)

    @property
    def Z(self):
        return math.exp(-self.log_inv_z)

    @property
    def scale(self):
        """Factor applied to importance-weighted estimates before the tree sees them."""
        return self.gamma / self.N


def _bandit_tree(N, n_inner, lz, variant):
    # strategies 0..N-1 are the arms, strategy N is their average (the base)
    return build_linear_tree([N] + list(range(N)), n_inner, log_inv_z=lz, schedule=PNORM,
                             n_strategies=N + 1, variant=variant, p=1.0)


def bandit_init(N, T, Z=None, *, log_inv_z=None, seed=0, window_floor="raise",
                variant=Variant.RAMP_EXP) -> BanditState:
    """Set up a bandit run over ``N`` arms and horizon ``T``.

    Requires ``Z <= (N T)^-2`` and an exploration rate inside
    ``[1e-6, 0.5]``. The inner window ``T gamma / N`` must reach
    ``40 ln(1/Z)``; with ``window_floor="clamp"`` it is raised to that floor
    instead of rejected.
    """
    N, T = int(N), int(T)
    if N < 1 or T < 1:
        raise ValueError(f"need N >= 1 and T >= 1, got N={N}, T={T}")
    lz = _log_inv_z(Z, log_inv_z)
    if lz < 2.0 * math.log(N * T) * (1 - 1e-12):
        raise ValueError(f"Z must be at most (N T)^-2 = {(N * T) ** -2.0:.3g}, got {math.exp(-lz):.3g}")
    gamma = exploration_rate(N, T, lz)
    if not GAMMA_MIN <= gamma <= GAMMA_MAX:
        raise ValueError(f"exploration rate gamma = {gamma:.3g} outside [{GAMMA_MIN:g}, {GAMMA_MAX:g}]; "
                         "N, T and Z are inconsistent")
    n_inner = T * gamma / N
    floor = 40.0 * lz
    if n_inner < floor:
        if window_floor == "raise":
            raise ValueError(f"inner window T gamma / N = {n_inner:.1f} is below 40 ln(1/Z) = {floor:.1f}")
        if window_floor != "clamp":
            raise ValueError(f"window_floor must be 'raise' or 'clamp', got {window_floor!r}")
        n_inner = floor
    tree = _bandit_tree(N, n_inner, lz, variant)
    return BanditState(N=N, T=T, log_inv_z=lz, gamma=gamma, n_inner=n_inner, tree=tree,
                       engine=TreeEngine(tree, 1), p=np.full(N, 1.0 / N),
                       rng=stream(check_seed(seed), 0, _ARM))


def importance_estimate(arm, reward, p):
    """Estimate vector: ``reward / p[arm]`` at ``arm`` and zero elsewhere.

    Works on floats or on exact numbers such as :class:`fractions.Fraction`.
    """
    zero = reward * 0
    return [reward / p[i] if i == arm else zero for i in range(len(p))]


def estimator_expectation(p, x):
    """Exact expectation of :func:`importance_estimate` over the chosen arm.

    ``p`` and ``x`` are converted to fractions, so the result equals ``x``
    exactly when the estimator is unbiased.
    """
    p = [Fraction(v) for v in p]
    x = [Fraction(v) for v in x]
    if sum(p) != 1 or min(p) <= 0:
        raise ValueError("p must be a strictly positive distribution")
    out = [Fraction(0)] * len(p)
    for arm, pa in enumerate(p):
        est = importance_estimate(arm, x[arm], p)
        out = [o + pa * e for o, e in zip(out, est)]
    return out


def _check_distribution(p, floor):
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-12):
        raise AssertionError("sampling distribution does not sum to 1")
    if np.any(p < floor * (1.0 - 1e-12)):
        raise AssertionError("sampling probability fell below gamma / N")


def _mix(state_like, sw, N, gamma):
    r = sw[:, :N] + sw[:, N:] / N
    return (1.0 - gamma) * r + gamma / N


def _sample(p, u):
    arm = (np.cumsum(p, axis=-1) <= u[..., None]).sum(axis=-1)
    return np.minimum(arm, p.shape[-1] - 1)


def bandit_step(state: BanditState, reveal, rng=None):
    """Sample an arm, observe its reward via ``reveal(arm)`` and update.

    Returns ``(arm, reward, state)``.
    """
    rng = rng if rng is not None else state.rng
    N = state.N
    p = state.p
    arm = int(_sample(p[None], np.array([rng.random()]))[0])
    reward = float(reveal(arm))
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"rewards must lie in [0, 1], got {reward!r}")
    est = np.zeros((1, N + 1))
    est[0, arm] = reward / p[arm] * state.scale
    est[0, N] = est[0, :N].mean()
    if est.max() > 1.0 + 1e-12:
        raise AssertionError("scaled estimate exceeds 1")
    w = state.engine.node_weights()
    state.engine.advance(est, w)
    sw = state.engine.strategy_weights(state.engine.node_weights())
    state.p = _mix(state, sw, N, state.gamma)[0]
    _check_distribution(state.p, state.gamma / N)
    state.t += 1
    state.cumulative_reward += reward
    return arm, reward, state


@dataclass
class BanditRun:
    """Batched bandit results, one entry per seed.

    ``expected_reward`` is ``sum_t p_t . mu_t`` (pseudo reward), so regrets
    below are free of the sampling noise of the arm draw.
    """

    T: int
    N: int
    gamma: float
    n_inner: float
    log_inv_z: float
    reward: np.ndarray
    expected_reward: np.ndarray
    best_arm_reward: np.ndarray
    average_reward: np.ndarray
    p_final: np.ndarray
    arm_counts: np.ndarray

    @property
    def regret(self):
        return self.best_arm_reward - self.expected_reward

    @property
    def gain_vs_average(self):
        return self.expected_reward - self.average_reward


def simulate_bandit(means=None, rewards=None, T=None, Z=None, *, log_inv_z=None, seeds=1, seed=0,
                    window_floor="raise", block=4096, variant=Variant.RAMP_EXP) -> BanditRun:
    """Run ``seeds`` independent bandits in lock-step.

    Either ``means`` gives Bernoulli arm means (rewards are drawn per seed) or
    ``rewards`` gives a fixed ``(T, N)`` reward matrix shared by all seeds.
    Seed ``i`` draws its arm choices from the same stream that
    :func:`bandit_init` would use with ``seed`` and trial index ``i``.
    """
    if (means is None) == (rewards is None):
        raise ValueError("give exactly one of means and rewards")
    if means is not None:
        mu = np.asarray(means, dtype=float)
        if mu.ndim != 1 or np.any((mu < 0) | (mu > 1)):
            raise ValueError("means must be a vector in [0, 1]")
        N = len(mu)
        if T is None:
            raise ValueError("T is required with means")
        T = int(T)
    else:
        X = np.asarray(rewards, dtype=float)
        if X.ndim != 2 or not np.all(np.isfinite(X)) or np.any((X < 0) | (X > 1)):
            raise ValueError("rewards must be a (T, N) matrix in [0, 1]")
        T, N = X.shape
    S = int(seeds)
    proto = bandit_init(N, T, Z, log_inv_z=log_inv_z, window_floor=window_floor, variant=variant)
    gamma, lz = proto.gamma, proto.log_inv_z
    eng = TreeEngine(proto.tree, S)
    arm_gens = streams(seed, S, 0, _ARM)
    rew_gens = streams(seed, S, 0, _REWARD) if means is not None else None
    p = np.full((S, N), 1.0 / N)
    rows = np.arange(S)
    reward = np.zeros(S)
    expected = np.zeros(S)
    counts = np.zeros((S, N), dtype=np.int64)
    est = np.zeros((S, N + 1))
    floor = gamma / N
    scale = gamma / N
    for lo in range(0, T, block):
        m = min(block, T - lo)
        ua = np.stack([g.random(m) for g in arm_gens])
        ur = np.stack([g.random(m) for g in rew_gens]) if rew_gens is not None else None
        for j in range(m):
            t = lo + j
            w = eng.node_weights()
            p = _mix(None, eng.strategy_weights(w), N, gamma)
            _check_distribution(p, floor)
            arm = _sample(p, ua[:, j])
            if means is not None:
                x = (ur[:, j] < mu[arm]).astype(float)
                expected += p @ mu
            else:
                x = X[t, arm]
                expected += p @ X[t]
            reward += x
            counts[rows, arm] += 1
            est[:] = 0.0
            est[rows, arm] = x / p[rows, arm] * scale
            est[:, N] = est[:, :N].sum(axis=1) / N
            eng.advance(est, w)
    p = _mix(None, eng.strategy_weights(eng.node_weights()), N, gamma)
    if means is not None:
        best = np.full(S, T * mu.max())
        avg = np.full(S, T * mu.mean())
    else:
        best = np.full(S, X.sum(axis=0).max())
        avg = np.full(S, X.sum() / N)
    return BanditRun(T=T, N=N, gamma=gamma, n_inner=proto.n_inner, log_inv_z=lz, reward=reward,
                     expected_reward=expected, best_arm_reward=best, average_reward=avg,
                     p_final=p, arm_counts=counts)


@dataclass
class RegretReport:
    Ts: list
    mean_regret: list
    regret_se: list
    mean_gain_vs_average: list
    gain_se: list
    loss_floor: list
    slope: float | None
    seeds: int

    @property
    def loss_ok(self):
        return all(g >= f for g, f in zip(self.mean_gain_vs_average, self.loss_floor))


def bandit_regret_report(Ts, means, seeds=100, seed=0, k=10.0, z_margin=1.0,
                         window_floor="clamp", fit_slope=True) -> RegretReport:
    """Mean regret against the best arm over a grid of horizons.

    At each ``T`` the confidence level is ``Z = (N T)^-2 e^{-z_margin}``. The
    slope is a least-squares fit of ``log(mean regret)`` on ``log T``; it is
    skipped (``None``) when ``fit_slope`` is false or some mean regret is not
    positive. ``loss_floor`` is ``-k Z N T``.
    """
    Ts = [int(T) for T in Ts]
    if len(Ts) < 3 or max(Ts) < 10 * min(Ts):
        raise ValueError("need at least 3 horizons spanning a decade")
    if seeds < 100:
        raise ValueError(f"need at least 100 seeds, got {seeds}")
    N = len(means)
    reg, reg_se, gain, gain_se, floors = [], [], [], [], []
    for T in Ts:
        lz = 2.0 * math.log(N * T) + z_margin
        run = simulate_bandit(means, T=T, log_inv_z=lz, seeds=seeds, seed=seed, window_floor=window_floor)
        reg.append(float(run.regret.mean()))
        reg_se.append(float(run.regret.std(ddof=1) / math.sqrt(seeds)))
        gain.append(float(run.gain_vs_average.mean()))
        gain_se.append(float(run.gain_vs_average.std(ddof=1) / math.sqrt(seeds)))
        floors.append(-k * math.exp(-lz) * N * T)
    slope = None
    if fit_slope and min(reg) > 0:
        slope = float(np.polyfit(np.log(Ts), np.log(reg), 1)[0])
    return RegretReport(Ts=Ts, mean_regret=reg, regret_se=reg_se, mean_gain_vs_average=gain,
                        gain_se=gain_se, loss_floor=floors, slope=slope, seeds=seeds)


def read_rewards_csv(path):
    """``T`` rows by ``N`` columns of rewards in ``[0, 1]``; ``#`` lines are comments."""
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#"):
                continue
            try:
                rows.append([float(v) for v in rec])
            except ValueError:
                if rows:
                    raise
                continue  # header line
    X = np.array(rows, dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, 0))
    if X.size and (not np.all(np.isfinite(X)) or np.any((X < 0) | (X > 1))):
        raise ValueError(f"{path}: rewards must lie in [0, 1]")
    return X


def write_rewards_csv(path, X):
    X = np.asarray(X, dtype=float)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"arm{i}" for i in range(X.shape[1])])
        for row in X:
            w.writerow([repr(float(v)) for v in row])
