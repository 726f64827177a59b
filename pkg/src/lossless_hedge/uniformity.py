"""Smoothed payoffs, the cross-scale identity and Z-uniformity audits.

The smoothed payoff of a stream at scale ``rho = 1 - 1/n`` is the normalised
geometric average ``s~_t = (1 - rho) sum_{j<=t} rho^{t-j} s_j``. A residual
stream is *Z-uniform* at that scale when ``s~_t <= c sqrt(ln(1/Z) / n)`` for
every ``t``, equivalently when the unnormalised discounted sum stays below
``c sqrt(n ln(1/Z))``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .combiner import CLIPPED, build_linear_tree, multiscale_windows, run_tree
from .confidence import Variant

__all__ = [
    "SmoothedSeries",
    "UniformityReport",
    "smooth",
    "smooth_direct",
    "cross_scale_check",
    "audit",
    "audit_scales",
    "noise_like_predict",
    "NoiseLikeResult",
    "discounted_error",
]


@dataclass
class SmoothedSeries:
    source: np.ndarray
    rho: float
    values: np.ndarray

    @property
    def n(self):
        return 1.0 / (1.0 - self.rho)


def _as_series(series):
    s = np.asarray(series, dtype=float)
    if s.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if not np.all(np.isfinite(s)):
        raise ValueError("series must be finite")
    return s


def _check_rho(rho):
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho!r}")


def smooth(series, rho) -> SmoothedSeries:
    """``s~_t = rho s~_{t-1} + (1 - rho) s_t`` starting from ``s~_0 = 0``."""
    s = _as_series(series)
    _check_rho(rho)
    vals = lfilter([1.0 - rho], [1.0, -rho], s) if s.size else s.copy()
    return SmoothedSeries(s, float(rho), vals)


def smooth_direct(series, rho):
    """Quadratic-time explicit sum, for cross-checking :func:`smooth`."""
    s = _as_series(series)
    _check_rho(rho)
    out = np.empty_like(s)
    for t in range(len(s)):
        powers = rho ** np.arange(t, -1, -1, dtype=float)
        out[t] = (1.0 - rho) * math.fsum(powers * s[: t + 1])
    return out


def cross_scale_check(series, rho1, rho2):
    """Check that ``rho1``-smoothing is a convex mix of ``rho2``-smoothed values.

    The right-hand side is ``(1-rho1)/(1-rho2) * [s2_t + (rho1-rho2) sum_{t'<t}
    rho1^{t-t'-1} s2_{t'}]`` with ``s2`` the ``rho2``-smoothed series. Returns a
    dict with the maximum absolute residual, the smallest mixing coefficient,
    and the coefficient mass (the finite-``t`` sum and its infinite limit).
    """
    s = _as_series(series)
    if not 1.0 > rho1 > rho2 >= 0.0:
        raise ValueError(f"need 1 > rho1 > rho2 >= 0, got rho1={rho1!r}, rho2={rho2!r}")
    lhs = smooth(s, rho1).values
    s2 = smooth(s, rho2).values
    # A_t = sum_{t'<t} rho1^{t-t'-1} s2_{t'} obeys A_t = rho1 A_{t-1} + s2_{t-1}.
    shifted = np.concatenate([[0.0], s2[:-1]])
    acc = lfilter([1.0], [1.0, -rho1], shifted)
    k = (1.0 - rho1) / (1.0 - rho2)
    rhs = k * (s2 + (rho1 - rho2) * acc)
    T = len(s)
    lead = k
    tail = k * (rho1 - rho2)
    finite_mass = lead + tail * (1.0 - rho1 ** max(T - 1, 0)) / (1.0 - rho1)
    infinite_mass = lead + tail / (1.0 - rho1)
    return {
        "residual": float(np.max(np.abs(lhs - rhs))) if T else 0.0,
        "min_coefficient": min(lead, tail),
        "coefficient_mass": finite_mass,
        "coefficient_mass_limit": infinite_mass,
    }


@dataclass
class UniformityReport:
    """Worst smoothed residual per scale relative to ``sqrt(ln(1/Z)/n)``.

    ``ratios[k]`` is ``max_t s~_t / sqrt(ln(1/Z)/n_k)``; it is the same number
    as ``max_t sum_j rho^{t-j} r_j / sqrt(n ln(1/Z))`` for the unnormalised
    form.
    """

    scales: list
    dyadic: list
    ratios: list
    worst_t: list
    log_inv_z: float
    c: float
    worst_ratio: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.worst_ratio = float(max(self.ratios)) if self.ratios else -math.inf
        self.passed = bool(self.worst_ratio <= self.c)

    def to_json(self):
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d.pop("worst_ratio", None)
        d.pop("passed", None)
        return cls(**d)


def audit_scales(T, log_inv_z, n_random=10, rng=None):
    """Dyadic scales ``2^j <= T`` above the floor plus random non-dyadic ones."""
    floor = 40.0 * log_inv_z
    dyadic = [float(w) for w in multiscale_windows(T, log_inv_z) if w <= T]
    extra = []
    if n_random and T > floor:
        rng = rng if rng is not None else np.random.default_rng(0)
        while len(extra) < n_random:
            v = float(rng.uniform(floor, T))
            if not float(v).is_integer() or math.log2(v) % 1:
                extra.append(v)
    return dyadic, extra


def audit(residual_series, Z=None, N=1, T=None, c=4.0, *, log_inv_z=None, scales=None,
          n_random=10, rng=None, check_z=True) -> UniformityReport:
    """Audit one residual stream (or rows of a 2-D array) for Z-uniformity."""
    R = np.atleast_2d(np.asarray(residual_series, dtype=float))
    T = R.shape[1] if T is None else int(T)
    lz = -math.log(Z) if log_inv_z is None else float(log_inv_z)
    if check_z and lz < 2.0 * math.log(N * T) * (1 - 1e-12):
        raise ValueError(f"Z must be at most (N T)^-2 = {(N * T) ** -2.0:.3g}")
    if scales is None:
        dyadic, extra = audit_scales(T, lz, n_random, rng)
        scales = dyadic + extra
        flags = [True] * len(dyadic) + [False] * len(extra)
    else:
        scales = [float(n) for n in scales]
        flags = [math.log2(n) % 1 == 0 for n in scales]
    ratios, worst_t = [], []
    for n in scales:
        rho = 1.0 - 1.0 / n
        sm = lfilter([1.0 - rho], [1.0, -rho], R, axis=1)
        thr = math.sqrt(lz / n)
        idx = int(np.argmax(sm.max(axis=0)))
        ratios.append(float(sm.max() / thr))
        worst_t.append(idx)
    return UniformityReport(scales=scales, dyadic=flags, ratios=ratios, worst_t=worst_t,
                            log_inv_z=lz, c=float(c))


def write_smoothed_csv(path, series, scales):
    """Per-(t, scale) smoothed values for plotting."""
    s = _as_series(series)
    cols = [smooth(s, 1.0 - 1.0 / n).values for n in scales]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"n={n:g}" for n in scales])
        for t in range(len(s)):
            w.writerow([t + 1] + [repr(float(c[t])) for c in cols])


def discounted_error(err, n):
    """``E_t = sum_{j<=t} (1-1/n)^{t-j} err_j`` for every ``t``."""
    rho = 1.0 - 1.0 / n
    return lfilter([1.0], [1.0, -rho], np.asarray(err, dtype=float), axis=-1)


@dataclass
class NoiseLikeResult:
    grid: np.ndarray
    predictions: np.ndarray
    error: np.ndarray
    best_constant_error: np.ndarray
    excess: np.ndarray

    @property
    def worst_excess(self):
        return float(self.excess.max())


def noise_like_predict(signal, n, Z=None, *, log_inv_z=None, delta=1.0 / 32.0,
                       variant=Variant.RAMP_EXP) -> NoiseLikeResult:
    """Predict a real signal in ``[-1, 1]`` by mixing constant predictors.

    Leaves are the constants ``-1, -1 + delta, ..., 1`` scored by payoff
    ``1 - |b - z|``. They are combined by a linear comparison tree with the
    constant 0 as base and one level per constant at each dyadic window in
    ``[40 ln(1/Z), n]`` (``n`` itself if none). The prediction is the
    weight-average of the constants.

    ``signal`` may be one sequence or a 2-D array of independent runs.
    """
    B = np.atleast_2d(np.asarray(signal, dtype=float))
    if not np.all(np.isfinite(B)) or (B.size and np.max(np.abs(B)) > 1.0):
        raise ValueError("signal must be finite with values in [-1, 1]")
    lz = -math.log(Z) if log_inv_z is None else float(log_inv_z)
    if n < 40.0 * lz * (1 - 1e-12):
        raise ValueError(f"window n = {n:g} violates n >= 40 ln(1/Z) = {40 * lz:g}")
    m = int(round(2.0 / delta))
    if abs(m * delta - 2.0) > 1e-12:
        raise ValueError("delta must divide 2")
    grid = np.linspace(-1.0, 1.0, m + 1)
    base = int(np.argmin(np.abs(grid)))
    windows = [w for w in multiscale_windows(n, lz) if w <= n] or [n]
    order = [base]
    node_w = []
    for w in windows:
        for i in range(len(grid)):
            order.append(i)
            node_w.append(w)
    tree = build_linear_tree(order, node_w, log_inv_z=lz, schedule=CLIPPED,
                             n_strategies=len(grid), variant=variant)
    payoffs = 1.0 - np.abs(B[:, :, None] - grid[None, None, :])
    res = run_tree(tree, payoffs, record_weights=True)
    pred = res.weights @ grid
    err = discounted_error(np.abs(B - pred), n)
    const_err = discounted_error(np.abs(B[:, :, None] - grid[None, None, :]).transpose(0, 2, 1), n)
    best = const_err.min(axis=1)
    excess = (err - best) / math.sqrt(n * math.log(max(B.shape[1], 2)))
    return NoiseLikeResult(grid, pred, err, best, excess)
