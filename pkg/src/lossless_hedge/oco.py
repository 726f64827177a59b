"""Online convex optimisation: greedy projection and an adaptive step-size grid.

Greedy projection takes a gradient step and projects back onto the feasible
set. No single step size tracks both stationary and moving targets well, so
the adaptive run keeps one greedy-projection learner per step size
``eta_j = 2^-j`` and combines them with a multi-window comparison tree (one
level per learner and window ``2^i``). Leaf losses become payoffs
``-c_t(x) / M_c`` in ``[-1, 0]`` and the emitted decision is the
weight-mixture of the leaf decisions; convexity makes its loss no larger than
the mixed loss, which is checked at every step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .combiner import CLIPPED, TreeEngine, build_multiscale_tree
from .confidence import Variant
from .rng import stream

__all__ = [
    "Box",
    "Ball",
    "project",
    "gp_step",
    "Scenario",
    "OCORun",
    "greedy_projection",
    "static_regret",
    "dynamic_regret",
    "static_regret_bound",
    "dynamic_regret_bound",
    "AdaptiveRun",
    "adaptive_grid_run",
    "grid_regret_bound",
    "load_scenario",
    "save_scenario",
]

LOSS_KINDS = ("quadratic", "linear", "abs")


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo, hi = np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(lo > hi) or not np.all(np.isfinite(lo + hi)):
            raise ValueError("box needs finite lo <= hi of equal length")
        object.__setattr__(self, "lo", tuple(lo.tolist()))
        object.__setattr__(self, "hi", tuple(hi.tolist()))

    @property
    def dimension(self):
        return len(self.lo)

    @property
    def diameter(self):
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    @property
    def center(self):
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2.0

    def project(self, y):
        return np.clip(y, self.lo, self.hi)

    def contains(self, y, tol=1e-10):
        y = np.asarray(y)
        return bool(np.all(y >= np.asarray(self.lo) - tol) and np.all(y <= np.asarray(self.hi) + tol))

    def sample(self, rng, n):
        return rng.uniform(self.lo, self.hi, size=(n, self.dimension))

    def to_dict(self):
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.ndim != 1 or not np.all(np.isfinite(c)) or not self.radius >= 0:
            raise ValueError("ball needs a finite centre and radius >= 0")
        object.__setattr__(self, "center", tuple(c.tolist()))

    @property
    def dimension(self):
        return len(self.center)

    @property
    def diameter(self):
        return 2.0 * self.radius

    def project(self, y):
        c = np.asarray(self.center)
        v = np.asarray(y, dtype=float) - c
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
        factor = np.where(norm > self.radius, self.radius / np.where(norm > 0, norm, 1.0), 1.0)
        return c + v * factor

    def contains(self, y, tol=1e-10):
        return bool(np.all(np.linalg.norm(np.asarray(y) - np.asarray(self.center), axis=-1)
                           <= self.radius + tol))

    def sample(self, rng, n):
        d = self.dimension
        v = rng.standard_normal((n, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = self.radius * rng.random(n) ** (1.0 / d)
        return np.asarray(self.center) + v * r[:, None]

    def to_dict(self):
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


def _set_from_dict(d):
    kind = d.get("type")
    if kind == "box":
        return Box(d["lo"], d["hi"])
    if kind == "ball":
        return Ball(d["center"], d["radius"])
    raise ValueError(f"feasible set must be a box or a ball, got {kind!r}")


def project(F, y):
    """Euclidean projection of ``y`` (any leading batch shape) onto ``F``."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("cannot project a non-finite point")
    return F.project(y)


def gp_step(F, x, gradient, eta):
    """One greedy-projection step ``P(x - eta * gradient)``."""
    g = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient must be finite")
    return F.project(np.asarray(x, dtype=float) - eta * g)


@dataclass
class Scenario:
    """Loss sequence ``c_t(x)`` built around target points ``y_t``.

    * quadratic: ``||x - y_t||^2 / 2``
    * linear: ``<y_t, x>`` (``y_t`` is then the gradient)
    * abs: ``||x - y_t||_1``

    ``targets`` has shape ``(T, d)`` or ``(S, T, d)`` for ``S`` independent
    runs. ``comparator`` is an optional path to measure dynamic regret
    against, ``shifts`` the start indices of its constant pieces.
    """

    F: Box | Ball
    targets: np.ndarray
    kind: str = "quadratic"
    comparator: np.ndarray | None = None
    shifts: list = field(default_factory=lambda: [0])
    grad_bound: float | None = None
    loss_scale: float | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.ndim == 2:
            self.targets = self.targets[None]
        if self.targets.ndim != 3 or self.targets.shape[2] != self.F.dimension:
            raise ValueError("targets must have shape (T, d) or (S, T, d) matching the set")
        if self.comparator is not None:
            self.comparator = np.broadcast_to(np.asarray(self.comparator, dtype=float),
                                              self.targets.shape).copy()
        if self.grad_bound is None:
            self.grad_bound = self._default_grad_bound()
        if self.loss_scale is None:
            self.loss_scale = self.F.diameter * self.grad_bound + abs(self._reference_loss())

    @property
    def S(self):
        return self.targets.shape[0]

    @property
    def T(self):
        return self.targets.shape[1]

    def _default_grad_bound(self):
        d = self.F.dimension
        if self.kind == "quadratic":
            # |x - y| for x in F and targets within one diameter of F
            return self.F.diameter + float(np.max(np.linalg.norm(
                self.targets - self.F.project(self.targets), axis=-1), initial=0.0))
        if self.kind == "linear":
            return float(np.max(np.linalg.norm(self.targets, axis=-1), initial=0.0))
        return math.sqrt(d)

    def _reference_loss(self):
        if self.kind == "linear" and isinstance(self.F, Box):
            return 0.0
        return 0.0

    def value(self, x, t):
        """``c_t`` at ``x`` of shape ``(S, ..., d)``."""
        y = self.targets[:, t]
        y = y.reshape(y.shape[:1] + (1,) * (x.ndim - 2) + y.shape[1:])
        if self.kind == "quadratic":
            return 0.5 * np.sum((x - y) ** 2, axis=-1)
        if self.kind == "linear":
            return np.sum(x * y, axis=-1)
        return np.sum(np.abs(x - y), axis=-1)

    def grad(self, x, t):
        y = self.targets[:, t]
        y = y.reshape(y.shape[:1] + (1,) * (x.ndim - 2) + y.shape[1:])
        if self.kind == "quadratic":
            return x - y
        if self.kind == "linear":
            return np.broadcast_to(y, x.shape)
        return np.sign(x - y)

    def to_dict(self):
        d = {"set": self.F.to_dict(), "kind": self.kind, "targets": self.targets.tolist(),
             "shifts": list(self.shifts), "grad_bound": self.grad_bound, "loss_scale": self.loss_scale}
        if self.comparator is not None:
            d["comparator"] = self.comparator.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(F=_set_from_dict(d["set"]), targets=d["targets"], kind=d.get("kind", "quadratic"),
                   comparator=d.get("comparator"), shifts=d.get("shifts", [0]),
                   grad_bound=d.get("grad_bound"), loss_scale=d.get("loss_scale"))

    @classmethod
    def piecewise(cls, F, T, k, seeds=1, seed=0, noise=0.0, kind="quadratic", points=None):
        """``k`` equal constant pieces with random targets in ``F`` plus Gaussian noise.

        The comparator path is the noiseless piecewise-constant target.
        ``points`` (shape ``(k, d)``) fixes the piece targets for every run.
        """
        if not 1 <= k <= T:
            raise ValueError(f"need 1 <= k <= T, got k={k}, T={T}")
        starts = [round(j * T / k) for j in range(k)]
        bounds = starts + [T]
        d = F.dimension
        tg = np.empty((seeds, T, d))
        comp = np.empty((seeds, T, d))
        for s in range(seeds):
            rng = stream(seed, s, purpose=3)
            pts = np.asarray(points, dtype=float) if points is not None else F.sample(rng, k)
            for j in range(k):
                comp[s, bounds[j]:bounds[j + 1]] = pts[j]
            tg[s] = comp[s] + noise * rng.standard_normal((T, d)) if noise else comp[s]
        return cls(F=F, targets=tg, kind=kind, comparator=comp, shifts=starts)


def load_scenario(path) -> Scenario:
    """Read a scenario JSON file.

    Either ``targets`` is given explicitly, or ``T``, ``k`` and optional
    ``seeds``, ``seed``, ``noise``, ``points`` describe a piecewise-constant
    workload.
    """
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read scenario {path}: {exc}") from exc
    if "targets" in d:
        return Scenario.from_dict(d)
    F = _set_from_dict(d["set"])
    return Scenario.piecewise(F, int(d["T"]), int(d.get("k", 1)), seeds=int(d.get("seeds", 1)),
                              seed=int(d.get("seed", 0)), noise=float(d.get("noise", 0.0)),
                              kind=d.get("kind", "quadratic"), points=d.get("points"))


def save_scenario(scenario: Scenario, path):
    Path(path).write_text(json.dumps(scenario.to_dict()))


@dataclass
class OCORun:
    """Decisions ``x_t`` (shape ``(S, T, d)``), their losses and the step sizes used."""

    points: np.ndarray
    losses: np.ndarray
    etas: np.ndarray
    grad_bound: float

    @property
    def total_loss(self):
        return self.losses.sum(axis=-1)


def _eta_values(eta, T):
    if callable(eta):
        return np.array([float(eta(t)) for t in range(1, T + 1)])
    return np.full(T, float(eta))


def greedy_projection(scenario: Scenario, eta, x0=None) -> OCORun:
    """Greedy projection with step sizes ``eta`` (a constant or ``t -> eta_t``, 1-based)."""
    F, T, S = scenario.F, scenario.T, scenario.S
    etas = _eta_values(eta, T)
    x = np.broadcast_to(F.project(np.asarray(x0, dtype=float)) if x0 is not None else _start(F),
                        (S, F.dimension)).copy()
    pts = np.empty((S, T, F.dimension))
    losses = np.empty((S, T))
    for t in range(T):
        pts[:, t] = x
        losses[:, t] = scenario.value(x, t)
        x = gp_step(F, x, scenario.grad(x, t), etas[t])
    return OCORun(pts, losses, etas, scenario.grad_bound)


def _start(F):
    return F.center if isinstance(F, Box) else np.asarray(F.center)


def best_fixed_point(scenario: Scenario):
    """Minimiser of the summed loss over ``F`` (closed form per loss kind)."""
    F, y = scenario.F, scenario.targets
    if scenario.kind == "quadratic":
        return F.project(y.mean(axis=1))
    if scenario.kind == "linear":
        G = y.sum(axis=1)
        if isinstance(F, Box):
            return np.where(G > 0, np.asarray(F.lo), np.asarray(F.hi))
        n = np.linalg.norm(G, axis=-1, keepdims=True)
        return np.asarray(F.center) - F.radius * G / np.where(n > 0, n, 1.0)
    if isinstance(F, Box):
        return F.project(np.median(y, axis=1))
    raise ValueError("no closed-form best point for the abs loss on a ball")


def static_regret(run: OCORun, scenario: Scenario):
    """Loss minus the loss of the best fixed point in hindsight, per run."""
    u = best_fixed_point(scenario)
    best = np.stack([scenario.value(u, t) for t in range(scenario.T)], axis=1)
    return run.losses.sum(axis=1) - best.sum(axis=1)


def dynamic_regret(losses, scenario: Scenario, comparator=None):
    """Loss minus the loss of a comparator path ``(S, T, d)``, per run."""
    comp = scenario.comparator if comparator is None else np.asarray(comparator, dtype=float)
    if comp is None:
        raise ValueError("scenario has no comparator path")
    ref = np.stack([scenario.value(comp[:, t], t) for t in range(scenario.T)], axis=1)
    return np.asarray(losses).sum(axis=1) - ref.sum(axis=1)


def static_regret_bound(diameter, grad_bound, T):
    """Regret bound for step sizes ``t^-1/2``."""
    return diameter**2 * math.sqrt(T) / 2.0 + (math.sqrt(T) - 0.5) * grad_bound**2


def dynamic_regret_bound(diameter, grad_bound, T, path_length, eta):
    """Dynamic-regret bound for a fixed step size (measurement baseline)."""
    return 7 * diameter**2 / eta + path_length * diameter / eta + T * eta * grad_bound**2 / 2.0


def path_lengths(comparator, shifts, T):
    """Path length of the comparator inside each piece, counting the jump into it."""
    comp = np.asarray(comparator)
    bounds = list(shifts) + [T]
    out = np.zeros((comp.shape[0], len(shifts)))
    for j, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        lo = max(a - 1, 0)
        steps = np.linalg.norm(np.diff(comp[:, lo:b], axis=1), axis=-1)
        out[:, j] = steps.sum(axis=1)
    return out


@dataclass
class AdaptiveRun:
    points: np.ndarray
    losses: np.ndarray
    leaf_losses: np.ndarray
    weights: np.ndarray | None
    etas: list
    windows: list
    jensen_gap: float
    feasible: bool

    @property
    def total_loss(self):
        return self.losses.sum(axis=1)


def adaptive_grid_run(scenario: Scenario, Z=None, *, log_inv_z=None, etas=None,
                      variant=Variant.RAMP_EXP, record_weights=False) -> AdaptiveRun:
    """Greedy projection over a grid of step sizes and windows, mixed by a tree.

    ``etas`` defaults to ``2^-j`` for ``j = 1 .. ceil(log2 T)``; windows are
    the dyadic ``2^i`` at or above ``40 ln(1/Z)``. The base leaf is the first
    (largest) step size. ``jensen_gap`` is the largest excess of the decision
    loss over the weight-mixed leaf loss (at most rounding for convex losses).
    """
    F, T, S = scenario.F, scenario.T, scenario.S
    if not isinstance(F, (Box, Ball)):
        raise ValueError("feasible set must be a box or a ball")
    if etas is None:
        etas = [2.0**-j for j in range(1, max(1, math.ceil(math.log2(T))) + 1)]
    etas = np.asarray(etas, dtype=float)
    J = len(etas)
    tree = build_multiscale_tree(J, max(T, 2), Z, log_inv_z=log_inv_z, schedule=CLIPPED,
                                 variant=variant, check_z=False)
    windows = sorted({float(w) for w in tree.window})
    eng = TreeEngine(tree, S)
    d = F.dimension
    X = np.broadcast_to(_start(F), (S, J, d)).copy()
    pts = np.empty((S, T, d))
    losses = np.empty((S, T))
    leaf = np.empty((S, T, J))
    W = np.empty((S, T, J)) if record_weights else None
    M = scenario.loss_scale
    gap = -math.inf
    feasible = True
    for t in range(T):
        w = eng.node_weights()
        sw = eng.strategy_weights(w)
        x = np.einsum("sj,sjd->sd", sw, X)
        cl = scenario.value(X, t)
        c = scenario.value(x[:, None, :], t)[:, 0]
        gap = max(gap, float(np.max(c - np.sum(sw * cl, axis=1))))
        feasible &= F.contains(x) and F.contains(X)
        pts[:, t] = x
        losses[:, t] = c
        leaf[:, t] = cl
        if record_weights:
            W[:, t] = sw
        eng.advance(np.clip(-cl / M, -1.0, 0.0), w)
        X = F.project(X - etas[None, :, None] * scenario.grad(X, t))
    return AdaptiveRun(pts, losses, leaf, W, etas.tolist(), windows, gap, bool(feasible))


def grid_regret_bound(scenario: Scenario, log_inv_z, k1, k2, k3):
    """Per-run bound ``sum_j [k1 |F| |grad| sqrt(gamma_j) |I_j| + k2 M sqrt(|I_j| ln(1/Z))]
    + k3 Z T (ln T)^2``.

    ``gamma_j`` is the comparator's path length in piece ``j`` divided by
    ``|F| |I_j|``; ``M`` converts payoff units back to losses.
    """
    T, F = scenario.T, scenario.F
    bounds = list(scenario.shifts) + [T]
    sizes = np.diff(bounds).astype(float)
    pl = path_lengths(scenario.comparator, scenario.shifts, T)
    gamma = pl / (F.diameter * sizes[None, :])
    term1 = k1 * F.diameter * scenario.grad_bound * np.sqrt(gamma) * sizes[None, :]
    term2 = k2 * scenario.loss_scale * np.sqrt(sizes * log_inv_z)[None, :]
    return (term1 + term2).sum(axis=1) + k3 * math.exp(-log_inv_z) * T * math.log(T) ** 2
