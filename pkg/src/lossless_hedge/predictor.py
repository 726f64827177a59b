"""The bounded-loss predictor.

At each step the predictor bets ``g(x_t)`` on the next payoff ``b_t`` and then
updates its discounted deviation ``x_{t+1} = rho_t x_t + b_t``. The discount
``rho_t`` comes from a schedule:

* :class:`Constant` uses a fixed ``rho = 1 - 1/n``;
* :class:`PNorm` uses ``rho_t = 1 - |b_t|^p / n``;
* :class:`ClippedConstant` uses a fixed ``rho`` but, once the deviation is
  saturated, a favourable payoff is banked without growing ``x``.

:func:`simulate` is the batched core. It runs many sequences side by side so
Monte Carlo checks stay fast. :func:`run` wraps it for a single sequence and
returns a :class:`Trace`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .confidence import ConfidenceParams, Variant, _g, _h, potential_closed_form

__all__ = [
    "Constant",
    "PNorm",
    "ClippedConstant",
    "PredictorState",
    "Trace",
    "step",
    "step_clipped",
    "rho_pnorm",
    "simulate",
    "run",
    "telescoping_check",
    "product_expansion",
    "smoothed_gain_floor",
    "potential_floor_check",
    "smoothed_deviation_floor",
    "read_sequence",
    "write_sequence",
    "SEQ_MAGIC",
]

SEQ_MAGIC = b"LHSEQ001"


@dataclass(frozen=True)
class Constant:
    rho: float
    clipped = False

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho!r}")

    def rhos(self, b):
        return np.full(np.shape(b), self.rho)


@dataclass(frozen=True)
class ClippedConstant(Constant):
    clipped = True


@dataclass(frozen=True)
class PNorm:
    p: float
    n: float
    clipped = False

    def __post_init__(self):
        if not 0.0 < self.p <= 2.0:
            raise ValueError(f"p must lie in (0, 2], got {self.p!r}")
        if self.n < 1:
            raise ValueError(f"window n must be >= 1, got {self.n!r}")

    def rhos(self, b):
        return 1.0 - np.abs(b) ** self.p / self.n


def rho_pnorm(b, p, n):
    """Discount ``1 - |b|^p / n`` used by the p-norm schedule."""
    return float(PNorm(p, n).rhos(np.asarray(b, dtype=float)))


def schedule_from_dict(d):
    kind = d["kind"]
    if kind == "constant":
        return Constant(d["rho"])
    if kind == "clipped":
        return ClippedConstant(d["rho"])
    if kind == "pnorm":
        return PNorm(d["p"], d["n"])
    raise ValueError(f"unknown schedule kind {kind!r}")


def schedule_to_dict(s):
    if isinstance(s, PNorm):
        return {"kind": "pnorm", "p": s.p, "n": s.n}
    return {"kind": "clipped" if s.clipped else "constant", "rho": s.rho}


def _check_payoffs(b, bound=1.0):
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("payoffs must be finite")
    if b.size and np.max(np.abs(b)) > bound:
        raise ValueError(f"payoffs must satisfy |b| <= {bound:g}, got max |b| = {np.max(np.abs(b)):g}")
    return b


def _discounted_update(x, b, rho):
    return rho * x + b


@dataclass
class PredictorState:
    """Mutable state of one predictor. ``cum_gain`` is Kahan-compensated."""

    params: ConfidenceParams
    schedule: object = None
    x: float = 0.0
    t: int = 0
    cum_gain: float = 0.0
    _comp: float = field(default=0.0, repr=False)

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = Constant(self.params.rho)

    @property
    def cum_potential(self):
        return float(potential_closed_form(self.params, self.x))

    def _add_gain(self, v):
        y = v - self._comp
        s = self.cum_gain + y
        self._comp = (s - self.cum_gain) - y
        self.cum_gain = s


def _advance(state: PredictorState, b, clipped):
    b = float(_check_payoffs(b))
    conf = float(_g(state.params, np.float64(state.x)))
    rho = float(state.schedule.rhos(np.float64(b)))
    inc = b
    if clipped and not (abs(state.x) < state.params.saturation or conf * b < 0):
        inc = 0.0
    state._add_gain(conf * b)
    state.x = float(_discounted_update(state.x, inc, rho))
    state.t += 1
    return conf, state


def step(state: PredictorState, b):
    """Emit the confidence for this step, then consume ``b``."""
    return _advance(state, b, state.schedule.clipped)


def step_clipped(state: PredictorState, b):
    """One step with the clipped update regardless of the state's schedule."""
    return _advance(state, b, True)


def simulate(B, params: ConfidenceParams, schedule=None, record=True):
    """Run the predictor over the rows of ``B`` (shape ``(S, T)``) in lock-step.

    Returns a dict of arrays. With ``record`` the per-step columns ``conf``,
    ``x``, ``rho`` and ``inc`` are included with shape ``(S, T)``; otherwise
    only running summaries are kept.
    """
    B = _check_payoffs(np.atleast_2d(B))
    S, T = B.shape
    schedule = schedule if schedule is not None else Constant(params.rho)
    clipped = schedule.clipped
    sat = params.saturation
    x = np.zeros(S)
    gain = np.zeros(S)
    comp = np.zeros(S)
    min_gain = np.zeros(S)
    max_abs_x = np.zeros(S)
    if record:
        cols = {k: np.empty((S, T)) for k in ("conf", "x", "rho", "inc")}
    for t in range(T):
        b = B[:, t]
        conf = _g(params, x)
        rho = schedule.rhos(b)
        if clipped:
            inc = np.where((np.abs(x) < sat) | (conf * b < 0), b, 0.0)
        else:
            inc = b
        if record:
            cols["conf"][:, t] = conf
            cols["x"][:, t] = x
            cols["rho"][:, t] = rho
            cols["inc"][:, t] = inc
        y = conf * b - comp
        s = gain + y
        comp = (s - gain) - y
        gain = s
        np.minimum(min_gain, gain, out=min_gain)
        x = _discounted_update(x, inc, rho)
        np.maximum(max_abs_x, np.abs(x), out=max_abs_x)
    out = {"gain": gain, "max_prefix_loss": -min_gain, "max_abs_x": max_abs_x, "x_final": x}
    if record:
        out.update(cols)
    return out


@dataclass
class Trace:
    """Per-step record of one run plus its summary.

    ``x`` holds the deviation at which each bet was placed (before the
    payoff was consumed); ``x_final`` is the deviation after the last step.
    ``increment`` is what was actually added to the deviation, which differs
    from ``b`` only for the clipped schedule. ``extra`` carries optional
    columns such as realised bets for randomized runs.
    """

    b: np.ndarray
    confidence: np.ndarray
    x: np.ndarray
    rho: np.ndarray
    increment: np.ndarray
    x_final: float
    params: ConfidenceParams
    schedule: object
    scale: float = 1.0
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def T(self):
        return len(self.b)

    @property
    def t(self):
        return np.arange(1, self.T + 1)

    @property
    def gain(self):
        """Per-step gain ``confidence * b`` in the original payoff units."""
        return self.confidence * self.b

    @property
    def phi(self):
        return potential_closed_form(self.params, self.x) if self.T else np.zeros(0)

    @property
    def summary(self):
        cum = np.cumsum(self.gain)
        xs = np.abs(np.append(self.x, self.x_final))
        return {
            "T": self.T,
            "final_gain": math.fsum(self.gain),
            "max_prefix_loss": float(max(0.0, -cum.min())) if self.T else 0.0,
            "max_abs_x": float(xs.max()),
            "sum_b": math.fsum(self.b),
        }


def run(sequence, params: ConfidenceParams, schedule=None, scale=1.0) -> Trace:
    """Run the predictor on one payoff sequence and record every step.

    ``scale`` is the payoff bound ``M``: payoffs are divided by it before they
    reach the predictor and gains are reported in the original units.
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale!r}")
    raw = np.asarray(sequence, dtype=float).ravel()
    if not np.all(np.isfinite(raw)):
        raise ValueError("payoffs must be finite")
    if raw.size and np.max(np.abs(raw)) > scale:
        raise ValueError(f"payoffs must satisfy |b| <= {scale:g}")
    schedule = schedule if schedule is not None else Constant(params.rho)
    if raw.size == 0:
        z = np.zeros(0)
        return Trace(raw, z, z, z, z, 0.0, params, schedule, scale)
    out = simulate(raw[None, :] / scale, params, schedule)
    return Trace(b=raw, confidence=out["conf"][0], x=out["x"][0], rho=out["rho"][0],
                 increment=out["inc"][0] * scale, x_final=float(out["x_final"][0]),
                 params=params, schedule=schedule, scale=scale)


def telescoping_check(trace: Trace) -> float:
    """Residual of ``sum_j (1 - rho_j) x_j + x_final = sum_j increment_j``.

    Deviations here are the post-step values, which matches the bet-time
    array shifted by one. Returned relative to ``1 + sum |b|``.
    """
    if trace.T == 0:
        raise ValueError("telescoping check needs a nonempty trace")
    post = np.append(trace.x[1:], trace.x_final)
    inc = trace.increment / trace.scale
    lhs = math.fsum((1.0 - trace.rho[1:]) * post[:-1]) + post[-1]
    rhs = math.fsum(inc)
    return abs(lhs - rhs) / (1.0 + math.fsum(np.abs(inc)))


def product_expansion(increments, rhos):
    """Post-step deviations from ``x_t = sum_{j<=t} inc_j prod_{i=j+1}^{t} rho_i``.

    ``rhos[j]`` is the discount applied after step ``j``, so ``rho`` of the
    step that consumed ``inc_j`` never multiplies ``inc_j`` itself. Quadratic
    cost; meant as an independent check of the recurrence.
    """
    inc = np.asarray(increments, dtype=float)
    r = np.asarray(rhos, dtype=float)
    T = len(inc)
    out = np.empty(T)
    for t in range(T):
        total = 0.0
        for j in range(t + 1):
            total += inc[j] * float(np.prod(r[j + 1:t + 1]))
        out[t] = total
    return out


def _safe_eta_floor(trace: Trace):
    if isinstance(trace.schedule, PNorm):
        raise ValueError("smoothed gain floor needs a constant discount")
    rho = trace.schedule.rho
    return rho if trace.schedule.clipped else 1.0 - (1.0 - rho) / 2.0


def smoothed_gain_floor(trace: Trace, eta) -> float:
    """Worst margin of ``sum_j eta^{t-j} g(x_j) b_j >= Phi_t - Z'/(1-rho)`` over prefixes.

    ``Phi_t`` is the potential of the post-step deviation. ``eta`` must be at
    least ``1 - (1-rho)/2`` (or at least ``rho`` for the clipped schedule).
    Returns the smallest margin; negative means the floor was breached.
    """
    lo = _safe_eta_floor(trace)
    if not lo - 1e-15 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [{lo:.12g}, 1] for this schedule, got {eta!r}")
    if trace.T == 0:
        return 0.0
    params = trace.params
    gains = trace.gain / trace.scale
    smoothed = np.empty(trace.T)
    acc = 0.0
    for t, v in enumerate(gains):
        acc = eta * acc + v
        smoothed[t] = acc
    post = np.append(trace.x[1:], trace.x_final)
    phi = potential_closed_form(params, post)
    slack = params.z_prime / (1.0 - trace.schedule.rho)
    return float(np.min(smoothed - phi + slack))


def potential_floor_check(trace: Trace) -> float:
    """Worst margin of the cumulative potential inequality over prefixes.

    ``gain_t >= sum_{j<=t} rho_bar_j |x_j| [|x_j| outside the h band] + Phi(x_{t+1}) - Z' t``.
    """
    if trace.T == 0:
        return 0.0
    params = trace.params
    rho_bar = 1.0 - trace.rho
    outside = 1.0 - _h(params, trace.x)
    credit = np.cumsum(rho_bar * trace.x * trace.confidence * outside)
    post = np.append(trace.x[1:], trace.x_final)
    phi = potential_closed_form(params, post)
    cum = np.cumsum(trace.gain / trace.scale)
    t = np.arange(1, trace.T + 1)
    return float(np.min(cum - credit - phi + params.z_prime * t))


def thresholded_abs(x, eps):
    """``|x|`` where ``|x| > eps`` and 0 elsewhere."""
    a = np.abs(np.asarray(x, dtype=float))
    return np.where(a > eps, a, 0.0)


def smoothed_deviation_floor(trace: Trace) -> float:
    """Margin of the smoothed-deviation payoff floor for window-``n`` parameters.

    The floor is ``sum_{t<T} |x~_t|_e + |x~_T|_e / rho_bar - e Z T / sqrt(n)``
    with ``x~_t = rho_bar x_t`` and ``e = 2 sqrt(ln(1/Z) / n)``. Returns
    ``gain - floor``.
    """
    params = trace.params
    if trace.T == 0:
        return 0.0
    rho_bar = params.rho_bar
    eps = 2.0 * math.sqrt(params.log_inv_z / params.n)
    post = np.append(trace.x[1:], trace.x_final) * rho_bar
    floor = (thresholded_abs(post[:-1], eps).sum() + thresholded_abs(post[-1], eps) / rho_bar
             - math.e * params.Z * trace.T / math.sqrt(params.n))
    return trace.summary["final_gain"] / trace.scale - float(floor)


def read_sequence(path) -> np.ndarray:
    """Read payoffs from text (one value per line) or the binary LHSEQ001 format."""
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(SEQ_MAGIC):
        body = raw[len(SEQ_MAGIC):]
        if len(body) % 8:
            raise ValueError(f"{path}: binary payload is not a whole number of float64 values")
        seq = np.frombuffer(body, dtype="<f8").astype(float)
    else:
        lines = [ln.strip() for ln in raw.decode("utf-8").splitlines()]
        seq = np.array([float(ln) for ln in lines if ln and not ln.startswith("#")], dtype=float)
    return _check_payoffs(seq)


def write_sequence(path, seq, binary=False):
    seq = _check_payoffs(np.asarray(seq, dtype=float).ravel())
    path = Path(path)
    if binary:
        path.write_bytes(SEQ_MAGIC + struct.pack(f"<{len(seq)}d", *seq))
    else:
        path.write_text("".join(f"{v!r}\n" for v in seq.tolist()))
