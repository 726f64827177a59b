"""Confidence functions g(x), the step function h(x) and the potential Phi.

A confidence function maps the discounted deviation of a payoff stream to a
bet size in [-1, 1]. It stays exponentially close to zero until the deviation
reaches the noise scale ``L`` and saturates at ``U = 2 L sqrt(ln(1/Z))``.

Three variants are provided:

``StepExp``
    ``sign(x) * exp(ln Z + (x / 2L)^2)`` below ``U``, ``sign(x)`` above.
``RampExp``
    as ``StepExp`` but linear (``e^{1/4} Z x / L``) on ``|x| <= L`` so that
    the function is continuous at the origin.
``TransactionRamp``
    linear up to ``eps*T``, then the exponential ramp shifted by ``eps*T``.
    Used for randomized betting under transaction costs.

All exponentials are evaluated in log space, so ``ln(1/Z)`` in the thousands
is fine.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import dawsn

__all__ = [
    "Variant",
    "ConfidenceParams",
    "DriftReport",
    "derive_params",
    "eval_g",
    "eval_g_prime",
    "eval_h",
    "potential",
    "potential_closed_form",
    "check_drift_condition",
]

_RAMP_COEF = math.exp(0.25)


class Variant(str, enum.Enum):
    STEP_EXP = "step"
    RAMP_EXP = "ramp"
    TRANSACTION_RAMP = "transaction"


@dataclass(frozen=True)
class ConfidenceParams:
    """Parameters of a confidence function.

    ``log_inv_z`` is ``ln(1/Z)``; ``Z`` itself is derived, which keeps very
    small loss scales representable. ``n`` is the window length (``rho = 1 -
    1/n``) and ``L`` the deviation scale. ``epsilon`` and ``horizon`` are only
    used by the transaction-cost ramp.
    """

    log_inv_z: float
    L: float
    n: float
    variant: Variant = Variant.RAMP_EXP
    epsilon: float | None = None
    horizon: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not math.isfinite(self.log_inv_z) or self.log_inv_z < 1.0 - 1e-12:
            raise ValueError(
                f"Z must lie in (0, e^-1], got ln(1/Z)={self.log_inv_z!r}"
            )
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError(f"L must be positive and finite, got {self.L!r}")
        if not (self.n >= 1 and math.isfinite(self.n)):
            raise ValueError(f"window n must be >= 1, got {self.n!r}")
        if self.variant is Variant.TRANSACTION_RAMP:
            if self.epsilon is None or self.horizon is None:
                raise ValueError("TransactionRamp needs epsilon and horizon")
            if self.epsilon <= 0 or self.horizon <= 0:
                raise ValueError("TransactionRamp needs epsilon > 0 and horizon > 0")

    @classmethod
    def from_window(cls, n, Z=None, *, log_inv_z=None, variant=Variant.RAMP_EXP, L=None):
        """Parameters for window ``n`` with the smallest admissible ``L = sqrt(n)``."""
        if (Z is None) == (log_inv_z is None):
            raise ValueError("give exactly one of Z or log_inv_z")
        if log_inv_z is None:
            if not 0 < Z <= math.exp(-1) * (1 + 1e-12):
                raise ValueError(f"Z must lie in (0, e^-1], got {Z!r}")
            log_inv_z = -math.log(Z)
        return cls(log_inv_z=float(log_inv_z), L=float(L if L is not None else math.sqrt(n)),
                   n=float(n), variant=variant)

    @classmethod
    def transaction(cls, epsilon, horizon, Z=None, *, log_inv_z=None):
        """TransactionRamp parameters: window ``T`` and ``L = 2 sqrt(T)``."""
        if log_inv_z is None:
            log_inv_z = -math.log(Z)
        return cls(log_inv_z=float(log_inv_z), L=2.0 * math.sqrt(horizon), n=float(horizon),
                   variant=Variant.TRANSACTION_RAMP, epsilon=float(epsilon),
                   horizon=float(horizon))

    @property
    def Z(self) -> float:
        return math.exp(-self.log_inv_z)

    @property
    def U(self) -> float:
        return 2.0 * self.L * math.sqrt(self.log_inv_z)

    @property
    def rho(self) -> float:
        return 1.0 - 1.0 / self.n

    @property
    def rho_bar(self) -> float:
        return 1.0 / self.n

    @property
    def offset(self) -> float:
        """Start of the exponential branch of the transaction ramp (0 otherwise)."""
        if self.variant is Variant.TRANSACTION_RAMP:
            return self.epsilon * self.horizon
        return 0.0

    @property
    def saturation(self) -> float:
        """Deviation beyond which ``|g| == 1``."""
        return self.offset + self.U

    @property
    def h_band(self) -> float:
        """Half-width of the band on which ``h == 1`` (StepExp/RampExp).

        It is ``(U + 1) / rho``: the largest deviation whose next update can
        still reach the unsaturated part of g when ``|b| <= 1``.
        """
        return (self.U + 1.0) / self.rho if self.n > 1 else math.inf

    @property
    def z_prime(self) -> float:
        """Per-step loss allowance paired with this variant in the drift condition."""
        if self.variant is Variant.RAMP_EXP:
            return math.e * self.rho_bar * self.L * self.Z
        return self.Z

    def preconditions(self) -> list[str]:
        """Names of violated drift-lemma preconditions (empty when all hold)."""
        bad = []
        if self.n < 40.0 * self.log_inv_z * (1 - 1e-12):
            bad.append(f"n >= 40 ln(1/Z) violated: n={self.n:g} < {40 * self.log_inv_z:g}")
        if 1.0 / self.n < 1.0 / self.L**2 * (1 - 1e-12):
            bad.append(f"1/n >= 1/L^2 violated: n={self.n:g}, L={self.L:g}")
        return bad


def derive_params(T, epsilon, variant=Variant.RAMP_EXP) -> ConfidenceParams:
    """Tune the predictor for horizon ``T`` and per-step regret rate ``epsilon``.

    Sets ``Z = exp(-eps^2 T)``, ``n = T``, ``L = sqrt(T)`` so that
    ``U = 2 eps T``.
    """
    if T < 1:
        raise ValueError(f"horizon T must be >= 1, got {T!r}")
    if epsilon < (1.0 / math.sqrt(T)) * (1 - 1e-12):
        raise ValueError(
            f"epsilon must be >= 1/sqrt(T) = {1 / math.sqrt(T):.6g}, got {epsilon!r}"
        )
    params = ConfidenceParams(
        log_inv_z=max(epsilon**2 * T, 1.0), L=math.sqrt(T), n=float(T), variant=variant
    )
    bad = params.preconditions()
    if bad:
        raise ValueError("derived parameters violate the drift lemma: " + "; ".join(bad))
    return params


def _check_finite(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("deviation must be finite")
    return arr


def _g(params: ConfidenceParams, x):
    """Unchecked vectorised g; ``x`` is a float ndarray."""
    a = np.abs(x)
    lz = params.log_inv_z
    if params.variant is Variant.TRANSACTION_RAMP:
        off = params.offset
        u = (a - off) / (2.0 * params.L)
        v = np.where(a >= off + params.U, 1.0, np.exp(np.minimum(u * u - lz, 0.0)))
        v = np.where(a < off, math.exp(-lz) * a / off, v)
    else:
        u = a / (2.0 * params.L)
        v = np.where(a >= params.U, 1.0, np.exp(np.minimum(u * u - lz, 0.0)))
        if params.variant is Variant.RAMP_EXP:
            v = np.where(a <= params.L, math.exp(0.25 - lz) * a / params.L, v)
        else:
            v = np.where(a == 0.0, 0.0, v)
    return np.copysign(v, x)


def _g_prime_closed(params: ConfidenceParams, s):
    """|g'(s)|, taking the larger one-sided limit at branch points."""
    a = np.abs(s)
    lz = params.log_inv_z
    L = params.L
    off = params.offset
    U = params.U
    out = np.zeros_like(a)

    def expo_branch(lo, hi):
        u = (a - off) / (2.0 * L)
        val = ((a - off) / (2.0 * L * L)) * np.exp(np.minimum(u * u - lz, 0.0))
        mask = (a >= lo) & (a <= hi)
        return np.where(mask, np.maximum(out, val), out)

    if params.variant is Variant.TRANSACTION_RAMP:
        out = np.where(a <= off, math.exp(-lz) / off, out)
        out = expo_branch(off, off + U)
    elif params.variant is Variant.RAMP_EXP:
        out = np.where(a <= L, math.exp(0.25 - lz) / L, out)
        out = expo_branch(L, U)
    else:
        out = expo_branch(0.0, U)
    return out


def _breakpoints(params: ConfidenceParams):
    if params.variant is Variant.TRANSACTION_RAMP:
        pts = [params.offset, params.offset + params.U]
    elif params.variant is Variant.RAMP_EXP:
        pts = [params.L, params.U]
    else:
        pts = [params.U]
    return np.array(sorted({p for p in pts} | {-p for p in pts}))


def _scalar_or_array(out, x):
    return float(out) if np.ndim(x) == 0 else out


def eval_g(params: ConfidenceParams, x):
    """Confidence ``g(x)`` in [-1, 1]; vectorised over ``x``."""
    arr = _check_finite(x)
    return _scalar_or_array(_g(params, arr), x)


def eval_g_prime(params: ConfidenceParams, x):
    """``|g'(x)|`` with one-sided limits at breakpoints (larger side wins)."""
    arr = _check_finite(x)
    return _scalar_or_array(_g_prime_closed(params, arr), x)


def _h(params: ConfidenceParams, x):
    a = np.abs(x)
    if params.variant is Variant.TRANSACTION_RAMP:
        off = params.offset
        return np.where(a < off, 1.0, np.where(a < off + params.U, 0.5, 0.0))
    return np.where(a <= params.h_band, 1.0, 0.0)


def eval_h(params: ConfidenceParams, x):
    """Step function h paired with g in the drift condition.

    For StepExp/RampExp the band is ``|x| <= (U + 1)/rho``: every deviation
    whose next update can still land below ``U``. For the transaction ramp h is 1
    below ``eps*T``, 1/2 on the exponential band and 0 beyond.
    """
    arr = _check_finite(x)
    return _scalar_or_array(_h(params, arr), x)


def _adaptive_simpson(f, a, b, tol, depth=60):
    """Integrate ``f`` over ``[a, b]`` to absolute tolerance ``tol``."""
    if b <= a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4 * fm + fb)
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, depth)]
    while stack:
        a0, b0, fa0, fm0, fb0, whole0, tol0, d = stack.pop()
        m = 0.5 * (a0 + b0)
        lm, rm = 0.5 * (a0 + m), 0.5 * (m + b0)
        flm, frm = f(lm), f(rm)
        left = (m - a0) / 6.0 * (fa0 + 4 * flm + fm0)
        right = (b0 - m) / 6.0 * (fm0 + 4 * frm + fb0)
        delta = left + right - whole0
        if d <= 0 or abs(delta) <= 15 * tol0:
            total += left + right + delta / 15.0
        else:
            stack.append((a0, m, fa0, flm, fm0, left, tol0 / 2, d - 1))
            stack.append((m, b0, fm0, frm, fb0, right, tol0 / 2, d - 1))
    return total


def potential(params: ConfidenceParams, x, tol=1e-12) -> float:
    """``Phi(x) = |int_0^x g(s) ds|`` by adaptive Simpson quadrature.

    The integral is split at the branch points of g; beyond the saturation
    point g is identically 1 and the tail is added exactly.
    """
    a = abs(float(_check_finite(x)))
    sat = params.saturation
    top = min(a, sat)
    cuts = [0.0]
    for p in (params.L if params.variant is Variant.RAMP_EXP else None, params.offset or None):
        if p is not None and 0.0 < p < top:
            cuts.append(p)
    cuts = sorted(cuts) + [top]
    pieces = max(len(cuts) - 1, 1)

    def f(s):
        return float(_g(params, np.array(s)))

    # The StepExp jump at 0 is a single point; integrate from its right limit.
    if params.variant is Variant.STEP_EXP:
        Z = params.Z
        inv4L2 = 1.0 / (4.0 * params.L**2)

        def f(s):  # noqa: F811
            return min(Z * math.exp(s * s * inv4L2), 1.0) if s < sat else 1.0

    val = sum(_adaptive_simpson(f, lo, hi, tol / pieces) for lo, hi in zip(cuts[:-1], cuts[1:]))
    return val + max(a - sat, 0.0)


def _expo_integral(params, lo, hi):
    """``int_lo^hi exp(((s - off)/2L)^2 - ln(1/Z)) ds`` via Dawson's function."""
    twoL = 2.0 * params.L
    lz = params.log_inv_z

    def F(s):
        u = (s - params.offset) / twoL
        return twoL * np.exp(u * u - lz) * dawsn(u)

    return F(hi) - F(lo)


def potential_closed_form(params: ConfidenceParams, x):
    """Vectorised ``Phi(x)`` from the Dawson-integral closed form."""
    arr = np.abs(_check_finite(x))
    sat = params.saturation
    top = np.minimum(arr, sat)
    lz = params.log_inv_z
    if params.variant is Variant.STEP_EXP:
        out = _expo_integral(params, 0.0, top)
    elif params.variant is Variant.RAMP_EXP:
        L = params.L
        lin = math.exp(0.25 - lz) / L
        low = np.minimum(top, L)
        out = 0.5 * lin * low * low + np.where(top > L, _expo_integral(params, L, np.maximum(top, L)), 0.0)
    else:
        off = params.offset
        lin = math.exp(-lz) / off
        low = np.minimum(top, off)
        out = 0.5 * lin * low * low + np.where(
            top > off, _expo_integral(params, off, np.maximum(top, off)), 0.0
        )
    out = out + np.maximum(arr - sat, 0.0)
    return _scalar_or_array(out, x)


@dataclass
class DriftReport:
    """Worst point of the drift condition over a grid of deviations.

    ``grid`` is ``(start, stop, step)``; ``max_violation > 0`` means the
    condition fails somewhere.
    """

    grid: tuple
    n_points: int
    max_violation: float
    worst_x: float
    Z_prime: float
    Delta: float
    refined: int = field(default=0, repr=False)

    @property
    def ok(self) -> bool:
        return self.max_violation <= 0.0


def _drift_rhs(params, x, Z_prime):
    return params.rho_bar * x * _g(params, x) * _h(params, x) + Z_prime


def _drift_bound(params, x, Delta, bps):
    """Cheap upper bound on the inner maximum, valid because |g'| is monotone
    in |s| on every branch piece."""
    lo = params.rho * x - Delta
    hi = params.rho * x + Delta
    gmax = np.maximum(_g_prime_closed(params, lo), _g_prime_closed(params, hi))
    for p in bps:
        inside = (lo <= p) & (p <= hi)
        if inside.any():
            gmax = np.where(inside, np.maximum(gmax, _g_prime_closed(params, np.full_like(x, p))), gmax)
    dmax = np.maximum((lo - x) ** 2, (hi - x) ** 2)
    return gmax * dmax / 2.0


def _drift_exact(params, x, Delta, bps, sub):
    lo = params.rho * x - Delta
    frac = np.linspace(0.0, 1.0, sub)
    s = lo[:, None] + (2.0 * Delta) * frac[None, :]
    if len(bps):
        extra = np.broadcast_to(bps, (len(x), len(bps)))
        extra = np.where((extra >= lo[:, None]) & (extra <= lo[:, None] + 2 * Delta), extra, lo[:, None])
        s = np.concatenate([s, extra], axis=1)
    vals = _g_prime_closed(params, s) * (s - x[:, None]) ** 2 / 2.0
    return vals.max(axis=1)


def check_drift_condition(params: ConfidenceParams, Z_prime, Delta=1.0, grid_step=1e-3,
                          sub_points=101, chunk=1_000_000) -> DriftReport:
    """Scan the per-step drift inequality over ``[-W-2, W+2]``.

    ``W`` is the larger of the saturation point and the edge of the band where
    ``h == 1``, so the scan always reaches the points just past the switch of h.

    For each grid point x the quantity
    ``max_s |g'(s)| (s-x)^2 / 2 - rho_bar x g(x) h(x) - Z'`` is evaluated, the
    inner maximum over ``s in [rho x - Delta, rho x + Delta]`` on a sub-grid of
    ``sub_points`` points plus any branch points inside the interval. Points
    whose cheap upper bound cannot beat the running maximum are skipped, so the
    result equals the exhaustive scan.
    """
    if not 0 < Delta <= 1:
        raise ValueError(f"Delta must lie in (0, 1], got {Delta!r}")
    if grid_step > 1e-2:
        raise ValueError(f"grid_step must be <= 1e-2, got {grid_step!r}")
    if sub_points < 100:
        raise ValueError("inner maximisation needs at least 100 sub-grid points")
    span = params.saturation
    if params.variant is not Variant.TRANSACTION_RAMP:
        span = max(span, params.h_band)
    span += 2.0
    n_points = int(math.floor(2 * span / grid_step)) + 1
    bps = _breakpoints(params)
    best, best_x, refined = -math.inf, math.nan, 0
    for start in range(0, n_points, chunk):
        idx = np.arange(start, min(start + chunk, n_points))
        x = -span + idx * grid_step
        rhs = _drift_rhs(params, x, Z_prime)
        bound = _drift_bound(params, x, Delta, bps) - rhs
        cand = np.flatnonzero(bound > best)
        if cand.size == 0:
            continue
        cand = cand[np.argsort(bound[cand])[::-1]]
        for lo in range(0, cand.size, 4096):
            block = cand[lo:lo + 4096]
            if bound[block[0]] <= best:
                break
            v = _drift_exact(params, x[block], Delta, bps, sub_points) - rhs[block]
            refined += block.size
            i = int(np.argmax(v))
            if v[i] > best:
                best, best_x = float(v[i]), float(x[block][i])
    return DriftReport(grid=(-span, span, grid_step), n_points=n_points, max_violation=best,
                       worst_x=best_x, Z_prime=float(Z_prime), Delta=float(Delta), refined=refined)
