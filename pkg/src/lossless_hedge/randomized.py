"""Randomized +-1 betting with transaction costs and a loss stop rule.

Instead of betting the amount ``g(x_t)`` the bettor trades one unit with
probability ``|g(x_t)|`` in the direction ``sign(g(x_t))``. Each trade costs
``c``. The expected payoff matches the deterministic predictor, while the
number of trades (and so the cost) stays proportional to ``sum |g|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .confidence import ConfidenceParams, Variant, _g, derive_params
from .predictor import Constant, Trace, _check_payoffs, _discounted_update
from .rng import check_seed, stream, uniforms

__all__ = [
    "RandomizedBetState",
    "randomized_step",
    "stop_threshold",
    "stop_rule",
    "transaction_params",
    "run_with_costs",
    "simulate_randomized",
    "loss_tail_probe",
    "TailReport",
]


def transaction_params(cost, T, Z=None, *, log_inv_z=None) -> ConfidenceParams:
    """Transaction-ramp parameters with ``eps = 2c``."""
    if not 0.0 < cost <= 1.0:
        raise ValueError(f"the transaction ramp needs a cost in (0, 1], got {cost!r}")
    return ConfidenceParams.transaction(2.0 * cost, T, Z, log_inv_z=log_inv_z)


def stop_threshold(epsilon, C=4.0):
    """Loss level ``C ln(1/eps) / eps`` at which betting stops."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if not C > 0:
        raise ValueError(f"C must be positive, got {C!r}")
    return C * math.log(1.0 / epsilon) / epsilon


@dataclass
class RandomizedBetState:
    """State of one randomized bettor.

    ``gross`` is the realised payoff ``sum B_t b_t``; ``net`` also subtracts
    transaction costs. The stop rule (if armed) watches the gross loss.
    """

    params: ConfidenceParams
    cost: float = 0.0
    seed: int = 0
    x: float = 0.0
    t: int = 0
    gross: float = 0.0
    expected_gain: float = 0.0
    trades: int = 0
    stopped: bool = False
    threshold: float | None = None
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.cost <= 1.0:
            raise ValueError(f"cost must lie in [0, 1], got {self.cost!r}")
        check_seed(self.seed)
        if self.rng is None:
            self.rng = stream(self.seed)

    @property
    def cumulative_cost(self):
        return self.cost * self.trades

    @property
    def net(self):
        return self.gross - self.cumulative_cost

    @classmethod
    def with_stop_rule(cls, params, epsilon, C=4.0, **kw):
        """Bettor that stops once its loss exceeds ``C ln(1/eps)/eps``."""
        return cls(params, threshold=stop_threshold(epsilon, C), **kw)

    @classmethod
    def self_tuned(cls, epsilon, T, C=4.0, **kw):
        """Regret rate ``epsilon`` with the confidence level tied to it (``delta = 1/eps``)."""
        return cls.with_stop_rule(derive_params(T, epsilon / 4.0), epsilon, C, **kw)


def randomized_step(state: RandomizedBetState, b, rng=None):
    """Draw this step's bet, then consume ``b``. Returns ``(bet, state)``."""
    if state.stopped:
        raise RuntimeError("cannot step a stopped bettor")
    b = float(_check_payoffs(b))
    rng = rng if rng is not None else state.rng
    conf = float(_g(state.params, np.float64(state.x)))
    u = rng.random()
    bet = int(math.copysign(1, conf)) if u < abs(conf) else 0
    state.gross += bet * b
    state.expected_gain += conf * b
    state.trades += bet != 0
    state.x = float(_discounted_update(state.x, b, state.params.rho))
    state.t += 1
    stop_rule(state)
    return bet, state


def stop_rule(state: RandomizedBetState, epsilon=None, C=4.0):
    """Arm (when ``epsilon`` is given) and apply the loss stop rule."""
    if epsilon is not None:
        state.threshold = stop_threshold(epsilon, C)
    if state.threshold is not None and -state.gross > state.threshold:
        state.stopped = True
    return state.stopped


def simulate_randomized(B, params: ConfidenceParams, U, cost=0.0, threshold=None, adversary=None,
                        record=False):
    """Batched randomized betting.

    ``B`` holds payoffs ``(S, T)`` (ignored when ``adversary`` is given) and
    ``U`` the uniforms driving the coins. ``adversary(x, conf)`` may choose
    each payoff from the public state. Stopped rows bet 0 but keep consuming
    their uniforms, so a row's draws never depend on other rows. With
    ``record`` the realised bets and payoffs are returned per step.
    """
    U = np.asarray(U, dtype=float)
    S, T = U.shape
    if adversary is None:
        B = _check_payoffs(np.atleast_2d(B))
        if B.shape != U.shape:
            raise ValueError("payoffs and uniforms must have the same shape")
    x = np.zeros(S)
    gross = np.zeros(S)
    expected = np.zeros(S)
    expected_cost = np.zeros(S)
    trades = np.zeros(S, dtype=np.int64)
    min_gross = np.zeros(S)
    min_net = np.zeros(S)
    stopped = np.zeros(S, dtype=bool)
    bets = np.empty((S, T), dtype=np.int8) if record else None
    pays = np.empty((S, T)) if record else None
    stop_t = np.full(S, -1)
    rho = params.rho
    for t in range(T):
        conf = _g(params, x)
        b = adversary(x, conf) if adversary is not None else B[:, t]
        active = ~stopped
        bet = np.where(active & (U[:, t] < np.abs(conf)), np.sign(conf), 0.0)
        gross += bet * b
        expected += np.where(active, conf * b, 0.0)
        expected_cost += np.where(active, cost * np.abs(conf), 0.0)
        trades += bet != 0
        np.minimum(min_gross, gross, out=min_gross)
        np.minimum(min_net, gross - cost * trades, out=min_net)
        if record:
            bets[:, t] = bet
            pays[:, t] = b
        x = _discounted_update(x, b, rho)
        if threshold is not None:
            newly = active & (-gross > threshold)
            stop_t[newly] = t
            stopped |= newly
    return {
        "gross": gross,
        "net": gross - cost * trades,
        "expected_gain": expected,
        "expected_net": expected - expected_cost,
        "trades": trades,
        "max_loss": -min_gross,
        "max_net_loss": -min_net,
        "stopped": stopped,
        "stop_t": stop_t,
        "bets": bets,
        "payoffs": pays,
    }


def run_with_costs(sequence, cost, Z=None, T=None, seed=0, *, log_inv_z=None, params=None,
                   epsilon_stop=None, C=4.0) -> Trace:
    """One randomized run with per-trade cost ``c`` and a recorded trace.

    Uses the transaction ramp with ``eps = 2c`` unless ``params`` is given.
    ``epsilon_stop`` arms the loss stop rule.
    """
    seq = _check_payoffs(np.asarray(sequence, dtype=float).ravel())
    T = len(seq) if T is None else int(T)
    if T != len(seq):
        raise ValueError(f"sequence has {len(seq)} steps but T = {T}")
    if params is None:
        params = transaction_params(cost, max(T, 1), Z, log_inv_z=log_inv_z) if cost > 0 else \
            ConfidenceParams.from_window(max(T, 1), Z, log_inv_z=log_inv_z)
    thr = stop_threshold(epsilon_stop, C) if epsilon_stop is not None else None
    state = RandomizedBetState(params, cost=cost, seed=seed, threshold=thr)
    conf = np.empty(T)
    xs = np.empty(T)
    bet = np.zeros(T)
    stopped = np.zeros(T)
    cum_cost = np.empty(T)
    for t in range(T):
        xs[t] = state.x
        conf[t] = float(_g(params, np.float64(state.x)))
        if state.stopped:
            state.rng.random()
            state.x = float(_discounted_update(state.x, seq[t], params.rho))
            state.t += 1
        else:
            bet[t], _ = randomized_step(state, seq[t])
        stopped[t] = state.stopped
        cum_cost[t] = state.cumulative_cost
    rho = np.full(T, params.rho)
    tr = Trace(b=seq, confidence=conf, x=xs, rho=rho, increment=seq.copy(),
               x_final=state.x, params=params, schedule=Constant(params.rho), seed=seed)
    tr.extra = {"bet": bet, "traded": (bet != 0).astype(float), "cumulative_cost": cum_cost,
                "stopped": stopped}
    return tr


@dataclass
class TailReport:
    quantile_level: float
    loss_quantile: float
    ci: tuple
    k: float
    mean_gain: float
    mean_regret: float
    trials: int
    stopped_fraction: float


def _quantile_ci(sorted_vals, q, z=1.96):
    """Distribution-free order-statistic interval for the ``q`` quantile."""
    n = len(sorted_vals)
    lo = int(max(0, math.floor(stats.binom.ppf(0.025, n, q)) - 1))
    hi = int(min(n - 1, math.ceil(stats.binom.ppf(0.975, n, q))))
    return float(sorted_vals[lo]), float(sorted_vals[hi])


def loss_tail_probe(strategy, epsilon, delta, trials, T=10_000, seed=0, C=4.0,
                    chunk=1000) -> TailReport:
    """Loss tail of a randomized bettor against iid +-1 coins with mean ``epsilon``.

    ``strategy`` is ``"randomized"`` (no stop rule), ``"stopped"`` (stop rule
    at ``C ln(1/eps)/eps``), ``"never"`` (never bets) or a
    :class:`ConfidenceParams`. The bettor is tuned for regret ``eps T``.
    Reports the ``1 - delta`` quantile of the maximum realised loss.
    """
    need = math.ceil(100.0 / delta)
    if trials < need:
        raise ValueError(f"need at least ceil(100/delta) = {need} trials, got {trials}")
    threshold = None
    if isinstance(strategy, ConfidenceParams):
        params = strategy
    elif strategy in ("randomized", "stopped"):
        params = derive_params(T, epsilon / 4.0)
        if strategy == "stopped":
            threshold = stop_threshold(epsilon, C)
    elif strategy == "never":
        params = None
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    loss, gain, stopped, regret = [], [], [], []
    for lo in range(0, trials, chunk):
        m = min(chunk, trials - lo)
        coins = uniforms(seed, m, T, offset=lo, purpose=2)
        B = np.where(coins < (1.0 + epsilon) / 2.0, 1.0, -1.0)
        del coins
        if params is None:
            loss.append(np.zeros(m))
            gain.append(np.zeros(m))
            stopped.append(np.zeros(m, dtype=bool))
        else:
            U = uniforms(seed, m, T, offset=lo, purpose=1)
            out = simulate_randomized(B, params, U, threshold=threshold)
            loss.append(out["max_loss"])
            gain.append(out["gross"])
            stopped.append(out["stopped"])
        regret.append(B.sum(axis=1) - gain[-1])
    loss, gain, stopped, regret = map(np.concatenate, (loss, gain, stopped, regret))
    q = 1.0 - delta
    srt = np.sort(loss)
    qv = float(np.quantile(loss, q, method="inverted_cdf"))
    scale = math.log(1.0 / delta) / epsilon
    return TailReport(quantile_level=q, loss_quantile=qv, ci=_quantile_ci(srt, q), k=qv / scale,
                      mean_gain=float(gain.mean()), mean_regret=float(regret.mean()),
                      trials=trials, stopped_fraction=float(stopped.mean()))
