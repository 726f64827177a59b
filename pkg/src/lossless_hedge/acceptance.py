"""Acceptance suite: one named check per guarantee, at fixed seeds and sizes.

Each ``check_*`` function returns a :class:`CheckResult` with the measured
value, the frozen threshold it was compared against and the seeds used.
Calibrated constants come from ``data/calibration.json`` and are never
recomputed here.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import predictor
from .bandit import bandit_regret_report, estimator_expectation
from .combiner import build_linear_tree, build_multiscale_tree, run_tree, windowed_regret_audit
from .confidence import ConfidenceParams, Variant, check_drift_condition, derive_params
from .experiment import lower_bound_probe
from .generators import generate, interval_bounds
from .oco import (Box, Scenario, adaptive_grid_run, dynamic_regret, greedy_projection,
                  grid_regret_bound, static_regret, static_regret_bound)
from .predictor import Constant, PNorm, simulate
from .randomized import loss_tail_probe, simulate_randomized, stop_threshold, transaction_params
from .rng import stream, uniforms
from .uniformity import audit, cross_scale_check, noise_like_predict

__all__ = ["CheckResult", "CHECKS", "SUITES", "load_calibration", "run_suite", "format_report"]


@dataclass
class CheckResult:
    id: str
    title: str
    passed: bool
    measured: dict
    thresholds: dict
    seeds: str
    runtime: float = 0.0
    runtime_limit: float = math.inf
    details: dict = field(default_factory=dict)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        limits = ", ".join(f"{k}={_fmt(v)}" for k, v in self.thresholds.items())
        return (f"{status} {self.id} {self.title}: {parts} | thresholds: {limits} | "
                f"seeds: {self.seeds} | {self.runtime:.1f}s (limit {self.runtime_limit:g}s)")


def _fmt(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def load_calibration(path=None):
    """Frozen constants; ``path`` overrides the packaged file."""
    if path is not None:
        return json.loads(Path(path).read_text())["constants"]
    text = resources.files("lossless_hedge").joinpath("data/calibration.json").read_text()
    return json.loads(text)["constants"]


# ---------------------------------------------------------------- measurements

A1_T, A1_EPS = 10_000, 0.05


def check_a1(cal):
    T, eps = A1_T, A1_EPS
    p = derive_params(T, eps)
    floor = (1 - 4 * eps) * T - math.exp(-eps**2 * T + 1) * math.sqrt(T)
    ones = simulate(np.ones((1, T)), p, record=False)["gain"][0]
    minus = simulate(-np.ones((1, T)), p, record=False)["gain"][0]
    B = generate("bernoulli(0.5)", T, seed=0, trials=1000)
    loss = float(simulate(B, p, record=False)["max_prefix_loss"].max())
    ok = ones >= floor and minus >= floor and loss <= 0.01
    return CheckResult("A1", "regret/loss tradeoff", bool(ok),
                       {"gain_all_ones": float(ones), "gain_all_minus_ones": float(minus),
                        "fair_coin_max_prefix_loss": loss},
                       {"gain_floor": floor, "max_prefix_loss": 0.01},
                       "fair coins: master seed 0, trials 0-999", runtime_limit=5.0)


def a2_settings():
    """20 ``(ln(1/Z), n)`` pairs covering ``Z`` in ``[1e-12, 1/e]`` and ``n`` up to ``1e6``."""
    out = []
    for lz in (1.0, 4.0, 12.0, -math.log(1e-12)):
        lo = math.ceil(40 * lz)
        for n in np.geomspace(lo, 1e6, 5):
            out.append((lz, float(round(n))))
    return out


def check_a2(cal):
    worst, worst_at, results = -math.inf, None, []
    for lz, n in a2_settings():
        for v in (Variant.STEP_EXP, Variant.RAMP_EXP):
            p = ConfidenceParams.from_window(n, log_inv_z=lz, variant=v)
            rep = check_drift_condition(p, p.z_prime, grid_step=1e-3)
            results.append((v.value, lz, n, rep.max_violation))
            if rep.max_violation > worst:
                worst, worst_at = rep.max_violation, (v.value, lz, n)
    return CheckResult("A2", "drift condition", bool(worst <= 0.0),
                       {"max_violation": float(worst), "settings": len(results)},
                       {"max_violation": 0.0}, "deterministic grid scan, step 1e-3",
                       runtime_limit=60.0, details={"worst_at": worst_at})


def check_a3(cal):
    T, n = 1000, 1000.0
    p = ConfidenceParams.from_window(n, log_inv_z=1.0)
    schedules = [Constant(p.rho), PNorm(1.0, n), PNorm(2.0, n)]
    worst = 0.0
    prod_worst = 0.0
    seqs = np.stack([stream(0, i, purpose=5).uniform(-1.0, 1.0, T) for i in range(100)])
    for s in schedules:
        out = simulate(seqs, p, s)
        for i in range(len(seqs)):
            tr = predictor.Trace(b=seqs[i], confidence=out["conf"][i], x=out["x"][i], rho=out["rho"][i],
                                 increment=out["inc"][i], x_final=float(out["x_final"][i]),
                                 params=p, schedule=s)
            worst = max(worst, predictor.telescoping_check(tr))
        short = predictor.run(seqs[0, :200], p, s)
        direct = predictor.product_expansion(short.increment, short.rho)
        post = np.append(short.x[1:], short.x_final)
        prod_worst = max(prod_worst, float(np.max(np.abs(direct - post))) / 201.0)
    ok = worst <= 1e-9 and prod_worst <= 1e-9
    return CheckResult("A3", "telescoping identities", bool(ok),
                       {"telescoping_residual": worst, "product_expansion_residual": prod_worst},
                       {"relative_residual": 1e-9},
                       "sequences: master seed 0, purpose 5, trials 0-99", runtime_limit=5.0)


def check_a4(cal):
    T, Z = 10_000, 1e-4
    c, c2 = cal["A4_c"], cal["A4_c_prime"]
    lz = -math.log(Z)
    tree = build_linear_tree([0, 1], T, Z)
    up = run_tree(tree, np.column_stack([np.zeros(T), np.ones(T)]), record_weights=False).root.sum()
    down = run_tree(tree, np.column_stack([np.zeros(T), -np.ones(T)]), record_weights=False).root.sum()
    need_up = T - c * math.sqrt(T * lz)
    base = -c2 * Z * math.sqrt(T)
    ok = up >= need_up and up >= base and down >= base
    return CheckResult("A4", "pairwise combiner", bool(ok),
                       {"gain_improver_plus": float(up), "gain_improver_minus": float(down)},
                       {"improver_floor": need_up, "base_floor": base, "c": c, "c_prime": c2},
                       "deterministic", runtime_limit=5.0)


def a5_payoffs(seeds=50, T=10_000, N=5, k=4, seed=0):
    """Strategy ``d_j`` earns +1 on interval ``j`` and -1 elsewhere; others are fair coins."""
    P = np.empty((seeds, T, N))
    parts = []
    bounds = interval_bounds(T, k)
    for s in range(seeds):
        rng = stream(seed, s, purpose=6)
        dom = rng.permutation(N)[:k]
        P[s] = np.where(rng.random((T, N)) < 0.5, 1.0, -1.0)
        P[s][:, dom] = -1.0
        for j in range(k):
            P[s][bounds[j]:bounds[j + 1], dom[j]] = 1.0
        parts.append([(bounds[j], bounds[j + 1], int(dom[j])) for j in range(k)])
    return P, parts


def check_a5(cal):
    T, N, c = 10_000, 5, cal["A5_c"]
    P, parts = a5_payoffs(T=T, N=N)
    Z = 1.0 / (N * T)
    tree = build_multiscale_tree(N, T, Z, check_z=False)
    root = run_tree(tree, P, record_weights=False).root
    ratios = []
    for s in range(P.shape[0]):
        a = windowed_regret_audit(root[s], P[s], parts[s], c=c)
        ratios.append(a["total"] / a["scale"])
    worst = float(max(ratios))
    return CheckResult("A5", "windowed regret", bool(worst <= c),
                       {"worst_ratio": worst, "mean_ratio": float(np.mean(ratios))},
                       {"c": c}, "master seed 0, purpose 6, trials 0-49", runtime_limit=120.0)


def a6_payoffs(scenario, seeds=20, T=2**14, N=3, seed=0):
    P = np.empty((seeds, T, N))
    for s in range(seeds):
        rng = stream(seed, s, purpose=7 if scenario == "dominant" else 8)
        P[s] = np.where(rng.random((T, N)) < 0.5, 1.0, -1.0)
        if scenario == "dominant":
            P[s][:, 1] = np.where(rng.random(T) < 0.7, 1.0, -1.0)
        else:
            bounds = interval_bounds(T, 4)
            for j in range(4):
                m = bounds[j + 1] - bounds[j]
                P[s][bounds[j]:bounds[j + 1], j % N] = np.where(rng.random(m) < 0.8, 1.0, -1.0)
    return P


def check_a6(cal):
    N, T, c = 3, 2**14, cal["A6_c"]
    Z = (N * T) ** -2.0
    tree = build_multiscale_tree(N, T, Z)
    worst = {}
    for scen in ("dominant", "shifting"):
        P = a6_payoffs(scen, T=T, N=N)
        root = run_tree(tree, P, record_weights=False).root
        R = (P - root[:, :, None]).transpose(0, 2, 1).reshape(-1, T)
        rep = audit(R, Z, N, T, c=c, rng=np.random.default_rng(0))
        worst[scen] = rep.worst_ratio
    cross = 0.0
    for i in range(100):
        rng = stream(0, i, purpose=9)
        r2, r1 = np.sort(rng.uniform(0.0, 0.999, 2))
        if r1 == r2:
            r1 = min(r2 + 1e-3, 0.999)
        out = cross_scale_check(rng.uniform(-1, 1, 500), r1, r2)
        cross = max(cross, out["residual"])
    ok = max(worst.values()) <= c and cross <= 1e-9
    return CheckResult("A6", "Z-uniformity", bool(ok),
                       {"worst_ratio_dominant": worst["dominant"], "worst_ratio_shifting": worst["shifting"],
                        "cross_scale_residual": cross},
                       {"c": c, "cross_scale_residual": 1e-9},
                       "master seed 0, purposes 7/8 trials 0-19; triples purpose 9 trials 0-99",
                       runtime_limit=120.0)


def a7_signals(seeds=20, T=10_000, seed=0):
    sig = np.empty((seeds, T))
    for s in range(seeds):
        rng = stream(seed, s, purpose=10)
        lv = 0.8 if rng.random() < 0.5 else -0.8
        piece = np.where((np.arange(T) // 2000) % 2 == 0, lv, -lv)
        sig[s] = np.clip(piece + 0.1 * rng.standard_normal(T), -1.0, 1.0)
    return sig


def measure_a7():
    return noise_like_predict(a7_signals(), 512, log_inv_z=12.0).worst_excess


def check_a7(cal):
    c = cal["A7_c"]
    worst = measure_a7()
    return CheckResult("A7", "noise-like prediction", bool(worst <= c), {"worst_excess": worst},
                       {"c": c}, "master seed 0, purpose 10, trials 0-19", runtime_limit=60.0)


def check_a8(cal):
    T, cost, Z, S = 10_000, 0.05, 1e-4, 200
    p = transaction_params(cost, T, Z)
    eps = 2 * cost
    thr = stop_threshold(eps)
    U = uniforms(0, S, T, purpose=1)
    fair = np.where(uniforms(0, S, T, purpose=2) < 0.5, 1.0, -1.0)
    out = {}
    for name, B in (("fair", fair), ("ones", np.ones((S, T)))):
        o = simulate_randomized(B, p, U, cost=cost, threshold=thr)
        out[name] = (float(o["net"].mean()), float(o["net"].std(ddof=1) / math.sqrt(S)),
                     float(o["max_loss"].max()))
    adv = simulate_randomized(None, p, U, cost=cost, threshold=thr,
                              adversary=lambda x, conf: np.where(conf > 0, -1.0, 1.0))
    fair_floor = -3 * cost * Z * T - 3 * out["fair"][1]
    ones_floor = T - 4 * cost * T - 3 * out["ones"][1]
    max_loss = max(out["fair"][2], out["ones"][2], float(adv["max_loss"].max()))
    ok_fair = out["fair"][0] >= fair_floor
    ok_ones = out["ones"][0] >= ones_floor
    ok_stop = max_loss <= thr + 1
    return CheckResult("A8", "transaction costs", bool(ok_fair and ok_ones and ok_stop),
                       {"fair_mean_net": out["fair"][0], "ones_mean_net": out["ones"][0],
                        "max_realised_loss": max_loss, "fair_ok": bool(ok_fair), "ones_ok": bool(ok_ones),
                        "stop_ok": bool(ok_stop)},
                       {"fair_floor": fair_floor, "ones_floor": ones_floor, "loss_cap": thr + 1},
                       "master seed 0, coins purpose 1, payoffs purpose 2, trials 0-199",
                       runtime_limit=60.0)


A9_TS = (10_000, 40_000, 160_000)
A9_MEANS = [0.6] + [0.4] * 9


def check_a9(cal):
    k = cal["A9_k"]
    rep = bandit_regret_report(A9_TS, A9_MEANS, seeds=100, seed=0, k=k)
    p = [0.5, 0.25, 0.125, 0.125]
    x = [0.3, 1.0, 0.0, 0.7]
    unbiased = estimator_expectation(p, x) == [Fraction(v) for v in x]
    slope = rep.slope if rep.slope is not None else math.inf
    ok = slope <= 0.75 and rep.loss_ok and unbiased
    return CheckResult("A9", "bandit scaling", bool(ok),
                       {"slope": slope, "mean_regret": rep.mean_regret,
                        "mean_gain_vs_average": rep.mean_gain_vs_average, "unbiased": bool(unbiased)},
                       {"slope": 0.75, "loss_floor": rep.loss_floor, "k": k},
                       "master seed 0, arm purpose 1, reward purpose 2, trials 0-99",
                       runtime_limit=600.0)


def a10_static_scenario(T=10_000):
    F = Box([-1.0, -1.0], [1.0, 1.0])
    t = np.arange(T)
    y = np.column_stack([0.5 * np.cos(t / 50.0), 0.5 * np.sin(t / 77.0)])
    return Scenario(F, y)


def a10_shifting_scenario(T=10_000, seeds=50, k=4):
    return Scenario.piecewise(Box([-1.0, -1.0], [1.0, 1.0]), T, k, seeds=seeds, seed=0, noise=0.3)


def measure_a10():
    sc = a10_shifting_scenario()
    lz = 2.0 * math.log(sc.T)
    ar = adaptive_grid_run(sc, log_inv_z=lz)
    return sc, lz, ar, dynamic_regret(ar.losses, sc)


def check_a10(cal):
    T = 10_000
    st = a10_static_scenario(T)
    run = greedy_projection(st, lambda t: t**-0.5)
    reg = float(static_regret(run, st)[0])
    bound = static_regret_bound(st.F.diameter, st.grad_bound, T)
    sc, lz, ar, dr = measure_a10()
    lim = grid_regret_bound(sc, lz, cal["A10_k1"], cal["A10_k2"], cal["A10_k3"])
    ratio = float(np.max(dr / lim))
    ok = reg <= bound and ratio <= 1.0 and ar.jensen_gap <= 1e-12 and ar.feasible
    return CheckResult("A10", "online convex optimisation", bool(ok),
                       {"static_regret": reg, "shift_regret_max": float(dr.max()),
                        "shift_regret_over_bound": ratio, "jensen_gap": ar.jensen_gap,
                        "feasible": ar.feasible},
                       {"static_bound": bound, "shift_ratio": 1.0, "k1": cal["A10_k1"],
                        "k2": cal["A10_k2"], "k3": cal["A10_k3"]},
                       "static deterministic; shifting master seed 0, purpose 3, trials 0-49",
                       runtime_limit=120.0)


def check_a11(cal):
    lb = lower_bound_probe(10_000, 1e-2, 10_000, seed=0)
    eps, delta = 0.1, 0.01
    tail = loss_tail_probe("stopped", eps, delta, 10_000, T=10_000, seed=0)
    cap = stop_threshold(eps) + 1
    ok = tail.loss_quantile <= cap and lb.baseline_ok
    return CheckResult("A11", "lower-bound probes", bool(ok),
                       {"exceed_frequency": lb.exceed_frequency, "exceed_ci": lb.exceed_ci,
                        "exceed_exact": lb.exceed_exact, "loss_quantile_99": tail.loss_quantile,
                        "loss_quantile_ci": tail.ci, "k": tail.k, "baseline_ok": lb.baseline_ok},
                       {"loss_cap": cap, "baseline_sigma": 4},
                       "master seed 0, trials 0-9999", runtime_limit=120.0)


CHECKS = {
    "A1": check_a1, "A2": check_a2, "A3": check_a3, "A4": check_a4, "A5": check_a5,
    "A6": check_a6, "A7": check_a7, "A8": check_a8, "A9": check_a9, "A10": check_a10,
    "A11": check_a11,
}
SUITES = {"core": ["A1", "A2", "A3", "A4", "A5"], "all": list(CHECKS)}


def _select(selector):
    if selector in SUITES:
        return SUITES[selector]
    ids = [s.strip().upper() for s in str(selector).split(",")]
    for i in ids:
        if i not in CHECKS:
            raise ValueError(f"unknown criterion {i!r}; use core, all or ids like A1,A3")
    return ids


def run_suite(selector="core", calibration=None, progress=None):
    """Run the selected criteria; returns a list of :class:`CheckResult`."""
    cal = load_calibration(calibration)
    results = []
    for cid in _select(selector):
        t0 = time.perf_counter()
        try:
            res = CHECKS[cid](cal)
        except Exception as exc:  # a crash is reported as a failure of that criterion
            res = CheckResult(cid, "error", False, {"error": f"{type(exc).__name__}: {exc}"}, {}, "")
        res.runtime = time.perf_counter() - t0
        if res.runtime > res.runtime_limit:
            res.passed = False
            res.details["runtime_exceeded"] = True
        results.append(res)
        if progress:
            progress(res)
    return results


def format_report(results):
    lines = [r.line() for r in results]
    failed = [r.id for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} passed"
                 + (f"; failed: {', '.join(failed)}" if failed else ""))
    return "\n".join(lines)


def results_json(results):
    return json.dumps([asdict(r) for r in results], indent=1, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
