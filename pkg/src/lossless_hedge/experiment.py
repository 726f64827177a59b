"""Experiment orchestration: specs, trace files, summaries and probes.

A run is described by an :class:`ExperimentSpec` and writes three files into
its output directory: ``trace.csv`` (one row per step), ``summary.json`` and a
human-readable ``report.txt``. Trace files start with a ``#lhv1`` line that
carries the metadata needed to recompute the summary from the file alone.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import bandit as _bandit
from . import oco as _oco
from .combiner import build_multiscale_tree, run_tree, windowed_regret_audit
from .confidence import ConfidenceParams, Variant, derive_params
from .generators import generate, interval_bounds, parse_generator
from .predictor import Constant, Trace, run, schedule_from_dict, schedule_to_dict, simulate
from .randomized import loss_tail_probe, run_with_costs, stop_threshold, transaction_params
from .uniformity import audit, write_smoothed_csv

__all__ = [
    "ExperimentSpec",
    "run_experiment",
    "write_trace",
    "read_trace",
    "trace_summary",
    "lower_bound_probe",
    "ProbeReport",
    "TRACE_VERSION",
]

TRACE_VERSION = "#lhv1"
SUBCOMMANDS = ("predict", "combine", "bandit", "oco", "audit", "probe")


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one run."""

    subcommand: str
    generator: str = "bernoulli(0.5)"
    T: int = 10_000
    epsilon: float | None = None
    Z: float | None = None
    window: float | None = None
    N: int = 3
    seed: int = 0
    trials: int = 1
    cost: float = 0.0
    variant: str = "ramp"
    out: str = "out"
    means: list | None = None
    rewards: str | None = None
    scenario: str | None = None
    k: int = 4
    noise: float = 0.0
    partition: list | None = None
    delta: float = 0.01

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand {self.subcommand!r}; choose one of {', '.join(SUBCOMMANDS)}")
        parse_generator(self.generator)
        Variant(self.variant)
        if self.T < 0 or self.trials < 1:
            raise ValueError("need T >= 0 and trials >= 1")

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


# ---------------------------------------------------------------- trace files

def _params_dict(p: ConfidenceParams):
    d = dataclasses.asdict(p)
    d["variant"] = p.variant.value
    return d


def write_trace(path, columns: dict, meta: dict):
    """Write ``columns`` (equal-length arrays) with a ``#lhv1`` metadata line."""
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    buf = io.StringIO()
    buf.write(f"{TRACE_VERSION} {json.dumps(meta, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    cols = [np.asarray(columns[k]) for k in names]
    for i in range(n):
        w.writerow([repr(c[i].item()) for c in cols])
    try:
        Path(path).write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write trace {path}: {exc}") from exc


def read_trace(path):
    """Return ``(meta, columns)`` from a trace file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read trace {path}: {exc}") from exc
    first, _, rest = text.partition("\n")
    if not first.startswith(TRACE_VERSION):
        raise ValueError(f"{path}: not a {TRACE_VERSION} trace")
    meta = json.loads(first[len(TRACE_VERSION):])
    rows = list(csv.reader(io.StringIO(rest)))
    names = rows[0] if rows else []
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(names))
    return meta, {k: data[:, i] for i, k in enumerate(names)}


def _predict_trace_from(meta, cols) -> Trace:
    p = meta["params"]
    params = ConfidenceParams(**{**p, "variant": Variant(p["variant"])})
    return Trace(b=cols["b"], confidence=cols["confidence"], x=cols["x"], rho=cols["rho"],
                 increment=cols["increment"], x_final=meta["x_final"], params=params,
                 schedule=schedule_from_dict(meta["schedule"]), scale=meta.get("scale", 1.0),
                 seed=meta.get("seed"))


def trace_summary(path):
    """Recompute a run's summary from its trace file alone."""
    meta, cols = read_trace(path)
    kind = meta.get("kind")
    if kind == "predict":
        return _predict_summary(_predict_trace_from(meta, cols), meta.get("epsilon"))
    if kind == "combine":
        return _combine_summary(cols, meta)
    raise ValueError(f"{path}: no summary defined for trace kind {kind!r}")


# ---------------------------------------------------------------- runners

def _params_for(spec: ExperimentSpec, T):
    if spec.epsilon is not None:
        return derive_params(T, spec.epsilon, spec.variant)
    n = spec.window if spec.window is not None else max(T, 1)
    Z = spec.Z if spec.Z is not None else 1.0 / max(T, 3)
    return ConfidenceParams.from_window(n, Z, variant=spec.variant)


def _predict_summary(tr: Trace, epsilon=None):
    s = dict(tr.summary)
    g = s["final_gain"]
    s["regret_to_S_plus"] = s["sum_b"] - g
    s["regret_to_S_minus"] = -s["sum_b"] - g
    s["regret_to_S_zero"] = -g
    if epsilon is not None and tr.T:
        T = tr.T
        bounds = {
            "regret_to_S_plus": {"value": s["regret_to_S_plus"], "limit": 4.0 * epsilon * T},
            "max_prefix_loss": {"value": s["max_prefix_loss"],
                                "limit": math.exp(-epsilon**2 * T + 1.0) * math.sqrt(T)},
        }
        for b in bounds.values():
            b["ok"] = bool(b["value"] <= b["limit"])
        s["bounds"] = bounds
    return s


def _run_predict(spec, out):
    B = generate(spec.generator, spec.T, spec.seed, spec.trials)
    T = B.shape[1]
    if spec.cost > 0:
        params = transaction_params(spec.cost, max(T, 1), spec.Z if spec.Z is not None else 1.0 / max(T, 3))
        tr = run_with_costs(B[0], spec.cost, params=params, seed=spec.seed)
    else:
        params = _params_for(spec, max(T, 1))
        tr = run(B[0], params)
        tr.seed = spec.seed
    cols = {"t": tr.t, "b": tr.b, "confidence": tr.confidence, "x": tr.x, "rho": tr.rho,
            "increment": tr.increment, "gain": tr.gain, "cum_gain": np.cumsum(tr.gain), "phi": tr.phi}
    cols.update(tr.extra)
    meta = {"kind": "predict", "x_final": tr.x_final, "params": _params_dict(params),
            "schedule": schedule_to_dict(tr.schedule), "scale": tr.scale, "seed": spec.seed,
            "epsilon": spec.epsilon, "generator": spec.generator}
    write_trace(out / "trace.csv", cols, meta)
    summary = _predict_summary(tr, spec.epsilon)
    if spec.cost > 0 and T:
        realized = math.fsum(tr.extra["bet"] * tr.b)
        summary["cost"] = {"per_trade": spec.cost, "trades": int(tr.extra["traded"].sum()),
                           "realized_gain": realized,
                           "net_gain": realized - float(tr.extra["cumulative_cost"][-1])}
    if spec.trials > 1 and T:
        res = simulate(B, params, Constant(params.rho), record=False)
        summary["trials"] = {"n": spec.trials, "mean_gain": float(res["gain"].mean()),
                             "max_prefix_loss": float(res["max_prefix_loss"].max())}
    return summary


def _strategies(B):
    """S_+, S_- and the never-bet S_0 on one payoff sequence."""
    return np.stack([B, -B, np.zeros_like(B)], axis=-1)


def _default_partition(P, k):
    T = P.shape[0]
    bounds = interval_bounds(T, k)
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b > a:
            out.append((a, b, int(np.argmax(P[a:b].sum(axis=0)))))
    return out


def _combine_summary(cols, meta):
    N = meta["N"]
    P = np.stack([cols[f"s{i}"] for i in range(N)], axis=1)
    root = cols["root"]
    total = math.fsum(root)
    s = {"T": len(root), "final_gain": total,
         "max_prefix_loss": float(max(0.0, -np.cumsum(root).min())) if len(root) else 0.0,
         "regret_to": {meta["labels"][i]: math.fsum(P[:, i]) - total for i in range(N)}}
    if meta.get("partition") and len(root):
        a = windowed_regret_audit(root, P, [tuple(p) for p in meta["partition"]], n_strategies=N)
        s["partition_audit"] = {"intervals": [list(p) for p in meta["partition"]],
                                "regrets": [float(r) for r in a["regrets"]],
                                "total": float(a["total"]), "scale": float(a["scale"])}
    return s


def _run_combine(spec, out):
    B = generate(spec.generator, spec.T, spec.seed, 1)[0]
    T = len(B)
    P = _strategies(B)
    N = P.shape[1]
    labels = ["S_plus", "S_minus", "S_zero"]
    Z = spec.Z if spec.Z is not None else (N * T) ** -2.0 / math.e
    tree = build_multiscale_tree(N, T, Z, variant=spec.variant)
    res = run_tree(tree, P, record_weights=True)
    root = res.root[0]
    partition = spec.partition or _default_partition(P, spec.k)
    cols = {"t": np.arange(1, T + 1), "root": root}
    for i in range(N):
        cols[f"w{i}"] = res.weights[0, :, i]
    for i in range(N):
        cols[f"s{i}"] = P[:, i]
    meta = {"kind": "combine", "N": N, "labels": labels, "Z": Z, "seed": spec.seed,
            "partition": [list(map(int, p)) for p in partition], "generator": spec.generator}
    write_trace(out / "trace.csv", cols, meta)
    (out / "tree.json").write_text(tree.to_json())
    summary = _combine_summary(cols, meta)
    rep = audit((P - root[:, None]).T, Z, N, T, check_z=False, n_random=10,
                rng=np.random.default_rng(spec.seed))
    summary["uniformity_worst_ratio"] = rep.worst_ratio
    summary["uniformity"] = json.loads(rep.to_json())
    return summary


def _run_bandit(spec, out):
    if spec.rewards:
        X = _bandit.read_rewards_csv(spec.rewards)
        T, N = X.shape
        means = None
    else:
        means = np.asarray(spec.means if spec.means is not None else [0.6] + [0.4] * (spec.N - 1))
        N, T = len(means), spec.T
        X = None
    lz = 2.0 * math.log(N * T) + 1.0 if spec.Z is None else -math.log(spec.Z)
    state = _bandit.bandit_init(N, T, log_inv_z=lz, seed=spec.seed, window_floor="clamp",
                                variant=spec.variant)
    rew_rng = _bandit.stream(spec.seed, 0, 2)
    arms = np.empty(T, dtype=int)
    rewards = np.empty(T)
    probs = np.empty((T, N))
    for t in range(T):
        probs[t] = state.p
        if X is not None:
            reveal = lambda a, t=t: X[t, a]  # noqa: E731
        else:
            u = rew_rng.random()
            reveal = lambda a, u=u: float(u < means[a])  # noqa: E731
        arms[t], rewards[t], _ = _bandit.bandit_step(state, reveal)
    cols = {"t": np.arange(1, T + 1), "arm": arms, "reward": rewards}
    for i in range(N):
        cols[f"p{i}"] = probs[:, i]
    write_trace(out / "trace.csv", cols, {"kind": "bandit", "N": N, "gamma": state.gamma,
                                          "n_inner": state.n_inner, "log_inv_z": lz, "seed": spec.seed})
    runs = _bandit.simulate_bandit(means=means, rewards=X, T=T, log_inv_z=lz, seeds=spec.trials,
                                   seed=spec.seed, window_floor="clamp", variant=spec.variant)
    return {"T": T, "N": N, "gamma": state.gamma, "n_inner": state.n_inner,
            "single_run_reward": float(rewards.sum()),
            "mean_regret": float(runs.regret.mean()),
            "mean_gain_vs_average": float(runs.gain_vs_average.mean()),
            "trials": spec.trials}


def _run_oco(spec, out):
    if spec.scenario:
        sc = _oco.load_scenario(spec.scenario)
    else:
        F = _oco.Box([-1.0, -1.0], [1.0, 1.0])
        sc = _oco.Scenario.piecewise(F, spec.T, spec.k, seeds=spec.trials, seed=spec.seed,
                                     noise=spec.noise)
    lz = 2.0 * math.log(max(sc.T, 3)) if spec.Z is None else -math.log(spec.Z)
    ar = _oco.adaptive_grid_run(sc, log_inv_z=lz, variant=spec.variant)
    cols = {"t": np.arange(1, sc.T + 1), "loss": ar.losses[0]}
    for i in range(sc.F.dimension):
        cols[f"x{i}"] = ar.points[0, :, i]
    write_trace(out / "trace.csv", cols, {"kind": "oco", "etas": ar.etas, "windows": ar.windows,
                                          "seed": spec.seed})
    s = {"T": sc.T, "total_loss": float(ar.total_loss.mean()), "jensen_gap": ar.jensen_gap,
         "feasible": ar.feasible}
    if sc.comparator is not None:
        dr = _oco.dynamic_regret(ar.losses, sc)
        leaf = [float(_oco.dynamic_regret(ar.leaf_losses[:, :, j], sc).mean()) for j in range(len(ar.etas))]
        s.update({"dynamic_regret_mean": float(dr.mean()), "dynamic_regret_max": float(dr.max()),
                  "leaf_dynamic_regret_mean": leaf})
    return s


def _run_audit(spec, out):
    R = generate(spec.generator, spec.T, spec.seed, spec.trials)
    T = R.shape[1]
    Z = spec.Z if spec.Z is not None else (spec.N * T) ** -2.0
    rep = audit(R, Z, spec.N, T, check_z=False, rng=np.random.default_rng(spec.seed))
    write_smoothed_csv(out / "smoothed.csv", R[0], rep.scales)
    (out / "uniformity.json").write_text(rep.to_json())
    return {"T": T, "worst_ratio": rep.worst_ratio, "passed": rep.passed, "c": rep.c}


def _run_probe(spec, out):
    Z = spec.Z if spec.Z is not None else 1e-2
    trials = max(spec.trials, 1000)
    lb = lower_bound_probe(spec.T, Z, trials, seed=spec.seed)
    eps = spec.epsilon if spec.epsilon is not None else 0.1
    need = math.ceil(100.0 / spec.delta)
    tail = loss_tail_probe("stopped", eps, spec.delta, max(trials, need), T=spec.T, seed=spec.seed)
    return {"lower_bound": dataclasses.asdict(lb), "tail": dataclasses.asdict(tail),
            "stop_threshold": stop_threshold(eps)}


_RUNNERS = {"predict": _run_predict, "combine": _run_combine, "bandit": _run_bandit,
            "oco": _run_oco, "audit": _run_audit, "probe": _run_probe}


def _report_lines(spec, summary, prefix=""):
    lines = []
    for k, v in summary.items():
        if isinstance(v, dict):
            lines.append(f"{prefix}{k}:")
            lines.extend(_report_lines(spec, v, prefix + "  "))
        elif isinstance(v, list) and len(v) > 8:
            lines.append(f"{prefix}{k}: [{len(v)} values]")
        else:
            lines.append(f"{prefix}{k}: {v}")
    return lines


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run ``spec`` and write ``trace.csv``, ``summary.json`` and ``report.txt``.

    Returns the summary. Output files go to ``spec.out``.
    """
    out = Path(spec.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    summary = _RUNNERS[spec.subcommand](spec, out)
    summary = {"spec": dataclasses.asdict(spec), **summary}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True, default=_jsonable))
    lines = [f"{spec.subcommand} run, generator {spec.generator}, seed {spec.seed}"]
    lines += _report_lines(spec, {k: v for k, v in summary.items() if k != "spec"})
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    return summary


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# ---------------------------------------------------------------- probes

@dataclass
class ProbeReport:
    """Fair-coin probe of the loss/regret tradeoff.

    ``exceed_*`` concern the event that ``S_+`` earns more than
    ``2 sqrt(T ln(1/Z))``. ``baseline`` compares the empirical distribution
    of ``S_+``'s final loss with exact binomial values.
    """

    T: int
    Z: float
    trials: int
    threshold: float
    exceed_frequency: float
    exceed_ci: tuple
    exceed_exact: float
    gain_given_exceed: float | None
    regret_given_exceed: float | None
    loss_quantile_99: float
    max_loss: float
    baseline: list = field(default_factory=list)

    @property
    def baseline_ok(self):
        return all(b["ok"] for b in self.baseline)


def lower_bound_probe(T, Z, trials, seed=0, chunk=1000, params=None) -> ProbeReport:
    """Run the predictor on ``trials`` fair-coin sequences of length ``T``."""
    if trials < 1000:
        raise ValueError(f"the probe needs at least 1000 trials, got {trials}")
    lz = -math.log(Z)
    params = params if params is not None else ConfidenceParams.from_window(T, Z)
    thr = 2.0 * math.sqrt(T * lz)
    sums, gains, losses = [], [], []
    for lo in range(0, trials, chunk):
        m = min(chunk, trials - lo)
        B = generate("bernoulli(0.5)", T, seed, m, offset=lo)
        res = simulate(B, params, record=False)
        sums.append(B.sum(axis=1))
        gains.append(res["gain"])
        losses.append(res["max_prefix_loss"])
    sums, gains, losses = map(np.concatenate, (sums, gains, losses))
    hit = sums > thr
    k = int(hit.sum())
    ci = stats.binomtest(k, trials).proportion_ci(0.95)
    exact = float(stats.binom.sf(math.floor((T + thr) / 2.0), T, 0.5))
    baseline = []
    final_loss = -sums  # S_+ loss is T - 2K with K ~ Bin(T, 1/2) heads
    for q in (0.5, 0.9, 0.99):
        heads = stats.binom.ppf(1.0 - q, T, 0.5)
        xq = T - 2.0 * heads
        F = float(stats.binom.sf(heads - 1, T, 0.5))  # P(T - 2K <= xq) = P(K >= heads)
        emp = float(np.mean(final_loss <= xq))
        tol = 4.0 * math.sqrt(max(F * (1 - F), 1e-300) / trials)
        baseline.append({"q": q, "quantile": xq, "cdf_exact": F, "cdf_empirical": emp,
                         "tolerance": tol, "ok": bool(abs(emp - F) <= tol)})
    return ProbeReport(T=T, Z=Z, trials=trials, threshold=thr, exceed_frequency=k / trials,
                       exceed_ci=(float(ci.low), float(ci.high)), exceed_exact=exact,
                       gain_given_exceed=float(gains[hit].mean()) if k else None,
                       regret_given_exceed=float((sums - gains)[hit].mean()) if k else None,
                       loss_quantile_99=float(np.quantile(losses, 0.99, method="inverted_cdf")),
                       max_loss=float(losses.max()), baseline=baseline)
