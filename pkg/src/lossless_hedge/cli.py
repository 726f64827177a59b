"""Command-line entry point: ``lossless-hedge <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .experiment import ExperimentSpec, run_experiment


def _common(p):
    p.add_argument("--T", type=int, default=10_000, help="horizon")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--epsilon", type=float, help="target regret rate")
    g.add_argument("--Z", type=float, help="confidence level")
    p.add_argument("--window", type=float, help="discount window n")
    p.add_argument("--N", type=int, default=3, help="number of strategies or arms")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--cost", type=float, default=0.0, help="cost per trade")
    p.add_argument("--variant", choices=("step", "ramp", "transaction"), default="ramp")
    p.add_argument("--generator", default="bernoulli(0.5)",
                   help="constant(v) | bernoulli(p) | shifting(k, levels...) | sinusoid(period, amp) "
                        "| file(path) | adversarial-lb(eps)")
    p.add_argument("--out", default="out", help="output directory")


def build_parser():
    ap = argparse.ArgumentParser(prog="lossless-hedge", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name, help_ in (("predict", "run the confidence-function predictor"),
                        ("combine", "combine S_+, S_- and S_0 with a multi-window tree"),
                        ("audit", "Z-uniformity audit of generated series"),
                        ("probe", "lower-bound and loss-tail probes")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "combine":
            p.add_argument("--k", type=int, default=4, help="intervals in the post hoc partition")
        if name == "probe":
            p.add_argument("--delta", type=float, default=0.01)
    p = sub.add_parser("bandit", help="bandit wrapper on Bernoulli arms or a reward CSV")
    _common(p)
    p.add_argument("--means", help="comma-separated arm means")
    p.add_argument("--rewards", help="CSV of rewards, T rows by N columns")
    p = sub.add_parser("oco", help="adaptive greedy-projection grid")
    _common(p)
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--k", type=int, default=4, help="constant pieces of the target path")
    p.add_argument("--noise", type=float, default=0.3)
    p = sub.add_parser("accept", help="run acceptance criteria")
    p.add_argument("suite", nargs="?", default="core", help="core, all, or ids such as A1,A3")
    p.add_argument("--json", help="also write results as JSON here")
    p.add_argument("--calibration", help="override the frozen constants file")
    p = sub.add_parser("calibrate", help="re-measure and freeze acceptance constants")
    p.add_argument("--out", help="calibration JSON (default: the packaged file)")
    p.add_argument("--md", help="also write a Markdown summary here")
    return ap


def _spec(args):
    kw = {k: getattr(args, k) for k in ("generator", "T", "epsilon", "Z", "window", "N", "seed",
                                        "trials", "cost", "variant", "out") if hasattr(args, k)}
    for k in ("rewards", "scenario", "k", "noise", "delta"):
        if getattr(args, k, None) is not None:
            kw[k] = getattr(args, k)
    if getattr(args, "means", None):
        kw["means"] = [float(v) for v in args.means.split(",")]
    return ExperimentSpec(args.cmd, **kw)


def _accept(args):
    from .acceptance import format_report, results_json, run_suite

    results = run_suite(args.suite, args.calibration, progress=lambda r: print(r.line(), flush=True))
    print(format_report(results).splitlines()[-1])
    if args.json:
        Path(args.json).write_text(results_json(results))
    return 0 if all(r.passed for r in results) else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = os.environ.get("LH_THREADS")
    limit = int(threads) if threads else None
    try:
        with threadpool_limits(limits=limit):
            if args.cmd == "accept":
                return _accept(args)
            if args.cmd == "calibrate":
                from .calibration import calibrate

                doc = calibrate(args.out, args.md)
                print(json.dumps(doc["constants"], indent=1))
                return 0
            summary = run_experiment(_spec(args))
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print((Path(args.out) / "report.txt").read_text(), end="")
    return 0 if _bounds_ok(summary) else 1


def _bounds_ok(summary):
    bounds = summary.get("bounds", {})
    return all(b.get("ok", True) for b in bounds.values())


if __name__ == "__main__":
    sys.exit(main())
