"""Command line entry point: ``estimate``, ``track``, ``verify`` and ``bench``."""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
import time
from dataclasses import asdict

import numpy as np

from .errors import F0TrackError
from .fm_core import ConstantTracker, TrackerConfig
from .harness import (
    MODES,
    AlgoConfig,
    StreamSpec,
    exact_f0,
    gen_stream,
    phi_mc_oracle,
    run_trials,
    running_f0,
    space_bench,
    verify_balls_bins,
    verify_fm_tails,
    verify_random_walk_lemma,
)
from .knw import KnwSketch, phi
from .trackers import ha_build, st_build

_POW = re.compile(r"^2\^(-?\d+)$")


def _real(text: str) -> float:
    """Accepts plain reals and powers of two written as ``2^-7``."""
    m = _POW.match(text.strip())
    return 2.0 ** int(m.group(1)) if m else float(text)


def _reals(text: str) -> list[float]:
    return [_real(t) for t in text.split(",") if t.strip()]


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2)


def read_stream(path: str, fmt: str) -> np.ndarray:
    if fmt == "u64le":
        data = sys.stdin.buffer.read() if path == "-" else open(path, "rb").read()
        if len(data) % 8:
            raise ValueError("u64le input length is not a multiple of 8")
        return np.frombuffer(data, dtype="<u8").astype(np.uint64)
    text = sys.stdin.read() if path == "-" else open(path).read()
    return np.array([int(t) for t in text.split()], dtype=np.uint64)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=_real, default=0.1)
    p.add_argument("--delta", type=_real, default=2.0**-7)
    p.add_argument("--universe-bits", type=int, default=32)
    p.add_argument("--mode", choices=MODES, default="high-accuracy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--input", help="stream file ('-' for stdin); otherwise a stream is generated")
    p.add_argument("--format", choices=("text-lines", "u64le"), default="text-lines")
    p.add_argument("--distinct", type=int, default=10_000, help="distinct count of generated streams")
    p.add_argument("--duplication", default="none", help="none, uniform-k or zipf(s)")
    p.add_argument("--order", default="sequential")
    p.add_argument("--exact", action="store_true", help="also run the exact oracle on --input")
    p.add_argument("--report", help="write the JSON report to this file")
    p.add_argument("--json", action="store_true", help="print JSON instead of text")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="include wall-clock fields")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="f0track", description="Distinct-count sketches.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (
        ("estimate", "one-shot estimate of a stream, or a batch of generated trials"),
        ("track", "per-update estimates as JSON lines"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "track":
            p.add_argument("--every", type=int, default=1, help="emit every k-th update")
    v = sub.add_parser("verify", help="Monte Carlo checks of the probabilistic lemmas")
    v.add_argument("suite", choices=("phi", "random-walk", "balls-bins", "fm-tails", "all"))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trials", type=int, default=None, help="override every suite's trial count")
    v.add_argument("--T", type=int, default=2**14)
    v.add_argument("--lambdas", type=_reals, default=[2.0, 4.0, 8.0])
    v.add_argument("--K", type=int, default=10_000)
    v.add_argument("--R", type=int, default=500)
    v.add_argument("--q", type=int, default=16)
    v.add_argument("--phi-points", default="100:5,1000:50,10000:500", help="K:t pairs")
    v.add_argument("--report")
    v.add_argument("--json", action="store_true")
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--timing", action="store_true")
    b = sub.add_parser("bench", help="serialized size over an (eps, delta) grid")
    b.add_argument("--mode", choices=MODES, default="high-accuracy")
    b.add_argument("--eps-list", type=_reals, default=[0.2, 0.1])
    b.add_argument("--delta-list", type=_reals, default=[2.0**-3, 2.0**-5, 2.0**-7])
    b.add_argument("--universe-bits", type=int, default=32)
    b.add_argument("--distinct", type=int, default=10_000)
    b.add_argument("--trials", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--report")
    b.add_argument("--json", action="store_true")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--timing", action="store_true")
    return ap


def _algo(args) -> AlgoConfig:
    return AlgoConfig(args.mode, args.eps, args.delta, args.universe_bits)


def _spec(args) -> StreamSpec:
    return StreamSpec(args.distinct, args.universe_bits, args.duplication, args.order, args.seed)


def _run_on_input(args, xs: np.ndarray) -> tuple[float, int]:
    """Feed one stream; returns (estimate, final space in bits)."""
    ub, seed = args.universe_bits, args.seed
    if args.mode == "constant":
        t = ConstantTracker.build(TrackerConfig(ub, args.delta), seed)
        t.update_many(xs)
        return t.query(), t.persisted_bits()
    if args.mode == "knw":
        s = KnwSketch.build(args.eps, ub, seed, oracle_delta=args.delta)
        s.update_many(xs)
        return s.query(), s.space_bits()
    if args.mode == "high-accuracy":
        h = ha_build(args.eps, args.delta, ub, seed)
        h.update_many(xs)
        return h.query(), h.space_bits()
    s = st_build(args.eps, args.delta, ub, seed)
    s.update_many(xs)
    return s.last_reported, len(s.to_bytes()) * 8


def cmd_estimate(args) -> dict:
    t0 = time.perf_counter()
    algo = _algo(args)
    if args.input:
        xs = read_stream(args.input, args.format)
        est, bits = _run_on_input(args, xs)
        exact = exact_f0(xs) if args.exact else None
        rel = abs(est - exact) / exact if exact else None
        report = {
            "command": "estimate",
            "config": asdict(algo),
            "input": args.input,
            "estimates": [est],
            "exact": [exact],
            "max_rel_error": [rel],
            "space_bits_trace": [[[int(xs.size), bits]]],
            "failure_rate": None,
            "wilson_ci": None,
            "seeds": [args.seed],
        }
    else:
        agg = run_trials(algo, _spec(args), args.trials, args.seed, args.workers, args.timing)
        report = {
            "command": "estimate",
            "config": agg.config,
            "spec": agg.spec,
            "estimates": [r.estimate for r in agg.trials],
            "exact": [r.exact for r in agg.trials],
            "max_rel_error": [r.max_rel_error_over_time for r in agg.trials],
            "space_bits_trace": [r.space_trace for r in agg.trials],
            "failure_rate": agg.failure_rate,
            "wilson_ci": agg.wilson_ci,
            "space_percentiles": agg.space_percentiles,
            "rates": agg.rates,
            "seeds": [r.seeds for r in agg.trials],
            "trials": [r.to_dict() for r in agg.trials],
        }
    report["runtime_ms"] = (time.perf_counter() - t0) * 1e3 if args.timing else None
    return report


def _track_lines(args) -> list[dict]:
    xs = read_stream(args.input, args.format) if args.input else gen_stream(_spec(args))
    ub, seed = args.universe_bits, args.seed
    raw = None
    if args.mode == "constant":
        t = ConstantTracker.build(TrackerConfig(ub, args.delta), seed)
        lv = t.update_many(xs)
        est = np.where(lv < 0, 0.0, np.exp2(lv.astype(np.float64)))
    elif args.mode == "knw":
        est = KnwSketch.build(args.eps, ub, seed, oracle_delta=args.delta).update_many(xs).estimate
    elif args.mode == "high-accuracy":
        est = ha_build(args.eps, args.delta, ub, seed).update_many(xs).estimate
    else:
        rep = st_build(args.eps, args.delta, ub, seed).update_many(xs)
        est, raw = rep.reported, rep.raw
    f0 = running_f0(xs) if args.exact or not args.input else None
    lines = []
    for i in range(args.every - 1, xs.size, args.every):
        line = {"t": i + 1, "estimate": float(est[i])}
        if raw is not None:
            line["raw"] = float(raw[i])
        if f0 is not None:
            line["exact"] = int(f0[i])
        lines.append(line)
    return lines


def cmd_verify(args) -> dict:
    t0 = time.perf_counter()
    suites = ["phi", "random-walk", "balls-bins", "fm-tails"] if args.suite == "all" else [args.suite]
    out: dict = {"command": "verify", "seed": args.seed, "results": {}}
    w = args.workers
    for s in suites:
        if s == "phi":
            rows = []
            for pair in args.phi_points.split(","):
                k, t = (int(v) for v in pair.split(":"))
                mean, se = phi_mc_oracle(k, t, args.trials or 10**6, args.seed, workers=w)
                closed = phi(k, t)
                rows.append({"K": k, "t": t, "closed_form": closed, "mc_mean": mean, "mc_se": se,
                             "pass": abs(closed - mean) <= 3 * se})
            out["results"]["phi"] = {"points": rows, "pass": all(r["pass"] for r in rows)}
        elif s == "random-walk":
            r = verify_random_walk_lemma(args.T, args.trials or 10**4, args.lambdas, args.seed,
                                         workers=w)
            r["pass"] = r["fitted_c"] <= 8
            out["results"]["random-walk"] = r
        elif s == "balls-bins":
            n = args.trials or 2000
            r = verify_balls_bins(args.K, args.R, args.q, n, args.seed, workers=w)
            base = verify_balls_bins(args.K, args.R, args.R, n, args.seed + 1, workers=w)
            a, b = r["percentiles"]["p75"], base["percentiles"]["p75"]
            out["results"]["balls-bins"] = {
                "hashed": r, "independent": base,
                "pass": a <= 3 and max(a, b) <= 2 * min(a, b),
            }
        else:
            r = verify_fm_tails(14, args.trials or 1000, range(2, 9), args.seed, workers=w)
            r["pass"] = all(t <= 4 * 2.0**-lam for lam, t in r["tails"].items())
            out["results"]["fm-tails"] = r
    out["runtime_ms"] = (time.perf_counter() - t0) * 1e3 if args.timing else None
    return out


def cmd_bench(args) -> dict:
    t0 = time.perf_counter()
    out = space_bench(
        args.mode, args.eps_list, args.delta_list, args.distinct, args.trials, args.seed,
        args.universe_bits, args.workers, args.timing,
    )
    out["command"] = "bench"
    out["runtime_ms"] = (time.perf_counter() - t0) * 1e3 if args.timing else None
    return out


def _text(report: dict) -> str:
    cmd = report.get("command")
    if cmd == "estimate":
        lines = [
            f"estimate: {e}" + (f"  exact: {x}" if x is not None else "")
            for e, x in zip(report["estimates"][:20], report["exact"])
        ]
        if report.get("failure_rate") is not None:
            lo, hi = report["wilson_ci"]
            lines.append(f"failure rate: {report['failure_rate']:.4f} (95% CI {lo:.4f}..{hi:.4f})")
        return "\n".join(lines)
    if cmd == "verify":
        return "\n".join(
            f"{name}: {'PASS' if r['pass'] else 'FAIL'}" for name, r in report["results"].items()
        )
    if cmd == "bench":
        lines = [f"eps={g['eps']} delta={g['delta']} bits={g['mean_bits']:.0f}" for g in report["grid"]]
        f = report["fit"]
        lines.append(f"fit: bits = {f['intercept']:.1f} + {f['slope']:.2f} * x, R^2 = {f['r2']:.4f}")
        return "\n".join(lines)
    return dumps(report)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (F0TrackError, ValueError, OSError) as e:
        print(f"f0track: error: {e}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "track":
        body = "".join(json.dumps(_clean(line), sort_keys=True) + "\n" for line in _track_lines(args))
        if args.report:
            with open(args.report, "w") as f:
                f.write(body)
        else:
            sys.stdout.write(body)
        return 0
    report = {"estimate": cmd_estimate, "verify": cmd_verify, "bench": cmd_bench}[args.command](args)
    if args.report:
        with open(args.report, "w") as f:
            f.write(dumps(report) + "\n")
    print(dumps(report) if args.json else _text(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
