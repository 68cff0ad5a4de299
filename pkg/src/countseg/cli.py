"""Command-line entry point: ``countseg {segment,simulate,verify-bounds}``.

Exit codes: 0 success, 2 input/design parse error, 3 no overdispersion
with ``--phi auto``, 4 infeasible kmax/min-seg-len, 5 a bound check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from countseg import __version__
from countseg.dispersion import UnderdispersedData, estimate_phi
from countseg.model import NEGBIN, POISSON, DistributionSpec, TrueSignal
from countseg.segmenter import InfeasibleSegmentation, segment
from countseg.selection import PenaltySpec, select_k
from countseg.simulate import (
    BUILTIN_PROFILES,
    BoundCheckReport,
    BoundScenario,
    SignalDesign,
    default_scenario,
    recovery_experiment,
    run_bound_checks,
)

EXIT_PARSE = 2
EXIT_UNDERDISPERSED = 3
EXIT_INFEASIBLE = 4
EXIT_BOUND_FAILED = 5


class InputError(ValueError):
    pass


def read_counts(path: str, fmt: str = "auto") -> np.ndarray:
    """Read counts from a one-per-line text file or a ``position,count`` CSV."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if fmt == "auto":
        first = next((ln for ln in lines if ln.strip()), "")
        fmt = "csv" if path.endswith(".csv") or "," in first else "text"
    values = []
    if fmt == "text":
        for lineno, line in enumerate(lines, 1):
            s = line.strip()
            if not s:
                continue
            if not s.isdigit():
                raise InputError(f"line {lineno}: expected a nonnegative integer, got {s!r}")
            values.append(int(s))
    elif fmt == "csv":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip().lower() for c in rows[0]] != ["position", "count"]:
            raise InputError("line 1: expected header 'position,count'")
        for lineno, row in enumerate(rows[1:], 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2 or not all(c.strip().isdigit() for c in row):
                raise InputError(f"line {lineno}: expected 'position,count' with nonnegative integers")
            pos, cnt = int(row[0]), int(row[1])
            if pos != len(values) + 1:
                raise InputError(f"line {lineno}: position {pos}, expected {len(values) + 1}")
            values.append(cnt)
    else:
        raise InputError(f"unknown input format {fmt!r}")
    if not values:
        raise InputError("input contains no counts")
    return np.asarray(values, dtype=np.int64)


def parse_penalty(text: str) -> tuple[str, Optional[float]]:
    if text in ("slope", "jump"):
        return text, None
    if text.startswith("fixed:"):
        try:
            beta = float(text[len("fixed:") :])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad beta in {text!r}")
        if not beta > 0:
            raise argparse.ArgumentTypeError("fixed beta must be > 0")
        return "fixed", beta
    raise argparse.ArgumentTypeError("penalty must be slope, jump or fixed:<beta>")


def parse_phi(text: str):
    if text == "auto":
        return "auto"
    try:
        phi = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("phi must be a positive number or 'auto'")
    if not phi > 0:
        raise argparse.ArgumentTypeError("phi must be > 0")
    return phi


def read_design(path: str, seed: Optional[int] = None) -> SignalDesign:
    """Parse a ``key = value`` design file.

    Keys: family (poisson|negbin), phi (negbin), lengths, and either means
    or theta (comma separated), optional seed.  ``#`` starts a comment.
    """
    fields = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise InputError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in s.split("=", 1))
        fields[key] = value
    try:
        family = fields.get("family", NEGBIN)
        spec = DistributionSpec.poisson() if family == POISSON else DistributionSpec.negbin(float(fields["phi"]))
        lengths = [int(v) for v in fields["lengths"].split(",")]
        if "means" in fields:
            design = SignalDesign.from_means(lengths, [float(v) for v in fields["means"].split(",")], spec)
        else:
            design = SignalDesign(lengths, [float(v) for v in fields["theta"].split(",")], spec)
        design_seed = int(fields.get("seed", 0)) if seed is None else seed
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed design {path}: {exc}")
    return SignalDesign(design.lengths, design.theta, design.spec, design_seed)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _write(text: str, path: Optional[str]):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def build_report(y: np.ndarray, spec: DistributionSpec, args, phi_method: str) -> tuple[dict, str]:
    mode, beta = args.penalty
    table = segment(y, args.kmax, spec, args.min_seg_len, args.engine)
    pen = PenaltySpec(y.size, mode, beta, args.kappa)
    sel = select_k(table, pen)
    seg = table.segmentation(sel.chosen_k)
    per_k = sel.rows()
    for row in per_k:
        row["breakpoints"] = list(table.segmentation(row["k"]).breakpoints)
    segments = []
    for (lo, hi), par in zip(seg.segments(), seg.params):
        row = {"start": lo, "end": hi, "mean": par.mean}
        if par.prob is not None:
            row["prob"] = par.prob
        segments.append(row)
    report = {
        "version": __version__,
        "n": int(y.size),
        "family": spec.family,
        "phi": spec.phi,
        "phi_method": phi_method,
        "engine": args.engine,
        "kmax": args.kmax,
        "min_seg_len": args.min_seg_len,
        "kappa": args.kappa,
        "penalty_mode": mode,
        "beta_used": sel.beta_used,
        "calibration_failed": sel.calibration_failed,
        "calibration": sel.calibration,
        "chosen_k": sel.chosen_k,
        "breakpoints": list(seg.breakpoints),
        "segments": segments,
        "per_k": per_k,
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment", "start", "end", "length", "mean", "prob"])
    for i, row in enumerate(segments, 1):
        prob = "" if "prob" not in row else repr(row["prob"])
        w.writerow([i, row["start"], row["end"], row["end"] - row["start"] + 1, repr(row["mean"]), prob])
    return _jsonable(report), buf.getvalue()


def cmd_segment(args) -> int:
    try:
        y = read_counts(args.input, args.format)
    except (OSError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.kmax is None:
        args.kmax = max(1, min(50, y.size // args.min_seg_len))
    phi_method = "none"
    if args.dist == NEGBIN:
        if args.phi is None:
            print("error: --phi is required with --dist negbin", file=sys.stderr)
            return EXIT_PARSE
        if args.phi == "auto":
            try:
                method = "moments_windowed_median" if y.size >= 200 else "moments_global"
                est = estimate_phi(y, method, alpha=args.phi_alpha)
            except UnderdispersedData as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_UNDERDISPERSED
            spec, phi_method = DistributionSpec.negbin(est.phi_hat), est.method
        else:
            spec, phi_method = DistributionSpec.negbin(args.phi), "given"
    else:
        spec = DistributionSpec.poisson()
    if args.penalty[0] != "fixed" and args.kmax < 10:
        print("error: slope/jump calibration needs --kmax >= 10", file=sys.stderr)
        return EXIT_INFEASIBLE
    try:
        report, table_csv = build_report(y, spec, args, phi_method)
    except InfeasibleSegmentation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    text = json.dumps(report, indent=2) + "\n"
    _write(text, args.out)
    if args.out is not None:
        Path(args.out).with_suffix(".csv").write_text(table_csv)
    return 0


def cmd_simulate(args) -> int:
    try:
        if args.design is not None:
            design = read_design(args.design, args.seed)
        else:
            design = BUILTIN_PROFILES[args.profile]()
            if args.seed is not None:
                design = SignalDesign(design.lengths, design.theta, design.spec, args.seed)
    except (OSError, InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    mode, beta = args.penalty
    kmax = args.kmax if args.kmax is not None else 3 * design.k
    phi = args.phi
    if args.dist == NEGBIN and phi is None:
        phi = "auto"
    try:
        result = recovery_experiment(
            design,
            args.reps,
            PenaltySpec(design.n, mode, beta, args.kappa),
            kmax=kmax,
            fit_family=args.dist,
            phi=phi,
            engine=args.engine,
            threads=args.threads,
            rand_norm=args.rand_norm,
        )
    except InfeasibleSegmentation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except UnderdispersedData as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDERDISPERSED
    _write(result.to_csv(), args.out)
    return 0


def _design_scenario(design: SignalDesign) -> BoundScenario:
    truth = design.truth()
    first = design.lengths[0]
    tail = TrueSignal(truth.theta[:first], truth.spec)
    dev = 2.0 * math.sqrt(float(tail.means().sum()))
    return BoundScenario("design", tail, dev, truth, design.segmentation())


def cmd_verify_bounds(args) -> int:
    try:
        xs = [float(v) for v in args.xs.split(",") if v.strip()]
        if any(x < 0 for x in xs):
            raise InputError("x values must be nonnegative")
        if args.design is not None:
            scenarios = [_design_scenario(read_design(args.design))]
        elif args.scenario == "all":
            scenarios = [default_scenario("poisson"), default_scenario("negbin")]
        else:
            scenarios = [default_scenario(args.scenario)]
    except (OSError, InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    report = BoundCheckReport()
    lines = []
    for i, sc in enumerate(scenarios):
        part = run_bound_checks(sc, xs, args.reps, args.seed + 10 * i, args.truth_scale)
        for r in part.rows:
            r["check"] = f"{sc.name}:{r['check']}"
        report.rows.extend(part.rows)
        lines.append(
            f"{sc.name}: chi2 mean {part.chi2_mean:.4f} (|m|={part.m}), P(Omega^c)={part.omega_complement:.4g}"
        )
    _write(report.to_csv(), args.out)
    for ln in lines:
        print(ln, file=sys.stderr)
    if not report.passed:
        failed = [f"{r['check']}[{r['side']}, x={r['x']}]" for r in report.rows if not r["passed"]]
        print("bound check failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_BOUND_FAILED
    return 0


def _add_model_flags(p: argparse.ArgumentParser, dist_default: str):
    p.add_argument("--dist", choices=[POISSON, NEGBIN], default=dist_default)
    p.add_argument("--phi", type=parse_phi, default=None, help="negbin dispersion or 'auto'")
    p.add_argument("--kmax", type=int, default=None)
    p.add_argument("--min-seg-len", type=int, default=1)
    p.add_argument("--penalty", type=parse_penalty, default=("slope", None), help="slope, jump or fixed:<beta>")
    p.add_argument("--kappa", type=float, default=0.1)
    p.add_argument("--engine", choices=["pruned", "exact"], default="pruned")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="replicate workers (default: all cores)")
    p.add_argument("--rand-norm", choices=["standard", "paper"], default="standard")
    p.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="countseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment a count series and select K")
    p.add_argument("input")
    p.add_argument("--format", choices=["auto", "text", "csv"], default="auto")
    p.add_argument(
        "--phi-alpha", type=float, default=0.05, help="level of the overdispersion test gating --phi auto"
    )
    _add_model_flags(p, POISSON)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("simulate", help="run the recovery experiment on a simulated design")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--profile", choices=sorted(BUILTIN_PROFILES), default="inr14")
    src.add_argument("--design", default=None)
    p.add_argument("--reps", type=int, default=50)
    _add_model_flags(p, NEGBIN)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-bounds", help="Monte-Carlo check of the exponential bounds")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", choices=["poisson", "negbin", "all"], default="all")
    src.add_argument("--design", default=None)
    p.add_argument("--xs", default="1,2,5")
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth-scale", type=float, default=1.0, help="sample from a truth with means scaled by this")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify_bounds)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_PARSE
    return args.func(args)


def entry():
    sys.exit(main())
