"""Command line entry point: ``nlks <subcommand> ...``.

Exit status is 0 on success, 2 when the input is invalid and 3 when the
solver fails.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import oracle
from .bench.config import load_config, parse_number
from .bench.report import report_table
from .bench.runner import load_reports, run_scenario
from .errors import DomainError, NLKSError, ParseError, ValidationError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3


def _number(text: str) -> float:
    try:
        return parse_number(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def _emit_csv(header, rows, out=None):
    w = csv.writer(out or sys.stdout, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) for v in row])


def cmd_classify(args) -> int:
    p = oracle.GrowthParams(args.M0, args.m0)
    reg = oracle.classify(p, args.m2)
    print(f"regime: {reg.tag.value}")
    print(f"note: {reg.note}")
    print(f"m0/8pi = {p.m0 / oracle.EIGHT_PI:.6g}, M0/8pi = {p.M0 / oracle.EIGHT_PI:.6g}")
    if oracle.compare_8pi(p.M0) < 0 < oracle.compare_8pi(p.m0):
        print(f"critical second moment C = {oracle.critical_second_moment(p):.10g}")
    t_min = oracle.h_min_time(p)
    if t_min is not None:
        print(f"mass crosses 8pi at t = {t_min:.10g}")
    if args.m2 is not None:
        t_star = oracle.blowup_time(p, args.m2)
        print("second moment stays positive" if t_star is None
              else f"second moment vanishes at t* = {t_star:.10g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    rep = run_scenario(cfg, args.out)
    print(f"scenario {rep.name}: predicted {rep.predicted}, observed {rep.observed}, "
          f"{'agree' if rep.agree else 'disagree'} ({rep.verdict})")
    if rep.analytic_blowup_time is not None:
        print(f"analytic blow-up time {rep.analytic_blowup_time:.6g}")
    print(f"initial mass beyond the truncation: {rep.mass_deficit:.3g}; "
          f"max boundary current: {rep.boundary_current_max:.3g}")
    if rep.out_dir:
        print(f"outputs in {rep.out_dir}")
    if rep.error:
        print(f"solver failure: {rep.error}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _radii(args):
    return np.linspace(0.0, args.r_max, args.points)


def cmd_steady(args) -> int:
    fam = oracle.SteadyFamily(args.lam, args.M0, normalized=not args.unnormalized)
    r = _radii(args)
    if args.emit == "profile":
        _emit_csv(("r", "density"), zip(r, oracle.steady_density(fam, r)))
    else:
        _emit_csv(("r", "cumulative"), zip(r, oracle.steady_cumulative(fam, r)))
    return EXIT_OK


def cmd_envelope(args) -> int:
    p = oracle.GrowthParams(args.M0, args.m0 if args.m0 is not None else args.M0)
    if args.kind == "super":
        if args.mu is None:
            raise ValidationError("--mu is required for a super-solution")
        env = oracle.Envelope.super_solution(args.lambda0, args.mu, args.M0)
        vals = oracle.super_envelope(env, p, args.t, _radii(args))
    else:
        if args.mu0 is None or args.mu1 is None:
            raise ValidationError("--mu0 and --mu1 are required for a sub-solution")
        env = oracle.Envelope.sub_solution(args.lambda0, args.mu0, args.mu1, args.M0)
        vals = oracle.sub_envelope(env, p, args.t, _radii(args))
        print(f"# R0 = {env.R0:.10g}, A = {env.A:.10g}")
    print(f"# lambda(t) = {env.lam(args.t):.10g}")
    _emit_csv(("r", "envelope"), zip(_radii(args), vals))
    return EXIT_OK


def cmd_report(args) -> int:
    reports = load_reports(args.inputs)
    text, csv_text = report_table(reports)
    sys.stdout.write(csv_text if args.csv else text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlks", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", help="predicted regime for (M0, m0[, m2])")
    c.add_argument("--M0", type=_number, required=True)
    c.add_argument("--m0", type=_number, required=True)
    c.add_argument("--m2", type=_number, default=None, help="initial second moment")
    c.set_defaults(func=cmd_classify)

    s = sub.add_parser("simulate", help="run a scenario document")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None, help="root folder for outputs")
    s.set_defaults(func=cmd_simulate)

    st = sub.add_parser("steady", help="tabulate a steady profile")
    st.add_argument("--lambda", dest="lam", type=_number, required=True)
    st.add_argument("--M0", type=_number, default=oracle.EIGHT_PI)
    st.add_argument("--emit", choices=("profile", "cumulative"), default="profile")
    st.add_argument("--unnormalized", action="store_true",
                    help="density form with total mass 8pi instead of unit mass")
    st.add_argument("--r-max", type=_number, default=10.0)
    st.add_argument("--points", type=int, default=101)
    st.set_defaults(func=cmd_steady)

    e = sub.add_parser("envelope", help="tabulate a super- or sub-solution envelope")
    e.add_argument("--kind", choices=("super", "sub"), required=True)
    e.add_argument("--M0", type=_number, required=True)
    e.add_argument("--m0", type=_number, default=None)
    e.add_argument("--lambda0", type=_number, default=1.0)
    e.add_argument("--mu", type=_number, default=None)
    e.add_argument("--mu0", type=_number, default=None)
    e.add_argument("--mu1", type=_number, default=None)
    e.add_argument("--t", type=_number, default=0.0)
    e.add_argument("--r-max", type=_number, default=10.0)
    e.add_argument("--points", type=int, default=101)
    e.set_defaults(func=cmd_envelope)

    r = sub.add_parser("report", help="tabulate saved scenario reports")
    r.add_argument("--in", dest="inputs", nargs="+", required=True)
    r.add_argument("--csv", action="store_true")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NLKSError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
