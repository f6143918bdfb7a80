"""Command-line interface: ``qamle solve | verify | gamma1 | extend``.

Exit codes: 0 success, 1 internal error or failed check, 2 iteration cap
reached, 3 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys

import numpy as np

from . import __version__
from .errors import MaxIterExceeded, QamleError
from .extension import scalar_extension
from .functionals import FunctionalKind, gamma1_raw
from .geometry import DiscreteDomain, interior
from .io import (SolutionArtifact, atomic_write_text, format_log,
                 load_problem, load_solution, parse_ball_union, read_domain,
                 read_field_payload, read_log, save_solution, write_plot_csv)
from .oracles import (check_chasles, check_customs, check_geometrical,
                      check_h_monotone, check_p4_continuity,
                      check_prop_alpha_zero)
from .refine import (RefinementConfig, initial_extension, replay_corrections,
                     solve_quasi_amle, violation_certificate)

EXIT_OK, EXIT_INTERNAL, EXIT_MAXITER, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _problem_flags(args):
    return dict(rho=args.rho, n0=args.n0, alpha=args.alpha, sigma0=args.sigma0,
                max_iter=args.max_iter, scan=args.scan, seed=args.seed,
                samples_per_iter=args.samples, c_b=args.c_b, initial=args.initial)


def cmd_solve(args):
    spec = load_problem(args.domain, args.field, args.functional, **_problem_flags(args))
    dom, cfg = spec.domain, spec.config
    status = "converged"
    try:
        U, records = solve_quasi_amle(spec.kind, spec.field, dom, cfg)
    except MaxIterExceeded as exc:
        U, records, status = exc.state.U, exc.state.log, "max_iter"
        print(f"qamle solve: {exc}", file=sys.stderr)
    cert = violation_certificate(spec.kind, U, dom, cfg)
    art = SolutionArtifact.from_field(spec.kind, U, spec.K, len(records), cert.max_gap,
                                      cfg.to_json())
    art.extra = {"status": status}
    save_solution(art, args.out)
    if args.log:
        atomic_write_text(args.log, format_log(records))
    if args.plot_csv:
        write_plot_csv(dom, U, args.plot_csv)
    return EXIT_OK if status == "converged" else EXIT_MAXITER


def _plain_domain(doc):
    # checks ignore the constraint set; index 0 stands in when none is given
    try:
        return DiscreteDomain(doc.points, metric=doc.metric, k_neighbors=doc.k_neighbors,
                              constraints=doc.constraints or [0], h=doc.h)
    except ValueError as exc:
        raise UsageError(f"invalid domain: {exc}") from None


def _load_checked_field(args, need_total=False):
    """Field to check: ``--solution`` artifact or a ``--field`` payload."""
    doc = read_domain(args.domain)
    if args.solution:
        art = load_solution(args.solution)
        kind = FunctionalKind.parse(art.functional)
        dom = _plain_domain(doc)
        return kind, dom, art.to_field(dom)
    if not args.field:
        raise UsageError("verify: --field or --solution is required")
    spec = load_problem(args.domain, args.field, args.functional)
    if need_total and not spec.field.is_total:
        raise UsageError("verify: this check needs a field defined on every point")
    return spec.kind, spec.domain, spec.field


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"verify --check {args.check}: missing {flags}")


def cmd_verify(args):
    check = args.check
    if check == "customs":
        _require(args, "from_log", "field")
        spec = load_problem(args.domain, args.field, args.functional)
        records = read_log(args.from_log)
        if args.solution:
            cfg_obj = load_solution(args.solution).config
            cfg = RefinementConfig(**cfg_obj)
        else:
            cfg = spec.config
        U0 = initial_extension(spec.kind, spec.field, spec.domain, cfg.initial)
        omegas = [r.omega for r in records]
        seq = replay_corrections(spec.kind, U0, omegas, cfg.c_b)
        C = args.C if args.C is not None else max((r.phi_after for r in records), default=0.0)
        report = check_customs(spec.kind, seq, omegas, C, cfg.c_b)
        if args.solution:
            final = load_solution(args.solution).to_field(spec.domain)
            report.witness["replay_matches_solution"] = bool(final.equals(seq[-1]))
    elif check == "geom":
        _require(args, "balls", "beta", "epsilon")
        doc = read_domain(args.domain)
        dom = _plain_domain(doc)
        balls = parse_ball_union(args.balls, "--balls").balls
        report = check_geometrical(dom, balls, args.beta, args.epsilon)
    else:
        kind, dom, f = _load_checked_field(args, need_total=check in ("hmono",))
        if check == "chasles":
            _require(args, "i", "j")
            report = check_chasles(kind, f, args.i, args.j)
        elif check == "hmono":
            _require(args, "omega")
            report = check_h_monotone(kind, f, parse_ball_union(args.omega))
        elif check == "prop1":
            _require(args, "omega")
            V = interior(dom, parse_ball_union(args.omega))
            report = check_prop_alpha_zero(kind, f, V)
        else:
            _require(args, "i", "j", "eta")
            report = check_p4_continuity(kind, f, args.i, args.j, args.eta)
    text = json.dumps(report.to_json(), sort_keys=True, allow_nan=False) + "\n"
    if args.report:
        atomic_write_text(args.report, text)
    if not report.passed:
        print(f"qamle verify: check {check} failed "
              f"(worst {report.worst_violation!r} > tol {report.tolerance!r})", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_INTERNAL


def cmd_gamma1(args):
    doc = read_domain(args.domain)
    kind, data = read_field_payload(args.field, len(doc.points), doc.points.shape[1])
    if kind is not FunctionalKind.GAMMA1:
        raise UsageError(f"gamma1: {args.field} holds values, not jets")
    idx = sorted(data)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "A", "B", "gamma1"])
    for a, i in enumerate(idx):
        for j in idx[a + 1:]:
            if np.array_equal(doc.points[i], doc.points[j]):
                raise QamleError(f"points {i} and {j} coincide")
            A, B, G = gamma1_raw(doc.points[i], data[i], doc.points[j], data[j])
            w.writerow([i, j, repr(float(A)), repr(float(B)), repr(float(G))])
    atomic_write_text(args.out, buf.getvalue())
    return EXIT_OK


def cmd_extend(args):
    spec = load_problem(args.domain, args.field, "lip")
    dom, f = spec.domain, spec.field
    targets = np.arange(dom.n)
    vals = scalar_extension(dom, f.indices, f.values_at(f.indices), targets, args.method)
    U = f.with_values(targets, vals)
    doc = {"values": {str(i): float(v) for i, v in enumerate(U.values)}}
    atomic_write_text(args.out, json.dumps(doc, allow_nan=False) + "\n")
    if args.plot_csv:
        write_plot_csv(dom, U, args.plot_csv)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="qamle", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"qamle {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="compute a quasi-AMLE of the field data")
    s.add_argument("--domain", required=True, help="domain JSON or CSV")
    s.add_argument("--field", required=True, help="field JSON (values or jets)")
    s.add_argument("--functional", choices=["lip", "gamma1"], default=None)
    s.add_argument("--rho", type=float, help="minimal ball radius (default 4h)")
    s.add_argument("--n0", type=int, help="maximal balls per region (default 3)")
    s.add_argument("--alpha", type=float, help="depth of admissible roots (default 2h)")
    s.add_argument("--sigma0", type=float, help="gap threshold (default 0.05 K)")
    s.add_argument("--scan", choices=["exhaustive", "random"], default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--samples", type=int, default=None, help="random family size")
    s.add_argument("--max-iter", type=int, default=None)
    s.add_argument("--c-b", type=float, default=None, help="boundary thickness in units of h")
    s.add_argument("--initial", choices=["average", "upper", "lower"], default=None)
    s.add_argument("--out", required=True, help="solution artifact path")
    s.add_argument("--log", help="JSON Lines iteration log path")
    s.add_argument("--plot-csv", help="write coordinates and values as CSV")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="run a property checker")
    v.add_argument("--check", required=True,
                   choices=["chasles", "customs", "hmono", "prop1", "geom", "p4"])
    v.add_argument("--domain", required=True)
    v.add_argument("--field", help="field JSON")
    v.add_argument("--solution", help="solution artifact JSON")
    v.add_argument("--functional", choices=["lip", "gamma1"], default=None)
    v.add_argument("--from-log", help="solve log to replay (customs)")
    v.add_argument("--C", type=float, default=None, help="customs bound (default: max logged)")
    v.add_argument("--i", type=int)
    v.add_argument("--j", type=int)
    v.add_argument("--omega", help="ball union as [[center, radius], ...]")
    v.add_argument("--balls", help="ball list as [[center, radius], ...] (geom)")
    v.add_argument("--beta", type=float)
    v.add_argument("--epsilon", type=float)
    v.add_argument("--eta", type=float, help="probe radius (p4)")
    v.add_argument("--report", help="report JSON path")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gamma1", help="pairwise Gamma^1 table of a jet field")
    g.add_argument("--domain", required=True)
    g.add_argument("--field", required=True)
    g.add_argument("--out", required=True, help="CSV table path")
    g.set_defaults(func=cmd_gamma1)

    e = sub.add_parser("extend", help="one-shot scalar minimal extension")
    e.add_argument("--domain", required=True)
    e.add_argument("--field", required=True)
    e.add_argument("--method", choices=["upper", "lower", "average"], default="average")
    e.add_argument("--out", required=True, help="extended field JSON path")
    e.add_argument("--plot-csv")
    e.set_defaults(func=cmd_extend)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qamle: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MaxIterExceeded as exc:
        print(f"qamle: {exc}", file=sys.stderr)
        return EXIT_MAXITER
    except QamleError as exc:
        print(f"qamle: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"qamle: internal check failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
