"""Command-line driver.

Exit codes: 0 success, 1 validation failure, 2 runtime or solver failure.
Error lines start with ``ERROR:``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import SpaceTimeSequence, cc_product_test, space_time_integral
from .grid import build_grid
from .ladder import LadderPlan, run_ladder, summary_text, write_report_csv, write_summary
from .output import write_simulation
from .pressure import PressureSolveError
from .scenario import ScenarioError, parse_scenario
from .transport import TransportError, run_simulation

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _errors(lines) -> None:
    for line in lines:
        print(f"ERROR: {line}", file=sys.stderr)


def _load(path):
    return parse_scenario(path)


def cmd_check(args) -> int:
    _load(args.scenario)
    print(f"{args.scenario}: all hypotheses satisfied")
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = _load(args.scenario)
    out = Path(args.output or sc.output.directory)
    result = run_simulation(sc)
    written = write_simulation(result, out, pgm=sc.output.pgm or args.pgm)
    s = result.series
    print(f"steps: {len(s['step'])}  max balance residual: {s['balance_residual'].max():.3e}  "
          f"c range: [{s['min_c'].min():.6g}, {s['max_c'].max():.6g}]")
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def cmd_ladder(args) -> int:
    sc = _load(args.scenario)
    plan = LadderPlan.from_scenario(sc, workers=args.workers)
    report = run_ladder(plan)
    out = Path(args.output or sc.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "ladder.csv")
    write_summary(report, out / "ladder_summary.txt")
    print(summary_text(report), end="")
    if not report.ok:
        _errors(f"axis {a.axis}: {a.failure}" for a in report.axes.values() if a.failure)
        return EXIT_RUNTIME
    return EXIT_OK


def cc_demo_cases(labels=(1e-1, 1e-2, 1e-3), samples: int = 40001, n: int = 4):
    """Positive and negative compensated-compactness cases on the unit square.

    Positive: ``alpha = a(x) sin(t/eps)`` with limit 0 against the fixed field
    ``beta = b(x)``. Negative: ``alpha = beta = sin(t/eps)``, limits 0.
    Test field ``phi = sin^2(pi t)`` on ``t in [0, 1]``.
    """
    g = build_grid(n, n, 1.0, 1.0)
    t = np.linspace(0.0, 1.0, samples)
    x, y = g.centers[:, 0], g.centers[:, 1]
    a = 1.0 + x * y
    b = np.cos(np.pi * x) + 2.0
    phi = np.sin(np.pi * t)[:, None] ** 2 * np.ones(g.ncells)
    zero = np.zeros((t.size, g.ncells))
    osc = [np.sin(t / e)[:, None] * np.ones(g.ncells) for e in labels]
    pos_alpha = SpaceTimeSequence(g, t, labels, [o * a for o in osc])
    pos_beta = SpaceTimeSequence(g, t, labels, [np.broadcast_to(b, zero.shape)] * len(labels))
    neg = SpaceTimeSequence(g, t, labels, osc)
    positive = cc_product_test(pos_alpha, pos_beta, phi, zero, np.broadcast_to(b, zero.shape))
    negative = cc_product_test(neg, neg, phi, zero, zero)
    half_phi = 0.5 * space_time_integral(phi, t, g)
    return positive, negative, half_phi


def cmd_cc_demo(args) -> int:
    positive, negative, half_phi = cc_demo_cases()
    print("positive case: alpha = a(x) sin(t/eps), beta = b(x)")
    for line in positive.lines():
        print("  " + line)
    print("negative case: alpha = beta = sin(t/eps)")
    for line in negative.lines():
        print("  " + line)
    rel = abs(negative.gaps[-1] - half_phi) / half_phi
    print(f"  half integral of phi: {half_phi:.6e}  relative deviation of final gap: {rel:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="miscible", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one simulation and write outputs")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", help="output directory (default from scenario)")
    s.add_argument("--pgm", action="store_true", help="also write PGM heatmaps")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("ladder", help="run the approximation ladder")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", help="output directory (default from scenario)")
    s.add_argument("-j", "--workers", type=int, default=1, help="parallel ladder points")
    s.set_defaults(func=cmd_ladder)

    s = sub.add_parser("check-hypotheses", help="validate a scenario file only")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("cc-demo", help="built-in product-of-weak-limits demonstration")
    s.set_defaults(func=cmd_cc_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        _errors(exc.errors)
        return EXIT_INVALID
    except (TransportError, PressureSolveError, ValueError, OSError) as exc:
        _errors([f"{type(exc).__name__}: {exc}"])
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
