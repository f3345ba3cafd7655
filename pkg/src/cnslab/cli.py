"""Command-line entry point: ``run``, ``verify`` and ``report``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import harness


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cnslab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    ap.add_argument("--output-root", help=f"output directory (default ${harness.OUTPUT_ROOT_ENV} or ./runs)")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or builtin scenario")
    r.add_argument("scenario", help=f"path to a scenario file or one of: {', '.join(harness.BUILTIN)}")
    r.add_argument("--seed", type=int, help="override the scenario seed")

    v = sub.add_parser("verify", help="module invariants and estimate suites across resolutions")
    v.add_argument("--resolutions", type=int, nargs="+", default=[32, 64])
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--dim", type=int, default=2, choices=(2, 3))

    rep = sub.add_parser("report", help="write norms.csv for a finished run directory")
    rep.add_argument("run_dir")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "run":
        scen = harness.load_scenario(args.scenario)
        if args.seed is not None:
            scen.seed = args.seed
            scen.solver = replace(scen.solver, seed=args.seed)
        man = harness.run(scen, args.output_root)
    elif args.command == "verify":
        man = harness.verify_all(args.resolutions, args.trials, args.seed, args.dim, args.output_root)
    else:
        print(harness.report(args.run_dir))
        return 0
    for name, c in man.checks.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name} value={c['value']:.3e} ({c['relation']} {c['tolerance']:.3e})")
    for err in man.errors:
        print(f"ERROR {err}")
    print(f"{'PASSED' if man.passed else 'FAILED'}: {man.output_dir}")
    return man.exit_code


if __name__ == "__main__":
    sys.exit(main())
