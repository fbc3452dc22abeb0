"""``lrgeo`` command line: build-crt, run, evaluate, attack-sim, sweep."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrgeo", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario(p):
        p.add_argument("config", help="scenario JSON file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--margin-km", type=float, help="Benders convergence margin")

    scenario(sub.add_parser("build-crt", help="build and persist the cost reference table"))
    scenario(sub.add_parser("run", help="run the selected mechanisms"))
    ev = sub.add_parser("evaluate", help="metrics from a run directory")
    ev.add_argument("run_dir")
    at = sub.add_parser("attack-sim", help="table rows matching uploaded coefficients")
    scenario(at)
    at.add_argument("--cells", default="0.05,0.1,0.15,0.2,0.25",
                    help="comma-separated table cell sizes in km")
    sw = sub.add_parser("sweep", help="LR-Geo over a parameter grid")
    scenario(sw)
    sw.add_argument("--param", required=True, choices=harness.SWEEP_PARAMS)
    sw.add_argument("--values", required=True, help="comma-separated values")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "evaluate":
            rep = harness.cmd_evaluate(args.run_dir)
            summary = {m: r["mean_km"] for m, r in rep["mechanisms"].items()}
            print(json.dumps(summary, indent=2))
            return 0
        cfg = harness.ScenarioConfig.load(args.config).with_overrides(
            args.seed, args.out, args.margin_km)
        if args.command == "build-crt":
            for path in harness.cmd_build_crt(cfg):
                print(path)
        elif args.command == "run":
            print(harness.cmd_run(cfg))
        elif args.command == "attack-sim":
            cells = [float(v) for v in args.cells.split(",")]
            for r in harness.attack_sim(cfg, cells):
                print(f"cell {r['cell_km']:.3f} km: mean {r['mean_rows']:.2f} rows")
        elif args.command == "sweep":
            values = [float(v) if "." in v else int(v) for v in args.values.split(",")]
            for r in harness.sweep(cfg, args.param, values):
                print(f"{args.param}={r['value']}: ratio {r['approximation_ratio']:.3f}, "
                      f"{r['seconds']:.2f} s, {r['iterations']} iterations")
    except (harness.ConfigError, harness.StageError, FileNotFoundError) as err:
        print(f"lrgeo: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
