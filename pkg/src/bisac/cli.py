"""Command-line front end for the experiment runners.

Every subcommand resolves a scenario (packaged default or --config file,
with a --scale preset and --seed override), runs one experiment, and writes
deterministic CSV files into --out. Exit codes: 0 on success, 2 on a
configuration problem (bad file, bad flag, unknown subcommand), 3 when a
requested design does not meet its positioning constraint.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import experiments
from .config import ConfigError, load_config

_EXPERIMENTS = ("peb-map", "peb-cdf", "converge", "se-snr", "se-gamma",
                "se-nrf", "design", "check")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bisac",
        description="Bistatic positioning-aware hybrid beamforming experiments.",
    )
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    def add_common(p):
        p.add_argument("--config", default=None, metavar="PATH",
                       help="scenario INI file (default: packaged default)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--out", default=".", metavar="DIR",
                       help="output directory (default: current)")
        p.add_argument("--scale", choices=("desk", "paper"), default="desk",
                       help="dimension preset applied under the config file")
        p.add_argument("--stamp", action="store_true",
                       help="include a timestamp comment in CSV output")

    p = sub.add_parser("peb-map", help="positioning-bound heatmap of one height")
    add_common(p)
    p.add_argument("--z", type=float, default=-10.0, help="plane height in m")
    p.add_argument("--ntx", type=int, default=100, help="transmit elements")
    p.add_argument("--res", type=int, default=None, help="grid resolution")

    p = sub.add_parser("peb-cdf", help="positioning-bound CDF across heights")
    add_common(p)
    p.add_argument("--res", type=int, default=None, help="grid resolution")

    p = sub.add_parser("converge", help="alternating-design objective traces")
    add_common(p)

    p = sub.add_parser("se-snr", help="spectral efficiency across receive SNR")
    add_common(p)
    p.add_argument("--seeds", type=int, default=20, help="Monte-Carlo seeds")

    p = sub.add_parser("se-gamma", help="spectral efficiency across PEB target")
    add_common(p)
    p.add_argument("--seeds", type=int, default=5, help="Monte-Carlo seeds")

    p = sub.add_parser("se-nrf", help="spectral efficiency across chain count")
    add_common(p)
    p.add_argument("--seeds", type=int, default=5, help="Monte-Carlo seeds")

    p = sub.add_parser("design", help="one-shot joint design at the scenario")
    add_common(p)
    p.add_argument("--method", choices=("rtr-sca", "pc-omp"),
                   default="rtr-sca", help="design algorithm")

    p = sub.add_parser("check", help="fast internal consistency battery")
    add_common(p)
    return parser


def _write(table, out_dir: str, name: str, stamp: bool) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    table.write_csv(path, stamp=stamp)
    return path


def _load(args):
    overrides = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        overrides["seed"] = args.seed
    return load_config(args.config, scale=args.scale, overrides=overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print(f"expected one of: {', '.join(_EXPERIMENTS)}", file=sys.stderr)
        return 2

    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "peb-map":
        table = experiments.run_peb_heatmap(cfg, args.z, n_t=args.ntx,
                                            grid_res=args.res)
        path = _write(table, args.out, "peb-map.csv", args.stamp)
        print(f"wrote {len(table.rows)} sector samples to {path}")
        return 0

    if args.command == "peb-cdf":
        table = experiments.run_peb_cdf(cfg, grid_res=args.res)
        path = _write(table, args.out, "peb-cdf.csv", args.stamp)
        print(f"wrote {len(table.rows)} CDF rows to {path}")
        return 0

    if args.command == "converge":
        table = experiments.run_convergence(cfg)
        path = _write(table, args.out, "converge.csv", args.stamp)
        print(f"wrote {len(table.rows)} objective rows to {path}")
        return 0

    if args.command == "se-snr":
        table = experiments.run_se_vs_snr(cfg, num_seeds=args.seeds)
        path = _write(table, args.out, "se-snr.csv", args.stamp)
        print(f"wrote {len(table.rows)} rows to {path}")
        return 0

    if args.command == "se-gamma":
        table = experiments.run_se_vs_gamma(cfg, num_seeds=args.seeds)
        path = _write(table, args.out, "se-gamma.csv", args.stamp)
        print(f"wrote {len(table.rows)} rows to {path}")
        return 0

    if args.command == "se-nrf":
        table = experiments.run_se_vs_nrf(cfg, num_seeds=args.seeds)
        path = _write(table, args.out, "se-nrf.csv", args.stamp)
        print(f"wrote {len(table.rows)} rows to {path}")
        return 0

    if args.command == "design":
        result = experiments.design_once(cfg, method=args.method)
        path = _write(result["summary"], args.out, "design-summary.csv",
                      args.stamp)
        bf = result["beamformer"]
        np.save(os.path.join(args.out, "analog.npy"), bf.analog)
        np.save(os.path.join(args.out, "digital.npy"), bf.digital)
        pebs = ", ".join(f"{p:.4f}" for p in result["pebs"])
        print(f"method {args.method}: PEB per target [{pebs}] m "
              f"(target {cfg.gamma_m} m), SE {result['se']:.3f} bit/s/Hz "
              f"at {cfg.snr_comm_db:g} dB")
        print(f"wrote {path}, analog.npy, digital.npy")
        if not result["feasible"]:
            print("design infeasible: positioning constraint not met",
                  file=sys.stderr)
            return 3
        return 0

    if args.command == "check":
        table = experiments.self_check(cfg)
        path = _write(table, args.out, "check.csv", args.stamp)
        failed = 0
        for name, status, detail in table.rows:
            print(f"{name}: {status} ({detail})")
            failed += status != "pass"
        print(f"wrote {path}")
        return 0 if failed == 0 else 1

    parser.print_usage(sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
