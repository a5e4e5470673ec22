"""Command line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import SHIPPED, ConfigError, load_config, with_overrides
from .pipeline import (InputError, load_dataset, run_analyze, run_demo, run_predict,
                       run_simulate)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", required=True,
                       help=f"config file, or a shipped name ({', '.join(SHIPPED)})")
        p.add_argument("--vehicle", help="vehicle fixture name (overrides the config)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--n", type=int, help="campaign size (overrides the config)")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivefuel",
        description="Driver preference fuel analysis: simulate campaigns, analyze and predict.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a Monte Carlo campaign")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="correlation table, convergence and quintic fit")
    _common(p)
    p.add_argument("--dataset", help="campaign CSV (default: <out>/campaign.csv)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("predict", help="train and evaluate the Gaussian process model")
    _common(p)
    p.add_argument("--train", help="training campaign CSV (default: <out>/campaign.csv)")
    p.add_argument("--test", help="test campaign CSV (default: simulate one with the test sampler)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("demo", help="run all stages for every shipped scenario and vehicle")
    _common(p, config=False)
    p.add_argument("--cells", nargs="+", choices=SHIPPED, default=list(SHIPPED))
    p.set_defaults(func=cmd_demo)
    return parser


def _config(args):
    if args.n is not None and args.n < 1:
        raise ConfigError("--n must be >= 1")
    cfg = with_overrides(load_config(args.config), seed=args.seed, n=args.n,
                         vehicle=args.vehicle, out=args.out)
    return cfg, Path(cfg.output.dir), not args.no_plots


def cmd_simulate(args) -> int:
    cfg, out, plots = _config(args)
    ds = run_simulate(cfg, out, plots)
    print(f"{len(ds)} simulations ({ds.n_flagged} flagged) written to {out / 'campaign.csv'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg, out, plots = _config(args)
    path = Path(args.dataset) if args.dataset else out / "campaign.csv"
    res = run_analyze(cfg, load_dataset(cfg, path), out, plots, [path])
    for p, r in res.table.items():
        print(f"{p:>3}  r = {r.r:.4f}  p = {r.p_value:.4f}")
    print(f"quintic R^2 = {res.quintic.r_square:.4f}, spread over a = {res.spread:.1%}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg, out, plots = _config(args)
    train_path = Path(args.train) if args.train else out / "campaign.csv"
    inputs = [train_path]
    test_ds = None
    if args.test:
        inputs.append(Path(args.test))
        test_ds = load_dataset(cfg, Path(args.test))
    res = run_predict(cfg, load_dataset(cfg, train_path), out, plots, test_ds, inputs=inputs)
    print(f"features {','.join(res.features)}: CV R^2 = {res.cv.r_square:.4f}, "
          f"test R^2 = {res.test_r_square:.4f}, RMSE = {res.test_rmse:.5f} L, KL = {res.kl:.4f}")
    return EXIT_OK


def cmd_demo(args) -> int:
    if args.n is not None and args.n < 1:
        raise ConfigError("--n must be >= 1")
    out = Path(args.out or "runs/demo")
    start = time.perf_counter()
    rows = run_demo(out, args.seed, args.n, not args.no_plots, args.cells)
    for row in rows:
        print(f"{row[0]:<14} dominant {row[6]} ({row[7]:.1f}x)  spread {row[10]:.1%}  "
              f"GP CV R^2 {row[14]:.3f}  test R^2 {row[15]:.3f}  KL {row[17]:.3f}")
    print(f"demo finished in {time.perf_counter() - start:.0f} s, summary in {out / 'summary.csv'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"drivefuel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"drivefuel: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
