"""Command line entry point: ``chi run`` for one training run, ``chi compare`` for a seed sweep."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import OUTPUT_ROOT_ENV, RunConfig, RunFailed, compare, load_config, resolve_out_dir, run


def _seeds(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every episode")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one agent and write metrics and checkpoints")
    r.add_argument("--config", type=Path, help="JSON run config; flags below override its keys")
    r.add_argument("--env", choices=["pointmass", "pendulum"])
    r.add_argument("--agent", choices=["chi", "sac", "cem"])
    r.add_argument("--seed", type=int)
    r.add_argument("--episodes", type=int)
    r.add_argument("--out-dir", help=f"run directory; relative paths resolve under ${OUTPUT_ROOT_ENV} if set")
    r.add_argument("--horizon", type=int)
    r.add_argument("--iters", type=int)
    r.add_argument("--samples", type=int)
    r.add_argument("--kappa", type=float)
    r.add_argument("--elite-fraction", type=float)

    c = sub.add_parser("compare", help="run several configs over several seeds and summarise")
    c.add_argument("--configs", type=Path, nargs="+", required=True)
    c.add_argument("--seeds", type=_seeds, required=True, help="comma-separated, e.g. 0,1,2")
    c.add_argument("--out-dir", default="compare", help=f"sweep directory; relative to ${OUTPUT_ROOT_ENV} if set")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(
        env=args.env,
        agent=args.agent,
        seed=args.seed,
        episodes=args.episodes,
        out_dir=args.out_dir,
        **{
            "plan.horizon": args.horizon,
            "plan.iterations": args.iters,
            "plan.samples": args.samples,
            "plan.kappa": args.kappa,
            "plan.elite_fraction": args.elite_fraction,
        },
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = config_from_args(args)
            result = run(cfg)
            last = result.rows[-1] if result.rows else None
            print(f"wrote {result.out_dir / 'metrics.csv'}")
            if last is not None:
                print(f"episode {last.episode}: train return {last.train_return:.3f}, eval return {last.eval_return}")
        else:
            configs = [load_config(p) for p in args.configs]
            out = resolve_out_dir(RunConfig(out_dir=args.out_dir))
            result = compare(configs, args.seeds, out)
            print(result.table(), end="")
    except ValueError as exc:
        print(f"chi: error: {exc}", file=sys.stderr)
        return 2
    except RunFailed as exc:
        print(f"chi: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
