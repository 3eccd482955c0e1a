"""Swing-up on the pendulum with the default CHI settings.

    python scripts/pendulum.py --episodes 20 --out runs/pendulum
"""

import argparse
from pathlib import Path

from chi.harness import load_config, run

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "pendulum_chi.json"


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--agent", choices=["chi", "sac", "cem"], default="chi")
    p.add_argument("--out", default="runs/pendulum")
    args = p.parse_args()

    cfg = load_config(CONFIG).with_overrides(seed=args.seed, episodes=args.episodes, agent=args.agent, eval_every=1)
    for r in run(cfg, args.out).rows:
        print(f"episode {r.episode:3d}  train {r.train_return:9.2f}  eval {r.eval_return:9.2f}  nll {r.ensemble_nll}")


if __name__ == "__main__":
    main()
