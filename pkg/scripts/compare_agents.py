"""Run CHI, SAC and CEM over several seeds on the point-mass task and print the median summary.

    python scripts/compare_agents.py --seeds 0,1,2,3,4 --out runs/compare
"""

import argparse
from pathlib import Path

from chi.harness import compare, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--episodes", type=int, default=None, help="override the episode count of every config")
    p.add_argument("--eval-every", type=int, default=None, help="override the evaluation cadence")
    p.add_argument("--out", default="runs/compare")
    args = p.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    configs = [load_config(CONFIGS / f"pointmass_{agent}.json").with_overrides(episodes=args.episodes, eval_every=args.eval_every) for agent in ("chi", "sac", "cem")]
    result = compare(configs, seeds, Path(args.out))
    print(result.table(), end="")
    for name, summary in result.agents.items():
        curve = " ".join(f"{m:.1f}" for m in summary.median)
        print(f"{name} median eval curve: {curve}")


if __name__ == "__main__":
    main()
