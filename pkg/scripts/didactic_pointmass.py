"""Train CHI on the point-mass wall task and print how the plan distribution tightens.

    python scripts/didactic_pointmass.py --seed 0 --episodes 30 --out runs/didactic
"""

import argparse

from chi.harness import RunConfig, run


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--out", default="runs/didactic")
    args = p.parse_args()

    cfg = RunConfig(agent="chi", seed=args.seed, episodes=args.episodes, eval_every=1)
    result = run(cfg, args.out)
    print(f"{'episode':>7} {'train':>8} {'eval':>8} {'policy std':>10} {'KL(plan||init)':>15} {'seconds':>8}")
    for r in result.rows:
        print(f"{r.episode:>7d} {r.train_return:>8.2f} {r.eval_return:>8.2f} {r.mean_policy_std:>10.3f} {r.mean_kl:>15.2f} {r.wall_seconds:>8.1f}")
    print(f"metrics in {result.out_dir / 'metrics.csv'}")


if __name__ == "__main__":
    main()
