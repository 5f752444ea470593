"""Accuracy against the number of ways (N = 5..10) on the benchmark store.

Writes CSV to stdout: n_way, fused accuracy, its 95% half-width, and the four
single-branch accuracies.
"""

import argparse

from tsjm.episodic import BRANCHES, EvalConfig, nway_sweep
from tsjm.presets import benchmark_store


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--k-shot", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    store = benchmark_store(args.seed)
    cfg = EvalConfig(k_shot=args.k_shot, episodes=args.episodes, seed=args.seed, threads=args.threads)
    print("n_way,fused,ci95," + ",".join(BRANCHES))
    for r in nway_sweep(store, cfg, range(5, 11)):
        branches = ",".join(f"{r.branch_accuracies[b]:.4f}" for b in BRANCHES)
        print(f"{r.config['n_way']},{r.mean_accuracy:.4f},{r.ci95_halfwidth:.4f},{branches}")


if __name__ == "__main__":
    main()
