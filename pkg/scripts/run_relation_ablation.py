#!/usr/bin/env python3
"""Run the relation-knowledge ablation and print its JSON report.

Trains the full model and a no-relations twin per seed on two-hop
neighbor questions, then compares median held-out token accuracy. The
study passes when the full model's median strictly exceeds the ablated
one's. Seeds fan out across processes with --jobs.
"""
import argparse
import functools
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from kgdialog.experiments import (DEFAULT_SEEDS, relation_study,
                                  summarize_relation_runs)


def run_one_seed(seed: int, n_train: int, n_held: int, dim: int,
                 epochs: int, learning_rate: float) -> dict:
    report = relation_study(seeds=(seed,), n_train=n_train, n_held=n_held,
                            dim=dim, epochs=epochs,
                            learning_rate=learning_rate)
    return report["per_seed"][0]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    ap.add_argument("--train-size", type=int, default=64)
    ap.add_argument("--held-size", type=int, default=32)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--learning-rate", type=float, default=3e-3)
    ap.add_argument("--jobs", type=int, default=1,
                    help="worker processes for the per-seed runs")
    args = ap.parse_args(argv)

    worker = functools.partial(run_one_seed, n_train=args.train_size,
                               n_held=args.held_size, dim=args.dim,
                               epochs=args.epochs,
                               learning_rate=args.learning_rate)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            per_seed = list(pool.map(worker, args.seeds))
    else:
        per_seed = [worker(seed) for seed in args.seeds]

    report = summarize_relation_runs(per_seed)
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    print()
    ok = report["median_full"] > report["median_without_relations"]
    print(f"relation ablation: {'PASS' if ok else 'FAIL'} "
          f"(median full {report['median_full']:.4f} vs "
          f"without relations {report['median_without_relations']:.4f})",
          file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
