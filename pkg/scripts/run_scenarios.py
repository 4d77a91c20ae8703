#!/usr/bin/env python3
"""Run the bundled synthetic scenarios and print a comparison table.

For each preset this runs the full discovery pipeline and, where the split
contains novel classes, the two baselines (pure K-means clustering and the
entropy-threshold match-then-cluster baseline at its best threshold over a
9-point grid). Mirrors what the acceptance suite checks, as one readable
report.

Usage: python scripts/run_scenarios.py [--presets s1 s2 ...] [--iters N]
"""

import argparse
import dataclasses
import sys
import time

import numpy as np

from clustermatch import DiscoveryConfig, discover, kmeans_baseline, sweep_entropy_thresholds
from clustermatch.synthgen import PRESETS, generate


def fmt(x):
    return "    -" if x is None else f"{x:.3f}"


def run_preset(name, config):
    scenario = PRESETS[name]
    src, tgt, truth = generate(scenario)
    k = len(scenario.target_class_ids)
    seen = scenario.seen_count

    t0 = time.perf_counter()
    _, report, _ = discover(src, tgt, k, config, truth=truth)
    ours = report.eval_report
    pre = report.pre_finetune_eval
    elapsed = time.perf_counter() - t0

    km_acc = simple_h = None
    if scenario.novel_count > 0:
        km_acc = kmeans_baseline(tgt, k, truth, config).accuracy
        grid = [f * np.log(seen) for f in np.linspace(0.1, 0.9, 9)]
        runs = sweep_entropy_thresholds(src, tgt, k, config, grid, truth=truth)
        simple_h = max(r.eval_report.h_score for _, _, r in runs)

    print(
        f"{name:16s} k={k:<3d} "
        f"seen={fmt(ours.seen_accuracy)} unseen={fmt(ours.unseen_accuracy)} "
        f"H={fmt(ours.h_score)} (pre-finetune H={fmt(pre.h_score)}) "
        f"| simple-best H={fmt(simple_h)} kmeans-acc={fmt(km_acc)} "
        f"[{elapsed:.1f}s]"
    )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--presets", nargs="+", default=sorted(PRESETS),
                        choices=sorted(PRESETS))
    parser.add_argument("--iters", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    config = dataclasses.replace(DiscoveryConfig(), iterations=args.iters, seed=args.seed)
    print(f"config: tau={config.tau} lambda={config.lam} iters={config.iterations} "
          f"batch={config.batch_size} adapter={config.adapter_kind}")
    for name in args.presets:
        run_preset(name, config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
