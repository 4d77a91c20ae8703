#!/usr/bin/env python3
"""Sweep the matching threshold on a preset and print H-score per value.

Usage: python scripts/tau_sensitivity.py [--preset s1] [--factors 0.5 0.75 1.0 1.25 1.5]
"""

import argparse
import dataclasses
import sys

from clustermatch import DiscoveryConfig, discover
from clustermatch.synthgen import PRESETS, generate


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", default="s1", choices=sorted(PRESETS))
    parser.add_argument("--factors", nargs="+", type=float,
                        default=[0.5, 0.75, 1.0, 1.25, 1.5])
    parser.add_argument("--iters", type=int, default=1000)
    args = parser.parse_args(argv)

    scenario = PRESETS[args.preset]
    src, tgt, truth = generate(scenario)
    k = len(scenario.target_class_ids)
    base = DiscoveryConfig(iterations=args.iters)
    scores = {}
    for factor in args.factors:
        tau = base.tau * factor
        config = dataclasses.replace(base, tau=tau)
        _, report, _ = discover(src, tgt, k, config, truth=truth)
        scores[tau] = report.eval_report.h_score
        print(f"tau={tau:.3f} ({factor:.2f}x)  H={scores[tau]:.4f}")
    spread = max(scores.values()) - min(scores.values())
    print(f"max variation: {spread:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
