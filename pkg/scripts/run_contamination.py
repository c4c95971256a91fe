"""VUS-PR of the full and binary variants as the training set is contaminated."""

import argparse
import json

import numpy as np

from redlamp.experiments import FixtureRun, run_variant


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--ratios", type=float, nargs="+", default=[0.0, 5.0])
    p.add_argument("--variants", nargs="+", default=["redlamp", "binary"])
    args = p.parse_args()
    table = {}
    for variant in args.variants:
        for ratio in args.ratios:
            rows = [run_variant(seed, variant, ratio, FixtureRun()) for seed in args.seeds]
            for r in rows:
                print(json.dumps(r), flush=True)
            table[variant, ratio] = np.mean([r["vus_pr"] for r in rows])
    base = args.ratios[0]
    print("\nvariant      ratio  mean VUS-PR  drop vs first ratio")
    for (variant, ratio), v in table.items():
        ref = table[variant, base]
        print(f"{variant:<12} {ratio:5.1f}  {v:.4f}       {(ref - v) / ref:+.3f}")


if __name__ == "__main__":
    main()
