"""Compare the full detector with its ablated variants on the synthetic fixture."""

import argparse
import json

import numpy as np

from redlamp.experiments import VARIANTS, FixtureRun, run_variant


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    p.add_argument("--out", help="append JSON lines here as runs finish")
    args = p.parse_args()
    means = {}
    for variant in args.variants:
        rows = [run_variant(seed, variant, 0.0, FixtureRun()) for seed in args.seeds]
        for r in rows:
            line = json.dumps(r)
            print(line, flush=True)
            if args.out:
                with open(args.out, "a") as fh:
                    fh.write(line + "\n")
        means[variant] = np.mean([r["vus_pr"] for r in rows])
    print("\nvariant      mean VUS-PR")
    for variant, v in sorted(means.items(), key=lambda kv: -kv[1]):
        print(f"{variant:<12} {v:.4f}")


if __name__ == "__main__":
    main()
