"""Train the full detector on the synthetic fixture for several seeds and print its metrics."""

import argparse
import json

import numpy as np

from redlamp.experiments import FixtureRun, run_variant


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=FixtureRun.max_epochs)
    p.add_argument("--stride", type=int, default=FixtureRun.train_stride)
    p.add_argument("--variant", default="redlamp")
    args = p.parse_args()
    run = FixtureRun(train_stride=args.stride, max_epochs=args.epochs)
    rows = []
    for seed in args.seeds:
        rows.append(run_variant(seed, args.variant, 0.0, run))
        print(json.dumps(rows[-1]), flush=True)
    for key in ("ucr_accuracy", "vus_pr", "vus_roc", "range_fscore"):
        print(f"mean {key}: {np.mean([r[key] for r in rows]):.4f}")


if __name__ == "__main__":
    main()
