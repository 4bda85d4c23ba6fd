"""Hitting estimates over F = c n^alpha on the half-space; writes CSV to stdout."""
import argparse
import json
import sys

from radialflow.harness import phase_sweep

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--ns", type=int, nargs="+", default=[2, 4, 8])
ap.add_argument("--cs", type=float, nargs="+", default=[0.005, 0.02, 0.05, 20.0])
ap.add_argument("--alphas", type=float, nargs="+", default=[0.75, 1.0])
ap.add_argument("--paths", type=int, default=100)
ap.add_argument("--T", type=float, default=10.0)
ap.add_argument("--budget", type=int, default=64)
ap.add_argument("--workers", type=int, default=1)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

tab = phase_sweep(args.ns, args.cs, args.alphas, args.paths, seed=args.seed, T=args.T,
                  budget=args.budget, workers=args.workers)
tab.to_csv(sys.stdout)
print(json.dumps(tab.trend(), sort_keys=True), file=sys.stderr)
