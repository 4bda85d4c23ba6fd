"""Sequential cover counts of the lateral path: table and fitted slopes."""
import argparse
import math
import sys

from radialflow.pathcover import cover_scaling_study

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--ns", type=int, nargs="+", default=[4, 16, 64])
ap.add_argument("--ks", type=float, nargs="+", default=[1, 2], help="radii r = e^k")
ap.add_argument("--T", type=float, default=100.0)
ap.add_argument("--paths", type=int, default=200)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

tab = cover_scaling_study(args.ns, args.T, [math.exp(k) for k in args.ks], args.paths, args.seed)
tab.to_csv(sys.stdout)
for n, s in tab.slopes.items():
    print(f"n={n}: slope of log count vs log r = {s:.3f}", file=sys.stderr)
