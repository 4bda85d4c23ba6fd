"""Sweep C for the not-hitting transition bound with F = C n (pilot, then confirm)."""
import argparse

from radialflow.geometry import DriftField
from radialflow.regime import NOT_HITTING, LadderConfig, ladder_ensemble, step_probability

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--grid", type=float, nargs="+", default=[0.5, 1, 2, 5, 10, 20, 50])
ap.add_argument("--ns", type=int, nargs="+", default=[2, 4])
ap.add_argument("--pilot", type=int, default=500)
ap.add_argument("--full", type=int, default=10_000)
ap.add_argument("--seed", type=int, default=106)
args = ap.parse_args()

target = 2 / 3 - 0.02
print("C n ladders p lo hi")
for C in args.grid:
    ests = {}
    for n in args.ns:
        cfg = LadderConfig(n, DriftField.constant(C * n), NOT_HITTING, seed=args.seed)
        ests[n] = step_probability(ladder_ensemble(cfg, args.pilot)).interval
        print(C, n, args.pilot, f"{ests[n].p:.4f} {ests[n].lo:.4f} {ests[n].hi:.4f}", flush=True)
    if min(e.p for e in ests.values()) < 2 / 3:
        continue
    done = True
    for n in args.ns:
        cfg = LadderConfig(n, DriftField.constant(C * n), NOT_HITTING, seed=args.seed)
        ci = step_probability(ladder_ensemble(cfg, args.full)).interval
        print(C, n, args.full, f"{ci.p:.4f} {ci.lo:.4f} {ci.hi:.4f}", flush=True)
        done &= ci.p >= target
    if done:
        print(f"C* = {C}")
        break
else:
    print("no grid value confirmed")
