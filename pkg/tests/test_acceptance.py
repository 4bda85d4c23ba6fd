"""Acceptance criteria at full size.  Each test prints one ``C<k> PASS/FAIL`` line.

Runtime is roughly ten minutes on one core; C5 dominates.
"""
import math
import os

import numpy as np

from radialflow.bessel import BesselSpec, bessel_hit_frequency, d3_exit_low_frequency
from radialflow.cli import main
from radialflow.flow import (ChunkSource, FlowConfig, discretize_region, integrate, run_flow,
                             scale_solution)
from radialflow.geometry import BallComplement, DriftField, HalfSpace
from radialflow.harness import estimate_hitting_probability, hitting_curve, simulate_paths
from radialflow.occupation import ct_identity_check, occupation_tail, r_collapse_ks
from radialflow.pathcover import cover_scaling_study
from radialflow.regime import (HITTING, NOT_HITTING, LadderConfig, drift_accumulators,
                               ladder_ensemble, mean_step, step_probability)

import oracles

ZERO = DriftField.constant(0.0)


def test_c1_gamblers_ruin(criterion):
    lads = ladder_ensemble(LadderConfig(2, ZERO, HITTING, dt=1e-4, seed=101), 100_000)
    est = step_probability(lads)
    ok = 0.318 <= est.p <= 0.348
    assert criterion(1, ok, f"hitting ladder F=0 n=2: p(up) = {est.p:.4f} "
                            f"(need [0.318, 0.348], target 1/3; {est.interval.trials} ladders)")


def test_c2_harmonic_exit(criterion):
    pr = d3_exit_low_frequency(2, 10_000, seed=102)
    ok = abs(pr.p - oracles.D3_LOW_EXIT_N2) <= 0.02
    assert criterion(2, ok, f"D3 exit at 1/4 from 3/8, n=2: {pr.p:.4f} "
                            f"(target {oracles.D3_LOW_EXIT_N2} +- 0.02)")


def test_c3_ciesielski_taylor(criterion):
    parts, ok = [], True
    for n in (1, 2, 3):
        s, _, _ = ct_identity_check(n, 10_000, 1e-4, seed=103 + 10 * n)
        good = (s.ks < 0.02 and abs(s.mean_tau * n - 1) < 0.03 and abs(s.mean_L * n - 1) < 0.03
                and s.tau_unfinished == 0 and s.L_capped == 0)
        ok &= good
        parts.append(f"n={n} KS={s.ks:.4f} E[tau]={s.mean_tau:.4f} E[L]={s.mean_L:.4f}")
    assert criterion(3, ok, "; ".join(parts) + " (need KS < 0.02, means within 3% of 1/n)")


def test_c4_bessel_dichotomy(criterion):
    p1 = bessel_hit_frequency(BesselSpec(1.0, 1.0, 10.0, 1e-3, 1e-3), 10_000, seed=104).p
    p3 = bessel_hit_frequency(BesselSpec(3.0, 1.0, 10.0, 1e-3, 1e-3), 10_000, seed=105).p
    ok = abs(p1 - 0.75) <= 0.03 and p3 <= 0.01
    assert criterion(4, ok, f"nu=1: {p1:.4f} (0.75 +- 0.03); nu=3: {p3:.4f} (<= 0.01)")


def c5_sweep(grid=(0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0), pilot=500, full=10_000, seed=106):
    """Smallest grid ``C`` whose pilot clears 2/3 for n = 2 and 4, confirmed at full size.

    Returns ``(C, {n: p}, log)``; ``C`` is None if no grid value confirms.
    """
    log = []
    target = 2 / 3 - 0.02

    def p_up(n, C, paths):
        cfg = LadderConfig(n, DriftField.constant(C * n), NOT_HITTING, seed=seed)
        return step_probability(ladder_ensemble(cfg, paths)).p

    for C in grid:
        pil = {n: p_up(n, C, pilot) for n in (2, 4)}
        log.append((C, "pilot", pil))
        if min(pil.values()) < 2 / 3:
            continue
        conf = {}
        for n in (2, 4):
            conf[n] = p_up(n, C, full)
            if conf[n] < target:
                break
        log.append((C, "full", conf))
        if len(conf) == 2 and min(conf.values()) >= target:
            return C, conf, log
    return None, {}, log


def test_c5_not_hitting_transition(criterion):
    C, ps, log = c5_sweep()
    tried = ", ".join(f"C={c} {kind} " + "/".join(f"{p:.3f}" for p in v.values())
                      for c, kind, v in log)
    ok = C is not None and C <= 50
    detail = (f"C*={C}: p(up) n=2 {ps[2]:.4f}, n=4 {ps[4]:.4f} (need >= {2/3 - 0.02:.4f})"
              if ok else "no grid value confirmed")
    assert criterion(5, ok, f"{detail}; sweep: {tried}")


def test_c6_hitting_regime(criterion):
    cfg = FlowConfig(2, DriftField.constant(0.3), HalfSpace(2, 1.0, 8.0), N=100.0, T=50.0,
                     budget=256, seed=107)
    ests, recs = hitting_curve(cfg, (10.0, 25.0, 50.0), 1000)
    ps = [e.p for e in ests]
    per_path = all((r.tau <= t) <= (r.tau <= u) for r in recs if r.hit
                   for t, u in ((10, 25), (25, 50)))
    mono = per_path and ps == sorted(ps)
    ok = mono and ps[-1] >= 0.9
    assert criterion(6, ok, f"p(T=10,25,50) = {ps[0]:.3f}, {ps[1]:.3f}, {ps[2]:.3f}; "
                            f"monotone={mono}; need p(50) >= 0.9, but sup B1 >= 0.99 is "
                            f"necessary and has probability {oracles.HALF_SPACE_CEILING_T50}")


def test_c7_no_hit_regime(criterion):
    cfg = FlowConfig(2, DriftField.constant(50.0), BallComplement(2, 1.0), T=10.0, budget=256,
                     seed=108)
    e = estimate_hitting_probability(cfg, 1000)
    m, lo, hi = mean_step(ladder_ensemble(
        LadderConfig(2, DriftField.constant(50.0), NOT_HITTING, seed=109), 10_000))
    ok = e.p <= 0.01 and lo > 0
    assert criterion(7, ok, f"hit frequency {e.p:.4f} over {e.paths} paths (<= 0.01); "
                            f"E[X] = {m:.4f}, 95% CI [{lo:.4f}, {hi:.4f}] (> 0)")


def test_c8_cover_scaling(criterion):
    radii = (math.e, math.e ** 2)
    tab = cover_scaling_study((4, 16, 64), 100.0, radii, 200, seed=110)
    slope = tab.slopes[64]
    inc = all([c.mean for c in tab.cells if c.r == r] ==
              sorted({c.mean for c in tab.cells if c.r == r}) for r in radii)
    ok = abs(slope + 2) <= 0.2 and inc
    counts = "; ".join(f"r=e^{k + 1}: " + ", ".join(f"{c.mean:.1f}" for c in tab.cells if c.r == r)
                       for k, r in enumerate(radii))
    assert criterion(8, ok, f"slope at n=64 {slope:.3f} (-2 +- 0.2); counts over n=4,16,64 "
                            f"{counts}; strictly increasing={inc}")


def test_c9_occupation_tail(criterion):
    rates = [occupation_tail(n, 1.0, None, 10_000, seed=111 + n).rate for n in (4, 8, 16)]
    ks = {n: r_collapse_ks(n, 10_000, seed=130 + n) for n in (4, 8, 16)}
    inc = rates[0] > 0 and rates[0] < rates[1] < rates[2]
    ok = inc and max(ks.values()) < 0.05
    assert criterion(9, ok, "rates n=4,8,16: " + ", ".join(f"{r:.3f}" for r in rates) +
                     "; r-collapse KS " + ", ".join(f"n={n} {v:.4f}" for n, v in ks.items()) +
                     " (< 0.05)")


def c10_sweep(cs=(0.05, 0.025, 0.0125), paths=1000, seed=112):
    log = []
    for c in cs:
        cfg = LadderConfig(16, DriftField.constant(c * 16 ** 0.75), HITTING, seed=seed)
        acc = [drift_accumulators(cfg, i) for i in range(paths)]
        frac = sum(a.vertical <= 0.125 for a in acc) / paths
        log.append((c, frac))
        if frac >= 0.99:
            return c, frac, log
    return None, None, log


def test_c10_drift_accumulator(criterion):
    c, frac, log = c10_sweep()
    tried = ", ".join(f"c={a}: {f:.3f}" for a, f in log)
    ok = c is not None
    assert criterion(10, ok, f"c*={c}; fraction with D1 <= 1/8 over 1000 paths: {tried} "
                             f"(need >= 0.99)")


def _run_cli(tmp, sub, argv):
    out = os.path.join(tmp, sub)
    assert main(argv + ["--out", out]) == 0
    (d,) = os.listdir(out)
    files = {}
    for name in sorted(os.listdir(os.path.join(out, d))):
        if name != "manifest.json":
            with open(os.path.join(out, d, name), "rb") as fp:
                files[name] = fp.read()
    return files


def test_c11_structural(criterion, tmp_path, capsys):
    checks = {}
    # containment: a subset cloud flows exactly as inside the full cloud
    ok = True
    for n in (2, 3):
        cfg = FlowConfig(n, DriftField.constant(2.0), HalfSpace(n, 1.0, 8.0), T=1.0, budget=64,
                         chunk=1 << 12)
        cl = discretize_region(cfg.region, cfg.budget)
        idx = np.array([0, 5, 17, 40, 63])
        for path in range(3):
            src = ChunkSource(cfg.seed, path, n, cfg.dt, cfg.chunk, cfg.max_level)
            full = integrate(cl.initial, cl.labels, cfg, src, cfg.steps, detect=False)
            sub = integrate(cl.initial[idx], cl.labels[idx], cfg, src, cfg.steps, detect=False)
            ok &= full.P[idx].tobytes() == sub.P.tobytes()
    checks["containment"] = ok
    # scaling: the rescaled solution equals the run driven by the rescaled noise
    ok = True
    cfg = FlowConfig(2, DriftField.constant(1.5), HalfSpace(2, 1.0, 8.0), T=2.0, budget=64)
    for lam in (2.0, 0.5, 4.0):
        sc = cfg.scaled(lam)
        for i in range(3):
            r = run_flow(cfg, cfg.stream(i))
            img = scale_solution(r, lam)
            r2 = run_flow(sc, sc.stream(i))
            ok &= (r2.hit == r.hit and r2.tau == img.tau
                   and r2.cloud.current.tobytes() == img.cloud.current.tobytes()
                   and r2.min_dist.tobytes() == img.min_dist.tobytes())
    checks["scaling"] = ok
    # tau^(N) nondecreasing in N, path by path
    ok = True
    for i in range(20):
        taus = []
        for N in (10.0, 100.0, 1000.0):
            c = FlowConfig(2, DriftField.constant(0.5), HalfSpace(2, 1.0, 8.0), N=N, T=4.0,
                           budget=128)
            r = run_flow(c, c.stream(i))
            taus.append(r.tau if r.hit else math.inf)
        ok &= taus == sorted(taus)
    checks["tau monotone"] = ok
    # ladder bookkeeping
    lads = (ladder_ensemble(LadderConfig(2, DriftField.constant(1.0), HITTING, max_stages=4), 30)
            + ladder_ensemble(LadderConfig(2, DriftField.constant(3.0), NOT_HITTING,
                                           max_stages=4), 30))
    checks["bookkeeping"] = all(lad.bookkeeping_holds() for lad in lads)
    # determinism: reruns and worker counts
    hc = FlowConfig(2, DriftField.constant(0.3), HalfSpace(2, 1.0, 8.0), T=3.0, seed=5)
    a = simulate_paths(hc, 16, workers=1)
    checks["determinism"] = (a == simulate_paths(hc, 16, workers=1)
                             == simulate_paths(hc, 16, workers=2))
    argv = ["hitprob", "paths=16", "T=3.0", "F=0.3", "--seed", "5"]
    lad = ["ladder", "n=2", "F=1.0", "stages=3", "paths=40"]
    checks["determinism"] &= (_run_cli(tmp_path, "a", argv + ["--workers", "1"])
                              == _run_cli(tmp_path, "b", argv + ["--workers", "1"])
                              == _run_cli(tmp_path, "c", argv + ["--workers", "2"]))
    checks["determinism"] &= (_run_cli(tmp_path, "d", lad + ["--workers", "1"])
                              == _run_cli(tmp_path, "e", lad + ["--workers", "3"]))
    capsys.readouterr()
    ok = all(checks.values())
    assert criterion(11, ok, ", ".join(f"{k}: {'exact' if v else 'BROKEN'}"
                                       for k, v in checks.items()))
