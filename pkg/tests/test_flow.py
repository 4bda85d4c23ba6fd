import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radialflow.flow import (ChunkSource, FlowConfig, TracerCloud, advance_cloud,
                             discretize_region, integrate, refine_cloud, run_flow,
                             scale_solution, step_cloud)
from radialflow.geometry import BallComplement, Cylinder, DriftField, HalfSpace, LateralDisc
from radialflow.harness import simulate_paths

import oracles


def _cfg(n=2, F=0.5, region=None, **kw):
    region = region or HalfSpace(n, 1.0, 4.0)
    return FlowConfig(n, DriftField.constant(F), region, **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(N=0.5)  # threshold 2 exceeds the distance 1
    with pytest.raises(ValueError):
        _cfg(budget=0)
    with pytest.raises(ValueError):
        FlowConfig(3, DriftField.constant(1), HalfSpace(2))
    c = _cfg(T=2.0, dt=1e-3)
    assert FlowConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_discretize_examples():
    c = discretize_region(HalfSpace(1, 1.0), 1)
    assert c.initial.tolist() == [[1.0]]
    s = discretize_region(BallComplement(2, 1.0), 8)
    ang = np.sort(np.mod(np.arctan2(s.initial[:, 1], s.initial[:, 0]), 2 * np.pi))
    np.testing.assert_allclose(np.diff(ang), np.pi / 4, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(s.initial, axis=1), 1.0)
    for n in (2, 3, 6):
        d = discretize_region(LateralDisc(n, 1.0, 3.0), 50)
        assert (d.initial[:, 0] == 1.0).all()
        assert (np.linalg.norm(d.initial[:, 1:], axis=1) <= 3.0 + 1e-12).all()
    cyl = discretize_region(Cylinder((1.0, 0.0, 0.0), 0.5), 64)
    assert all(Cylinder((1.0, 0.0, 0.0), 0.5).distance_from(p) < 1e-12 for p in cyl.initial)
    again = discretize_region(LateralDisc(4, 1.0, 3.0), 50)
    assert again.initial.tobytes() == discretize_region(LateralDisc(4, 1.0, 3.0), 50).initial.tobytes()
    with pytest.raises(ValueError):
        discretize_region(HalfSpace(2), 0)


def test_zero_drift_cloud_unchanged():
    cl = discretize_region(BallComplement(3, 1.0), 20)
    rng = np.random.default_rng(0)
    for _ in range(50):
        cl = advance_cloud(cl, 0.01 * rng.normal(size=3), 1e-4, DriftField.constant(0), 100)
    assert cl.current.tobytes() == cl.initial.tobytes()
    res = run_flow(_cfg(F=0.0, T=0.5))
    assert res.cloud.current.tobytes() == res.cloud.initial.tobytes()


@pytest.mark.parametrize("d,c", [(0.3, 1.0), (1.0, 5.0), (0.02, 0.2)])
def test_frozen_b_radial_closed_form(d, c):
    cl = TracerCloud([0], [[d, 0.0]], [[d, 0.0]], [0.0, 0.0])
    dt, steps = 1e-3, 500
    for _ in range(steps):
        before = cl.distances()[0]
        cl = advance_cloud(cl, [0.0, 0.0], dt, DriftField.constant(c), 100)
        assert cl.distances()[0] >= before
    assert cl.distances()[0] == pytest.approx(math.sqrt(d * d + 2 * c * dt * steps), rel=1e-3)


@given(st.integers(0, 1000), st.floats(0, 20), st.floats(1, 1000))
def test_step_displacement_bound(seed, F, N):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(20, 3))
    b = rng.normal(size=3) * 0.5
    dt = 1e-4
    P0 = P.copy()
    f = DriftField.constant(F)
    step_cloud(P, b, dt, f.code, f.params, 1.0 / N)
    disp = np.linalg.norm(P - P0, axis=1)
    assert (disp <= N * F * dt * (1 + 1e-9) + 1e-15).all()
    assert (np.linalg.norm(P - b, axis=1) >= np.linalg.norm(P0 - b, axis=1)).all()


def _subset_check(cfg, idx, K, path=0):
    cl = discretize_region(cfg.region, cfg.budget)
    src = ChunkSource(cfg.seed, path, cfg.dim, cfg.dt, cfg.chunk, cfg.max_level)
    full = integrate(cl.initial, cl.labels, cfg, src, K, detect=False)
    sub = integrate(cl.initial[idx], cl.labels[idx], cfg, src, K, detect=False)
    return full.P[idx].tobytes() == sub.P.tobytes()


@pytest.mark.parametrize("n", [2, 3])
def test_containment_bit_exact(n):
    cfg = _cfg(n, 2.0, T=1.0, budget=64, chunk=1 << 12)
    idx = np.array([0, 5, 17, 40, 63])
    for path in range(3):
        assert _subset_check(cfg, idx, cfg.steps, path)


def test_zero_drift_half_line_hits():
    cfg = FlowConfig(1, DriftField.constant(0), HalfSpace(1, 1.0), T=10.0, budget=1)
    recs = simulate_paths(cfg, 3000)
    p = np.mean([r.hit for r in recs])
    # hit means B reaches 1 - 1/N; discrete monitoring lowers it slightly
    target = oracles.reflection_hit(1 - cfg.h + 0.5826 * math.sqrt(cfg.dt), 10.0)
    assert abs(p - target) < 0.03
    assert abs(p - 0.752) < 0.03


def test_ball_complement_zero_drift_dynkin():
    # tracer gaps (2 pi / 1024) are below the threshold, so no path slips through
    cfg = FlowConfig(2, DriftField.constant(0), BallComplement(2, 1.0), T=5.0, budget=1024,
                     record_every=1)
    taus = []
    for i in range(400):
        res = run_flow(cfg, cfg.stream(i))
        assert res.hit
        assert res.min_dist[0] == pytest.approx(1.0)
        taus.append(res.tau)
    assert np.mean(taus) == pytest.approx(oracles.dynkin_exit_mean(2, 0, 1 - cfg.h), rel=0.1)


def test_tau_monotone_in_N_and_agreement():
    base = _cfg(2, 0.5, T=4.0, budget=128)
    for i in range(10):
        taus = []
        runs = []
        for N in (10.0, 100.0, 1000.0):
            c = FlowConfig(**{**base.__dict__, "N": N})
            r = run_flow(c, c.stream(i))
            runs.append(r)
            taus.append(r.tau if r.hit else math.inf)
        assert taus[0] <= taus[1] <= taus[2]
        if not runs[0].hit:
            # the distance never got below 1/10, so every truncation agrees
            assert runs[0].cloud.current.tobytes() == runs[1].cloud.current.tobytes()


def test_hit_record_consistency():
    cfg = _cfg(2, 0.3, T=5.0, budget=128)
    for i in range(5):
        r = run_flow(cfg, cfg.stream(i))
        assert r.hit == (r.tau is not None)
        d = json.loads(json.dumps(r.to_dict(downsample=4)))
        assert d["hit"] == r.hit
        if r.hit:
            assert r.closest[0] <= cfg.h
            assert r.min_dist[-1] == r.closest[0]
            assert r.hit_step == round(r.tau / cfg.dt)
            assert r.cloud.terminated
        else:
            assert r.min_dist.min() > cfg.h


def test_scale_identity_and_tau():
    cfg = _cfg(2, 0.3, T=5.0, budget=64)
    r = run_flow(cfg, cfg.stream(1))
    assert scale_solution(r, 1.0) is r
    if r.hit:
        assert scale_solution(r, 2.0).tau == 4 * r.tau
        assert scale_solution(r, 0.5).tau == r.tau / 4


@pytest.mark.parametrize("lam", [2.0, 0.5, 4.0])
def test_scaling_bit_exact(lam):
    cfg = _cfg(2, 1.5, T=2.0, budget=64)
    for i in range(3):
        r = run_flow(cfg, cfg.stream(i))
        img = scale_solution(r, lam)
        sc = cfg.scaled(lam)
        r2 = run_flow(sc, sc.stream(i))
        assert r2.hit == r.hit
        assert r2.cloud.current.tobytes() == img.cloud.current.tobytes()
        assert r2.cloud.b.tobytes() == img.cloud.b.tobytes()
        assert r2.min_dist.tobytes() == img.min_dist.tobytes()
        assert r2.tau == img.tau


def test_refinement_properties():
    cfg = _cfg(2, 0.0, T=2.0, budget=16)
    r = run_flow(cfg, cfg.stream(3))
    rr = refine_cloud(r)
    assert rr.closest[0] <= r.closest[0]
    assert rr.cloud.current.tobytes() == rr.cloud.initial.tobytes()
    assert len(rr.cloud) == len(r.cloud) + 64
    with pytest.raises(ValueError):
        refine_cloud(r, cfg.stream(4))


def test_refinement_converges():
    cfg = _cfg(2, 0.5, T=2.0, budget=64, region=HalfSpace(2, 1.0, 8.0))
    settled = 0
    for i in range(100):
        r = run_flow(cfg, cfg.stream(i))
        prev = r.closest[0]
        ok = False
        for _ in range(4):
            r = refine_cloud(r)
            assert r.closest[0] <= prev
            if prev - r.closest[0] < 1e-3:
                ok = True
                break
            prev = r.closest[0]
        settled += ok
    assert settled >= 90


def test_projection_of_ball_centre_lands_on_sphere():
    from radialflow.flow import project_to_boundary
    reg = BallComplement(3, 2.0)
    q = project_to_boundary(reg, np.zeros((1, 3)))
    assert np.isclose(np.linalg.norm(q), 2.0)
