import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radialflow.noise import BrownianPath, NoiseStream, brownian_path
from radialflow.occupation import (annulus_edges, annulus_occupations, ball_sup_surrogate,
                                   ct_identity_check, lateral_total_occupation,
                                   occupation_steps, occupation_tail, occupation_time,
                                   r_collapse_ks)

import oracles


def test_inside_and_outside():
    t = np.linspace(0, 2.0, 201)
    inside = BrownianPath(t, np.full((201, 2), 0.1))
    assert occupation_time(inside, [0, 0], 1.0) == pytest.approx(2.0)
    assert occupation_steps(inside, [0, 0], 1.0) == 200
    assert occupation_time(inside, [5, 5], 1.0) == 0.0
    with pytest.raises(ValueError):
        occupation_time(inside, [0, 0], 0.0)
    with pytest.raises(ValueError):
        occupation_time(inside, [0, 0, 0], 1.0)


@given(st.integers(0, 5000), st.integers(1, 4), st.integers(1, 4))
def test_annulus_additivity_and_monotonicity(idx, dim, kmax):
    path = brownian_path(NoiseStream(2, idx, dim, 0.05), 800)
    c = path.positions[0] + 0.3
    h = annulus_occupations(path, c, annulus_edges(kmax))
    assert h.steps.sum() == path.steps
    assert h.steps[:-1].sum() == occupation_steps(path, c, annulus_edges(kmax)[-1])
    assert 0 <= h.total <= path.horizon * (1 + 1e-12)  # exact in steps, rounded in time
    short = BrownianPath(path.times[:401], path.positions[:401])
    assert occupation_time(short, c, 1.0) <= occupation_time(path, c, 1.0)


def test_green_mean_in_five_dimensions():
    L, capped = lateral_total_occupation(6, 1.0, 5000, seed=3, dt=1e-4)
    assert not capped.any()
    assert L.mean() == pytest.approx(oracles.OCC_MEAN_D5, rel=0.05)


def test_tail_basics():
    with pytest.raises(ValueError):
        occupation_tail(3, 1.0, [1.0], 10)
    tc = occupation_tail(6, 1.0, [0.0, 1e-9], 500, seed=1)
    assert tc.intervals[0].p == 1.0
    assert tc.in_domain.tolist() == [False, False]
    buf = io.StringIO()
    tc.to_csv(buf)
    assert buf.getvalue().startswith("n,r,s,exceedances")


def test_tail_rate_increases_with_n():
    rates = [occupation_tail(n, 1.0, None, 3000, seed=n).rate for n in (4, 8, 16)]
    assert rates[0] > 0
    assert rates[0] < rates[1] < rates[2]


def test_r_collapse_small():
    assert r_collapse_ks(8, 3000, seed=4) < 0.05


def test_ct_identity_small():
    s, tau, L = ct_identity_check(2, 3000, dt=1e-4, seed=5)
    assert s.tau_unfinished == 0 and s.L_capped == 0
    assert s.ks < 0.04
    assert s.mean_tau == pytest.approx(0.5, rel=0.05)
    assert s.mean_L == pytest.approx(0.5, rel=0.05)
    buf = io.StringIO()
    s.to_csv(buf)
    assert len(buf.getvalue().splitlines()) == 2


def test_ball_sup_surrogate():
    vals, rho, frac = ball_sup_surrogate(4, 1, 5.0, 20, centers=100, seed=1)
    assert vals.shape == (20, 100)
    assert frac >= 0.99
    assert rho > 0
