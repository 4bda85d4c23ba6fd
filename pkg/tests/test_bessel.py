
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import stats

from radialflow.bessel import (BesselSpec, bessel_hit_frequency, bessel_marginal,
                               d3_exit_low_frequency, estimate_c1, exit_time_tail,
                               harmonic_exit_prob, run_comparison_chain,
                               scale_hit_probability, simulate_bessel)
from radialflow.noise import NoiseStream

import oracles


def test_spec_validation():
    with pytest.raises(ValueError):
        BesselSpec(1.0, 1e-3, 1.0, floor=1e-3)
    with pytest.raises(ValueError):
        BesselSpec(-1.0, 1.0, 1.0)


def test_bessel1_hit_frequency():
    p = bessel_hit_frequency(BesselSpec(1.0, 1.0, 10.0), 4000, seed=1)
    assert abs(p.p - oracles.BESSEL1_HIT_T10) < 0.02


def test_bessel3_rarely_hits():
    p = bessel_hit_frequency(BesselSpec(3.0, 1.0, 10.0), 4000, seed=2)
    assert p.p <= 0.01
    # scale-function level: 1e-3 before infinity
    assert p.p <= 3 * scale_hit_probability(3.0, 1.0, 1e-3, 1e12) + 0.002


def test_bessel2_does_not_hit_zero():
    spec = BesselSpec(2.0, 1.0, 1.0, floor=0.0)
    for i in range(1000):
        path = simulate_bessel(spec, NoiseStream(7, i))
        assert not path.hit
        assert path.values.min() > 0


def test_simulate_bessel_record():
    path = simulate_bessel(BesselSpec(1.0, 0.05, 5.0), NoiseStream(1, 3))
    assert path.values[0] == 0.05
    assert len(path.times) == len(path.values)
    if path.hit:
        assert path.hit_time == pytest.approx(path.times[-1])


def test_marginal_matches_bm_norm():
    n = 3
    v = bessel_marginal(BesselSpec(n, 1.0, 1.0, 1e-3, 0.0), 10_000, seed=4)
    # |B_1|^2 for B started at distance 1 is noncentral chi-square(n, 1)
    assert stats.kstest(v ** 2, stats.ncx2(n, 1.0).cdf).statistic < 0.02


def test_scale_hit_examples():
    assert scale_hit_probability(3, 1, 0.1, 10) == pytest.approx(0.9 / 9.9)
    assert scale_hit_probability(3, 0.1, 0.1, 10) == 1.0
    assert scale_hit_probability(3, 10, 0.1, 10) == 0.0
    assert scale_hit_probability(2, 1, 0.1, 10) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        scale_hit_probability(3, 20, 0.1, 10)


@given(st.floats(0.0, 6.0), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_scale_hit_monotone(nu, u, v):
    a, b = 0.5, 4.0
    x, y = sorted((a + u * (b - a), a + v * (b - a)))
    assume(y - x > 1e-6)
    assert scale_hit_probability(nu, x, a, b) >= scale_hit_probability(nu, y, a, b) - 1e-12
    assert scale_hit_probability(nu, x, a, b) >= scale_hit_probability(nu + 0.5, x, a, b) - 1e-12
    assert scale_hit_probability(nu, x, a, b) == pytest.approx(
        oracles.bessel_scale_hit(nu, x, a, b), abs=1e-7)


def test_harmonic_exit_prob():
    for n in (2, 3, 8):
        assert harmonic_exit_prob(0.25, n) == pytest.approx(1.0, abs=1e-15)
        assert harmonic_exit_prob(0.5, n) == 0.0
        xs = np.linspace(0.25, 0.5, 51)
        assert np.all(np.diff([harmonic_exit_prob(x, n) for x in xs]) < 0)
    assert harmonic_exit_prob(0.375, 2) == pytest.approx(oracles.D3_LOW_EXIT_N2, abs=5e-6)
    assert harmonic_exit_prob(0.3, 4) == pytest.approx(
        oracles.drifted_low_exit(0.3, 6.0, 0.25, 0.5), abs=1e-9)
    with pytest.raises(ValueError):
        harmonic_exit_prob(0.6, 2)


def test_d3_exit_frequency():
    p = d3_exit_low_frequency(2, 4000, seed=3)
    assert abs(p.p - oracles.D3_LOW_EXIT_N2) < 0.02


def test_exit_time_tail():
    assert exit_time_tail(3, 100, 0.0).p == 1.0
    assert exit_time_tail(2, 4000, 10 * oracles.dynkin_exit_mean(2, 0, 0.5), seed=3).p < 0.05
    tails = [exit_time_tail(n, 4000, 0.125 / n, seed=3) for n in (2, 4, 8, 16)]
    assert min(t.lo for t in tails) > 0.5
    # nondecreasing up to sampling noise
    assert all(b.hi >= a.lo for a, b in zip(tails, tails[1:]))


def test_estimate_c1_consistent_with_tail():
    c1 = estimate_c1(4, 4000, seed=8)
    assert c1 > 0
    assert exit_time_tail(4, 4000, c1 / 4, seed=9).p >= 2 / 3 - 0.03


def test_comparison_chain():
    ch = run_comparison_chain(2, NoiseStream(5, 0), 1000)
    assert ch.dominated.all()
    assert ch.ordering_holds().all()
    s = ch.s.mean(axis=0)
    assert s[2] <= s[1] <= s[0]
    assert abs(ch.d3_low.mean() - oracles.D3_LOW_EXIT_N2) < 0.04
    with pytest.raises(ValueError):
        run_comparison_chain(1, NoiseStream(5, 0))
