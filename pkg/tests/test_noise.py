import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from radialflow.noise import (BrownianPath, NoiseStream, PathBuffer, ball_exit_times,
                              brownian_path, generate_increments, running_max_abs,
                              sup_abs_exceedance, total_occupation)

import oracles


def _two_sided_exit(level, T, terms=50):
    """P(sup_{t<=T} |W_t| >= level) from the eigenfunction series."""
    s = sum((-1) ** k / (2 * k + 1) * math.exp(-(2 * k + 1) ** 2 * math.pi ** 2 * T / (8 * level ** 2))
            for k in range(terms))
    return 1.0 - 4.0 / math.pi * s


def test_zero_dt_gives_zero_increments():
    inc = generate_increments(NoiseStream(3, 0, 2, 0.0), 100)
    assert not inc.any()


def test_increment_mean_clt():
    inc = generate_increments(NoiseStream(11, 0, 1, 1.0), 1_000_000)
    assert abs(inc[:, 0].mean()) < 0.004


def test_determinism_and_purity():
    s = NoiseStream(5, 7, 3, 1e-3)
    a = generate_increments(s, 500)
    b = generate_increments(s, 500)
    assert a.tobytes() == b.tobytes()
    assert generate_increments(s.with_path(8), 500).tobytes() != a.tobytes()
    assert generate_increments(NoiseStream(6, 7, 3, 1e-3), 500).tobytes() != a.tobytes()


@given(st.integers(1, 400), st.integers(1, 400), st.integers(0, 2**40))
def test_segments_concatenate(k1, k2, seed):
    s = NoiseStream(seed, 1, 2, 1e-2)
    whole = generate_increments(s, k1 + k2)
    parts = np.vstack([generate_increments(s, k1), generate_increments(s, k2, k1)])
    assert whole.tobytes() == parts.tobytes()


def test_covariance_identity():
    inc = generate_increments(NoiseStream(2, 0, 3, 1.0), 100_000)
    assert np.abs(np.cov(inc.T) - np.eye(3)).max() < 0.01


def test_step_schedule():
    s = NoiseStream(1, 0, 1, (1.0, 4.0, 0.25))
    p = brownian_path(s, 3)
    np.testing.assert_array_equal(p.times, [0, 1, 5, 5.25])
    with pytest.raises(ValueError):
        generate_increments(s, 4)


def test_path_dump_roundtrip(tmp_path):
    p = brownian_path(NoiseStream(9, 2, 3, 1e-3), 257, start=[1.0, 2.0, 3.0])
    assert p.positions[0].tolist() == [1.0, 2.0, 3.0]
    f = tmp_path / "p.bin"
    p.dump(f)
    q = BrownianPath.load(f)
    assert q.positions.tobytes() == p.positions.tobytes()
    np.testing.assert_allclose(q.times, p.times, rtol=1e-12)


def test_path_buffer_matches_stored_path():
    s = NoiseStream(4, 3, 2, 1e-3)
    buf = PathBuffer(s, chunk=64)
    buf.ensure(10)
    buf.ensure(300)
    assert buf.path(300).positions.tobytes() == brownian_path(s, 300).positions.tobytes()


def test_running_max_abs():
    flat = BrownianPath(np.arange(5.0), np.zeros((5, 2)))
    assert running_max_abs(flat, 1) == 0.0
    with pytest.raises(IndexError):
        running_max_abs(flat, 2)


def test_sup_abs_exceedance_against_series():
    dt = 1e-4
    # discrete monitoring misses crossings; the standard continuity correction
    # shifts the barrier by 0.5826 sqrt(dt)
    target = _two_sided_exit(1.0 + 0.5826 * math.sqrt(dt), 1.0)
    p = sup_abs_exceedance(21, 20_000, 1.0, dt, 1.0)
    assert abs(p - target) < 0.01
    assert p < _two_sided_exit(1.0, 1.0)


def test_one_sided_sup_below_gaussian_bound():
    n, dt = 17, 1e-4
    x = 1 / (8 * (n - 1))
    steps = int(round(x / dt))
    hits = 0
    trials = 4000
    for i in range(trials):
        w = np.cumsum(generate_increments(NoiseStream(31, i, 1, dt), steps)[:, 0])
        hits += w.max() >= 1 / 8
    bound = 4 / math.sqrt(math.pi) / math.sqrt(n - 1) * math.exp(-1)
    assert hits / trials <= bound
    assert hits / trials == pytest.approx(oracles.reflection_hit(1 / 8, x), abs=0.03)


def test_exit_time_means_dynkin():
    for n in (1, 2, 3):
        tau = ball_exit_times(n, 1.0, np.uint64(5), 0, 3000, 1e-4, 200_000, True)
        assert np.isfinite(tau).all()
        assert tau.mean() == pytest.approx(oracles.dynkin_exit_mean(n), rel=0.05)


def test_total_occupation_green_mean():
    L, capped = total_occupation(5, 1.0, 1.5, np.uint64(3), 0, 4000, 1e-4, 200_000)
    assert not capped.any()
    assert L.mean() == pytest.approx(oracles.OCC_MEAN_D5, rel=0.05)


def test_reflection_oracle_sanity():
    assert oracles.reflection_hit(1.0, 1.0) == pytest.approx(2 * norm.cdf(-1.0))
