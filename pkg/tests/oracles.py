"""Independent reference values, computed without the package under test.

Closed forms come from the reflection principle, scale functions, Dynkin's
formula, and the Newtonian Green's function; the quadratures below use only
scipy.  Frozen constants were produced by these functions and are checked
against them in ``test_oracles.py``.
"""
import math

from scipy import integrate, special


def reflection_hit(level: float, T: float) -> float:
    """P(sup_{t<=T} W_t >= level)."""
    return math.erfc(level / math.sqrt(2.0 * T))


def gambler_up(x: float, a: float, b: float) -> float:
    """P(BM from x hits b before a)."""
    return (x - a) / (b - a)


def drifted_low_exit(x: float, mu: float, a: float, b: float) -> float:
    """P(dX = mu dt + dW from x leaves [a, b] through a), by quadrature of the scale density."""
    dens = lambda y: math.exp(-2.0 * mu * y)  # noqa: E731
    top = integrate.quad(dens, x, b)[0]
    return top / integrate.quad(dens, a, b)[0]


def dynkin_exit_mean(n: int, r0: float = 0.0, radius: float = 1.0) -> float:
    """E[exit time of n-dim BM from the centred ball] from |x_0| = r0."""
    return (radius * radius - r0 * r0) / n


def green_occupation_mean(d: int, r: float) -> float:
    """E[total time of d-dim BM (d >= 3) from 0 in B_r(0)] = int_{B_r} G(0, y) dy."""
    c = special.gamma(d / 2 - 1) / (2 * math.pi ** (d / 2))
    area = 2 * math.pi ** (d / 2) / special.gamma(d / 2)
    return integrate.quad(lambda s: c * s ** (2 - d) * area * s ** (d - 1), 0, r)[0]


def bessel_scale_hit(nu: float, x: float, a: float, b: float) -> float:
    """P(Bessel(nu) from x hits a before b), by quadrature of the scale density ``r^(1-nu)``."""
    dens = lambda y: y ** (1.0 - nu)  # noqa: E731
    return integrate.quad(dens, x, b)[0] / integrate.quad(dens, a, b)[0]


# frozen values ---------------------------------------------------------------

D3_LOW_EXIT_N2 = 0.37754      # drifted_low_exit(3/8, 2(n-1), 1/4, 1/2) at n = 2
BESSEL1_HIT_T10 = 0.75207     # reflection_hit(1 - 1e-3, 10)
HALF_LINE_T10 = 0.75183       # reflection_hit(1, 10)
GAMBLER_UP = 1 / 3            # gambler_up(1, 1/2, 2) for rho = 1 - B^(1)
OCC_MEAN_D5 = 1 / 3           # green_occupation_mean(5, 1)
HALF_SPACE_CEILING_T50 = 0.88865  # reflection_hit(0.99, 50): ceiling for any F >= 0, 1/N = 0.01
