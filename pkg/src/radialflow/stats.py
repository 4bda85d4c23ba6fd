"""Binomial intervals, two-sample KS, and the small regression fits used in reports."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class Proportion:
    successes: int
    trials: int
    lo: float
    hi: float

    @property
    def p(self) -> float:
        return self.successes / self.trials if self.trials else float("nan")

    def to_dict(self) -> dict:
        return {"successes": self.successes, "trials": self.trials, "p": self.p,
                "lo": self.lo, "hi": self.hi}


def wilson(successes: int, trials: int, level: float = 0.95) -> Proportion:
    """Wilson score interval for a binomial proportion."""
    if not 0 <= successes <= trials:
        raise ValueError("need 0 <= successes <= trials")
    if trials == 0:
        return Proportion(0, 0, 0.0, 1.0)
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(level, method="wilson")
    return Proportion(int(successes), int(trials), float(ci.low), float(ci.high))


def ks_statistic(a, b) -> float:
    return float(stats.ks_2samp(np.asarray(a), np.asarray(b)).statistic)


def mean_ci(x, level: float = 0.95) -> tuple[float, float, float]:
    x = np.asarray(x, float)
    m = float(x.mean())
    se = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("inf")
    z = stats.norm.ppf(0.5 + level / 2)
    return m, m - z * se, m + z * se


def linear_fit(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept."""
    res = stats.linregress(np.asarray(x, float), np.asarray(y, float))
    return float(res.slope), float(res.intercept)


def survival(samples, grid) -> np.ndarray:
    """Exceedance counts ``#{samples > s}`` for each ``s`` in ``grid``."""
    s = np.sort(np.asarray(samples, float))
    return len(s) - np.searchsorted(s, np.asarray(grid, float), side="right")
