"""Small statistics helpers shared by the experiment modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = ["LogLinearFit", "loglinear_fit", "wilson_interval"]


@dataclass(frozen=True)
class LogLinearFit:
    slope: float
    intercept: float
    r2: float
    slope_stderr: float
    slope_ci95: tuple[float, float]
    n_points: int


def loglinear_fit(x, log_y) -> LogLinearFit:
    """Ordinary least squares of log-values against x with a 95% slope CI."""
    x = np.asarray(x, dtype=float)
    log_y = np.asarray(log_y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points to fit a line")
    res = stats.linregress(x, log_y)
    dof = x.size - 2
    if dof > 0 and np.isfinite(res.stderr) and res.stderr > 0:
        half = stats.t.ppf(0.975, dof) * res.stderr
    else:
        half = 0.0
    return LogLinearFit(
        slope=float(res.slope),
        intercept=float(res.intercept),
        r2=float(res.rvalue**2),
        slope_stderr=float(res.stderr) if np.isfinite(res.stderr) else 0.0,
        slope_ci95=(float(res.slope - half), float(res.slope + half)),
        n_points=int(x.size),
    )


def wilson_interval(successes: int, trials: int, z: float = 1.959964) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    return (max(0.0, center - half), min(1.0, center + half))
