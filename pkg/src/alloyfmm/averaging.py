"""Spectral-averaging toolbox: determinant and inverse-norm averages,
monotone tail behavior, and the exponential-weight construction that turns a
sign-indefinite profile into a strictly positive effective one.

Every inequality here is proven, so the checks carry no tuning freedom: a
violation beyond the quadrature/Monte Carlo uncertainty is a bug.  The one
unknown constant (the weak-type constant of the monotone tail bound) is
calibrated empirically off the scalar closed-form case and only ever enters
scaling checks, never absolute ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .fitting import loglinear_fit
from .geometry import SiteSet
from .model import DisorderDistribution, SingleSitePotential

__all__ = [
    "AveragingCheck",
    "MonotoneTailResult",
    "WeightProfile",
    "TransformedPotential",
    "RefutationError",
    "AssumptionError",
    "det_average_check",
    "inverse_norm_check",
    "monotone_tail_check",
    "weight_profile",
    "w_transform",
    "nonlocal_apriori_check",
    "EMPIRICAL_TAIL_CONSTANT",
]

# Worst tail constant observed in the scalar case, where the level-set
# measure is exactly 2*sqrt(1/t^2 - 1) <= 2/t.
EMPIRICAL_TAIL_CONSTANT = 2.0


class AssumptionError(ValueError):
    """An operation's hypotheses are not satisfied by the supplied model."""


class RefutationError(AssertionError):
    """A proven inequality failed numerically; carries the witness."""

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True)
class AveragingCheck:
    """Quadrature value of an averaged singular integrand against its bound."""

    name: str
    value: float
    value_error: float
    bound: float
    passed: bool
    details: dict


def _real_singularities(a: np.ndarray, v: np.ndarray, radius: float) -> list[float]:
    """Real parts of the values r where a + r*v drops rank, inside the support."""
    roots = np.linalg.eigvals(-np.linalg.solve(v, a))
    pts = sorted(
        float(r.real)
        for r in roots
        if abs(r.imag) < 1e-8 and -radius < r.real < radius
    )
    dedup: list[float] = []
    for p in pts:
        if not dedup or p - dedup[-1] > 1e-12:
            dedup.append(p)
    return dedup


def det_average_check(
    a, v, density: DisorderDistribution, s: float
) -> AveragingCheck:
    """Average of |det(a + r v)|^{-s/n} against the closed-form bound.

    The integrand factors through the eigenvalues of -v^{-1} a, so the
    quadrature splits at the real roots where the determinant vanishes; the
    singularities are integrable for s in (0, 1).
    """
    a = np.asarray(a, dtype=complex)
    v = np.asarray(v, dtype=complex)
    n = a.shape[0]
    if a.shape != v.shape or a.shape[0] != a.shape[1]:
        raise ValueError("matrices must be square and matched")
    if not 0.0 < s < 1.0:
        raise ValueError("fractional power must lie in (0, 1)")
    sign, logdet_v = np.linalg.slogdet(v)
    if sign == 0 or not np.isfinite(logdet_v):
        raise ValueError("the direction matrix must be invertible")
    roots = np.linalg.eigvals(-np.linalg.solve(v, a))
    power = -s / n

    def integrand(r: float) -> float:
        logs = np.sum(np.log(np.abs(r - roots)))
        return math.exp(power * (logdet_v + logs)) * float(density.density(np.array([r]))[0])

    radius = density.radius
    pts = _real_singularities(a, v, radius)
    value, err = integrate.quad(
        integrand, -radius, radius, points=pts or None, limit=400
    )
    bound = (
        math.exp(power * logdet_v)
        * density.l1_norm ** (1.0 - s)
        * density.sup_norm**s
        * 2.0**s
        * s ** (-s)
        / (1.0 - s)
    )
    return AveragingCheck(
        name="determinant-average",
        value=float(value),
        value_error=float(err),
        bound=float(bound),
        passed=value <= bound + 3.0 * err + 1e-12 * abs(bound),
        details={"n": n, "s": s, "singularities": pts},
    )


def inverse_norm_check(
    a, v, density: DisorderDistribution, s: float, radius: Optional[float] = None
) -> AveragingCheck:
    """Exact singular-value inequality plus the averaged resolvent-norm bound."""
    a = np.asarray(a, dtype=complex)
    v = np.asarray(v, dtype=complex)
    n = a.shape[0]
    if not 0.0 < s < 1.0:
        raise ValueError("fractional power must lie in (0, 1)")
    if radius is None:
        radius = density.radius
    sv = np.linalg.svd(v, compute_uv=False)
    inv_norm = 1.0 / sv[-1]
    det_v = float(np.prod(sv))
    norm_bound = sv[0] ** (n - 1) / det_v
    if inv_norm > norm_bound * (1.0 + 1e-12):
        raise RefutationError(
            "singular-value inequality violated", witness={"sv": sv.tolist()}
        )

    def integrand(r: float) -> float:
        m = a + r * v
        smin = np.linalg.svd(m, compute_uv=False)[-1]
        return (1.0 / smin) ** (s / n) * float(density.density(np.array([r]))[0])

    pts = _real_singularities(a, v, radius)
    value, err = integrate.quad(
        integrand, -radius, radius, points=pts or None, limit=400
    )
    op_a = np.linalg.norm(a, 2)
    op_v = np.linalg.norm(v, 2)
    bound = (
        density.l1_norm ** (1.0 - s)
        * density.sup_norm**s
        * (op_a + radius * op_v) ** (s * (n - 1) / n)
        / (s**s * 2.0 ** (-s) * (1.0 - s) * det_v ** (s / n))
    )
    return AveragingCheck(
        name="inverse-norm-average",
        value=float(value),
        value_error=float(err),
        bound=float(bound),
        passed=value <= bound + 3.0 * err + 1e-12 * abs(bound),
        details={"n": n, "s": s, "norm_check": (inv_norm, norm_bound)},
    )


def _require_dissipative(a: np.ndarray, rng: np.random.Generator, probes: int = 32) -> None:
    n = a.shape[0]
    herm = (a - a.conj().T) / 2j
    for _ in range(probes):
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        q = float(np.real(np.vdot(x, herm @ x)))
        if q < -1e-10 * np.linalg.norm(x) ** 2:
            raise AssumptionError("matrix is not dissipative on random probes")


@dataclass(frozen=True)
class MonotoneTailResult:
    thresholds: np.ndarray
    tail_measure: np.ndarray
    slope: float
    slope_window: tuple[float, float]
    empirical_constant: float
    moment: Optional[float]
    moment_scaling_bound: Optional[float]
    passed: bool


def monotone_tail_check(
    a,
    v,
    m1=None,
    m2=None,
    thresholds: Optional[Sequence[float]] = None,
    r_points: int = 200_001,
    density: Optional[DisorderDistribution] = None,
    s: Optional[float] = None,
    seed: int = 0,
) -> MonotoneTailResult:
    """Level-set measure of the sandwiched resolvent norm along the coupling.

    Estimates Leb{r : |m1 (a + r v)^{-1} m2|_HS > t} on a threshold grid by
    dense sampling in r and fits the log-log tail slope, which the weak-type
    bound pins at -1.  When a density and power are supplied the fractional
    moment of the operator norm is integrated as well and compared, as a
    scaling statement only, against the layer-cake bound with the empirically
    calibrated constant.
    """
    rng = np.random.default_rng(seed)
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = np.diag(v)
    if not np.allclose(v, np.diag(np.diagonal(v))) or np.any(np.diagonal(v) <= 0):
        raise AssumptionError("coupling direction must be diagonal and positive")
    _require_dissipative(a, rng)
    m1 = np.eye(n) if m1 is None else np.asarray(m1, dtype=complex)
    m2 = np.eye(n) if m2 is None else np.asarray(m2, dtype=complex)

    v_min = float(np.min(np.diagonal(v)))
    hs_cap = np.linalg.norm(m1, 2) * np.linalg.norm(m2, 2) * math.sqrt(n)

    def hs_norms(rs: np.ndarray) -> np.ndarray:
        out = np.empty(rs.size)
        for lo in range(0, rs.size, 50_000):
            hi = min(rs.size, lo + 50_000)
            mats = a[None, :, :] + rs[lo:hi, None, None] * v[None, :, :]
            sand = np.einsum("ij,bjk,kl->bil", m1, np.linalg.inv(mats), m2)
            out[lo:hi] = np.linalg.norm(sand, axis=(1, 2))
        return out

    # probe the supremum to size the threshold grid and the sampling range;
    # the 1/t law is asymptotic, so the window sits well below the peak
    sup0 = float(hs_norms(np.linspace(-5, 5, 2001)).max())
    if thresholds is None:
        thresholds = np.geomspace(sup0 / 3000.0, sup0 / 30.0, 12)
    thresholds = np.asarray(thresholds, dtype=float)
    t_min = float(thresholds.min())
    r_max = (hs_cap / t_min + np.linalg.norm(a, 2)) / v_min + 1.0
    grid = np.linspace(-r_max, r_max, r_points)
    values = hs_norms(grid)
    cell = grid[1] - grid[0]
    tail = np.array([float(np.count_nonzero(values > t)) * cell for t in thresholds])

    sup_seen = float(values.max())
    usable = tail > 0
    if np.count_nonzero(usable) >= 4:
        fit = loglinear_fit(np.log(thresholds[usable]), np.log(tail[usable]))
        slope = fit.slope
    else:
        slope = float("nan")
    with np.errstate(divide="ignore", invalid="ignore"):
        const = np.nanmax(np.where(usable, tail * thresholds, np.nan))
    weight = float(
        np.linalg.norm(m1 @ np.diag(1.0 / np.sqrt(np.diagonal(v))))
        * np.linalg.norm(m2 @ np.diag(1.0 / np.sqrt(np.diagonal(v))))
    )

    moment = None
    moment_bound = None
    if density is not None and s is not None:
        def integrand(r: float) -> float:
            m = m1 @ np.linalg.inv(a + r * v) @ m2
            return np.linalg.norm(m, 2) ** s * float(density.density(np.array([r]))[0])

        moment, _ = integrate.quad(
            integrand, -density.radius, density.radius, limit=300
        )
        op_weight = float(
            np.linalg.norm(m1 @ np.diag(1.0 / np.sqrt(np.diagonal(v))), 2)
            * np.linalg.norm(m2 @ np.diag(1.0 / np.sqrt(np.diagonal(v))), 2)
        )
        moment_bound = (
            n * EMPIRICAL_TAIL_CONSTANT * op_weight * density.sup_norm
        ) ** s / (1.0 - s)

    passed = np.isfinite(slope) and abs(slope + 1.0) <= 0.1
    return MonotoneTailResult(
        thresholds=thresholds,
        tail_measure=tail,
        slope=slope,
        slope_window=(t_min, float(thresholds.max())),
        empirical_constant=float(const / weight) if weight > 0 else float("nan"),
        moment=float(moment) if moment is not None else None,
        moment_scaling_bound=float(moment_bound) if moment_bound is not None else None,
        passed=bool(passed),
    )


# ---------------------------------------------------------------------------
# exponential weights and the transformed potential
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightProfile:
    """Exponential site weights anchored at two sites.

    The decay constant is chosen so that the weighted convolution with the
    profile stays positive even when the profile changes sign; the lattice
    sum of the weights has the closed form ``total`` independent of the
    anchors.
    """

    x: tuple
    y: tuple
    decay: float  # c
    total: float  # D, lattice sum of the weights
    dimension: int

    def alpha(self, site) -> float:
        site = tuple(site)
        lx = sum(abs(a - b) for a, b in zip(site, self.x))
        ly = sum(abs(a - b) for a, b in zip(site, self.y))
        return 0.5 * (math.exp(-self.decay * lx) + math.exp(-self.decay * ly))

    def alpha_many(self, sites: Sequence[tuple]) -> np.ndarray:
        return np.array([self.alpha(s) for s in sites])

    def centered_box_sum(self, radius: int) -> float:
        """Exact weight sum over a box centered at either anchor (they agree)."""
        q = math.exp(-self.decay)
        one_d = 1.0 + 2.0 * (q - q ** (radius + 1)) / (1.0 - q)
        return one_d**self.dimension

    def truncation_tail(self, radius: int) -> float:
        """Exact lattice tail beyond the centered box."""
        return self.total - self.centered_box_sum(radius)


def weight_profile(
    u: SingleSitePotential, x, y, dimension: Optional[int] = None
) -> WeightProfile:
    """Build the two-anchor exponential weights for a profile with positive sum.

    A profile with negative sum can be flipped together with its couplings;
    the single-site support case has 1-norm diameter zero, where any positive
    decay works, so the diameter floor is one.
    """
    if dimension is None:
        dimension = u.dimension
    u_sum = u.values_sum
    if u_sum == 0.0:
        raise AssumptionError("profile sums to zero: the weight construction needs a nonzero mean")
    if u_sum < 0.0:
        raise AssumptionError(
            "profile sums negative: flip the sign of the profile (and couplings) first"
        )
    n_eff = max(u.l1_diameter, 1)
    decay = math.log1p(u_sum / (2.0 * u.l1_norm)) / n_eff
    total = ((math.exp(decay) + 1.0) / (math.exp(decay) - 1.0)) ** dimension
    return WeightProfile(
        x=tuple(x), y=tuple(y), decay=decay, total=total, dimension=dimension
    )


@dataclass(frozen=True)
class TransformedPotential:
    """Weighted convolution of the profile: strictly positive on every site."""

    values: dict
    min_ratio: float  # min over the region of W(k) / alpha(k)
    anchor_floor: float  # min of W at the two anchors

    def __getitem__(self, site) -> float:
        return self.values[tuple(site)]


def w_transform(
    profile: WeightProfile,
    u: SingleSitePotential,
    region: SiteSet,
    verify: bool = True,
) -> TransformedPotential:
    """W(k) = sum_j alpha(j) u(k - j), with the positivity floor checked.

    The floor ``W(k) >= alpha(k) * u_sum / 2`` is an exact statement; a
    violation raises with the witness site since it can only mean a bug.
    """
    half_sum = u.values_sum / 2.0
    values = {}
    min_ratio = math.inf
    witness = None
    for k in region.sites:
        total = 0.0
        for t, val in zip(u.support.sites, u.values):
            j = tuple(a - b for a, b in zip(k, t))
            total += profile.alpha(j) * val
        values[k] = total
        ratio = total / profile.alpha(k)
        if ratio < min_ratio:
            min_ratio = ratio
            witness = k
        if verify and total < profile.alpha(k) * half_sum:
            raise RefutationError(
                f"positivity floor failed at {k}: W={total!r} < "
                f"alpha*u_sum/2={profile.alpha(k) * half_sum!r}",
                witness=k,
            )
    anchor_floor = min(
        values.get(profile.x, math.inf), values.get(profile.y, math.inf)
    )
    return TransformedPotential(
        values=values, min_ratio=float(min_ratio), anchor_floor=float(anchor_floor)
    )


def _random_density(rng: np.random.Generator) -> DisorderDistribution:
    from .model import triangular_density, uniform_density

    if rng.random() < 0.5:
        a = float(rng.uniform(-2.0, 0.0))
        return uniform_density(a, a + float(rng.uniform(0.5, 3.0)))
    return triangular_density(float(rng.uniform(0.5, 2.0)))


def _random_invertible(rng: np.random.Generator, n: int, smin: float = 0.3, smax: float = 2.0) -> np.ndarray:
    q1, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    q2, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return q1 @ np.diag(rng.uniform(smin, smax, n)) @ q2


def fuzz_averaging(
    det_cases: int = 200,
    norm_cases: int = 200,
    tail_cases: int = 50,
    seed: int = 0,
) -> dict:
    """Randomized verification of the averaging inequalities.

    Determinant and inverse-norm averages are proven bounds (any violation
    beyond quadrature error fails); the level-set tails must fit a log-log
    slope of -1 within 0.1.
    """
    rng = np.random.default_rng(seed)
    det_results = []
    for _ in range(det_cases):
        n = int(rng.integers(1, 5))
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        v = _random_invertible(rng, n)
        s = float(rng.uniform(0.1, 0.9))
        det_results.append(det_average_check(a, v, _random_density(rng), s))
    norm_results = []
    for _ in range(norm_cases):
        n = int(rng.integers(1, 5))
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        v = _random_invertible(rng, n, smin=0.05)
        s = float(rng.uniform(0.1, 0.9))
        norm_results.append(inverse_norm_check(a, v, _random_density(rng), s))
    tail_results = []
    for case in range(tail_cases):
        n = int(rng.integers(1, 6))
        sym = rng.normal(size=(n, n))
        sym = (sym + sym.T) / 2.0
        b = rng.normal(size=(n, n))
        a = sym + 1j * (b @ b.T + 0.05 * np.eye(n))
        v = np.diag(rng.uniform(0.5, 2.0, n))
        tail_results.append(
            monotone_tail_check(a, v, seed=seed + case, r_points=100_001)
        )
    failures = (
        [r for r in det_results if not r.passed]
        + [r for r in norm_results if not r.passed]
        + [r for r in tail_results if not r.passed]
    )
    return {
        "det": det_results,
        "norm": norm_results,
        "tail": tail_results,
        "failures": len(failures),
        "worst_tail_slope_error": max(
            (abs(r.slope + 1.0) for r in tail_results), default=0.0
        ),
        "passed": not failures,
    }


def nonlocal_apriori_check(
    region: SiteSet,
    lambda_grid: Sequence[float],
    u: SingleSitePotential,
    density: DisorderDistribution,
    s: float,
    samples: int,
    z: complex,
    x,
    y,
    seed: int = 0,
    workers: int = 1,
) -> dict:
    """Disorder-strength scaling of the full-average fractional moment.

    Requires the smooth-density/nonzero-mean assumption pair; the bound's
    constant is not explicit, so only the power-law slope in the disorder
    strength is certified (slope at most -s + 0.1 over the strong half of
    the grid).
    """
    from . import fmm  # local import: fmm sits above this module in the stack

    if not density.in_w11:
        raise AssumptionError(
            "density is not absolutely continuous (W^{1,1} fails): "
            f"kind={density.kind!r}"
        )
    if u.values_sum <= 0.0:
        raise AssumptionError("profile mean must be positive (flip signs first)")
    estimates = []
    for lam in lambda_grid:
        cfg = fmm.MomentConfig(
            s=s,
            z=z,
            lam=float(lam),
            samples=samples,
            seed=seed,
            theta_size=len(u.support),
            exponent=s,  # the full-average bound speaks about |G|^s directly
        )
        estimates.append(fmm.fractional_moment(region, x, y, cfg, u, density, workers=workers))
    lams = np.log(np.asarray(lambda_grid, dtype=float))
    means = np.log(np.array([e.mean for e in estimates]))
    half = len(lambda_grid) // 2
    fit = loglinear_fit(lams[half:], means[half:])
    requirement = -s + 0.1
    return {
        "estimates": estimates,
        "lambda_grid": list(lambda_grid),
        "slope": fit.slope,
        "slope_requirement": requirement,
        "fit": fit,
        "passed": fit.slope <= requirement,
    }
