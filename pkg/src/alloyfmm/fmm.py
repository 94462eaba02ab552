"""Fractional-moment engine: Monte Carlo estimates of averaged Green-function
powers, disorder-strength scaling experiments, exponential-decay fits, and the
finite-volume smallness criterion.

Sampling contract: sample i draws its couplings from a generator derived from
(master seed, i), so estimates are bit-identical for any worker count and any
chunking of the sample range.  Reductions run over arrays assembled in sample
order with numpy's pairwise summation.

The bounds' constants are existence statements, so experiments certify the
scaling (log-log slopes, boundedness along a grid) and report parametric
values only when the caller supplies a constant.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

from .fitting import LogLinearFit, loglinear_fit
from .geometry import (
    SiteSet,
    annulus_geometry,
    boundaries,
    component_of,
    metrics,
    outer_boundary,
)
from .model import (
    DENSITY_BUILDERS,
    DisorderDistribution,
    SingleSitePotential,
    coupling_closure,
    hopping_matrix,
    sample_rng,
)

__all__ = [
    "MomentConfig",
    "MomentEstimate",
    "DecayFit",
    "CriterionResult",
    "xi_s",
    "fractional_moment",
    "moment_table",
    "apriori_experiment",
    "decay_profile",
    "finite_volume_criterion",
    "find_boundary_cover",
]

_RCOND_FLOOR = 1e-12
_CHUNK_ENTRY_BUDGET = 4_000_000  # complex matrix entries per solve batch


@dataclass(frozen=True)
class MomentConfig:
    """Knobs of one moment estimation run.

    ``theorem_mode`` restricts the fractional power to the range the decay
    theorem needs (s < 1/3) and makes experiments enforce the boundary-sign
    hypothesis on the profile.  ``exponent`` overrides the default moment
    power s / (2 |support|) where a statement uses a different one.
    """

    s: float
    z: complex
    lam: float
    samples: int
    seed: int
    theta_size: int
    theorem_mode: bool = False
    exponent: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError("fractional power s must lie in (0, 1)")
        if self.theorem_mode and not self.s < 1.0 / 3.0:
            raise ValueError("theorem mode requires s < 1/3")
        if self.samples < 100:
            raise ValueError("at least 100 samples are required")
        if self.lam < 0:
            raise ValueError("disorder strength must be non-negative")
        if self.theta_size < 1:
            raise ValueError("support size must be at least 1")
        object.__setattr__(self, "z", complex(self.z))

    @property
    def t(self) -> float:
        """Effective moment power."""
        if self.exponent is not None:
            return self.exponent
        return self.s / (2.0 * self.theta_size)

    def with_lambda(self, lam: float) -> "MomentConfig":
        return replace(self, lam=float(lam))


@dataclass(frozen=True)
class MomentEstimate:
    """Monte Carlo mean of |G|^t with its standard error."""

    mean: float
    stderr: float
    samples: int
    t: float
    pair: tuple
    resonant_count: int = 0
    mean_excluding_resonant: Optional[float] = None
    stderr_excluding_resonant: Optional[float] = None


def xi_s(lam: float, s: float, theta_size: int) -> float:
    """Disorder-strength envelope max(lam^{-s/(2|support|)}, lam^{-2s})."""
    if lam <= 0:
        raise ValueError("disorder strength must be positive")
    if not 0.0 < s < 1.0:
        raise ValueError("fractional power must lie in (0, 1)")
    if theta_size < 1:
        raise ValueError("support size must be at least 1")
    return max(lam ** (-s / (2.0 * theta_size)), lam ** (-2.0 * s))


# ---------------------------------------------------------------------------
# sampling engine
# ---------------------------------------------------------------------------


class _SampleEngine:
    """Precomputed structure for repeated disorder draws on one region."""

    def __init__(
        self,
        region: SiteSet,
        u: SingleSitePotential,
        density: DisorderDistribution,
        lam: float,
        z: complex,
        seed: int,
    ):
        self.region = region
        self.u = u
        self.density = density
        self.lam = float(lam)
        self.z = complex(z)
        self.seed = int(seed)
        self.n = len(region)
        self.base = -hopping_matrix(region)
        self.closure = coupling_closure(region, u)
        conv = np.zeros((self.n, len(self.closure)))
        for i, x in enumerate(region.sites):
            for t, val in zip(u.support.sites, u.values):
                k = tuple(a - b for a, b in zip(x, t))
                conv[i, self.closure.index(k)] = val
        self.conv = conv

    def draw_couplings(self, start: int, stop: int) -> np.ndarray:
        m = len(self.closure)
        out = np.empty((stop - start, m))
        for i in range(start, stop):
            out[i - start] = self.density.sample(sample_rng(self.seed, i), m)
        return out

    def green_values(
        self, x, targets: Sequence, start: int, stop: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """|G(z; x, w)| for each target w, per sample in [start, stop).

        Returns (magnitudes with shape (stop-start, len(targets)), resonant
        mask).  Resonant samples (real energy numerically inside the
        spectrum) carry NaN magnitudes.
        """
        count = stop - start
        x_idx = self.region.index(x)
        t_idx = np.array([self.region.index(w) for w in targets])
        couplings = self.draw_couplings(start, stop)
        if self.lam != 0.0:
            potentials = couplings @ self.conv.T
        else:
            potentials = np.zeros((count, self.n))
        if self.z.imag != 0.0:
            return self._batched(potentials, x_idx, t_idx)
        return self._looped(potentials, x_idx, t_idx)

    def _batched(self, potentials, x_idx, t_idx):
        count = potentials.shape[0]
        out = np.empty((count, t_idx.size))
        resonant = np.zeros(count, dtype=bool)
        chunk = max(1, min(count, _CHUNK_ENTRY_BUDGET // max(1, self.n * self.n)))
        shifted_base = self.base.astype(np.complex128) - self.z * np.eye(self.n)
        rhs = np.zeros(self.n, dtype=np.complex128)
        rhs[x_idx] = 1.0
        norm_cap = (1.0 + 1e-9) / abs(self.z.imag)
        diag = np.arange(self.n)
        for lo in range(0, count, chunk):
            hi = min(count, lo + chunk)
            mats = np.broadcast_to(shifted_base, (hi - lo, self.n, self.n)).copy()
            mats[:, diag, diag] += self.lam * potentials[lo:hi]
            stacked_rhs = np.broadcast_to(rhs[:, None], (hi - lo, self.n, 1))
            cols = np.linalg.solve(mats, stacked_rhs)[..., 0]
            residual = np.abs(np.einsum("bij,bj->bi", mats, cols) - rhs).max(axis=1)
            sup = np.abs(cols).max(axis=1)
            if np.any(residual >= 1e-10 * (1.0 + sup)):
                raise ArithmeticError("batched solve lost accuracy")
            norms = np.linalg.norm(cols, axis=1)
            if np.any(norms > norm_cap):
                raise ArithmeticError("resolvent column exceeds the 1/|Im z| bound")
            out[lo:hi] = np.abs(cols[:, t_idx])
        return out, resonant

    def _looped(self, potentials, x_idx, t_idx):
        count = potentials.shape[0]
        out = np.empty((count, t_idx.size))
        resonant = np.zeros(count, dtype=bool)
        rhs = np.zeros(self.n, dtype=np.complex128)
        rhs[x_idx] = 1.0
        eye = np.eye(self.n)
        for i in range(count):
            mat = self.base.astype(np.complex128) - self.z * eye
            mat[np.arange(self.n), np.arange(self.n)] += self.lam * potentials[i]
            anorm = np.linalg.norm(mat, 1)
            try:
                lu = sla.lu_factor(mat, check_finite=False)
                rcond, info = lapack.zgecon(lu[0], anorm, norm="1")
                col = sla.lu_solve(lu, rhs, check_finite=False)
            except Exception:
                resonant[i] = True
                out[i] = np.nan
                continue
            if info != 0 or not np.isfinite(rcond) or rcond < _RCOND_FLOOR:
                resonant[i] = True
            vals = np.abs(col[t_idx])
            out[i] = np.where(np.isfinite(vals), vals, np.nan)
        return out, resonant


def _engine_payload(engine: _SampleEngine) -> dict:
    return {
        "region": engine.region.sites,
        "dimension": engine.region.dimension,
        "u_pairs": tuple(zip(engine.u.support.sites, engine.u.values)),
        "density_kind": engine.density.kind,
        "density_params": engine.density.params,
        "lam": engine.lam,
        "z": (engine.z.real, engine.z.imag),
        "seed": engine.seed,
    }


def _engine_from_payload(payload: dict) -> _SampleEngine:
    region = SiteSet(payload["region"], dimension=payload["dimension"])
    u = SingleSitePotential.from_pairs(dict(payload["u_pairs"]))
    density = DENSITY_BUILDERS[payload["density_kind"]](**payload["density_params"])
    return _SampleEngine(
        region=region,
        u=u,
        density=density,
        lam=payload["lam"],
        z=complex(*payload["z"]),
        seed=payload["seed"],
    )


def _chunk_worker(args) -> tuple[np.ndarray, np.ndarray]:
    payload, x, targets, start, stop = args
    engine = _engine_from_payload(payload)
    return engine.green_values(x, targets, start, stop)


def _worker_count(workers: Optional[int]) -> int:
    env = os.environ.get("ALLOYFMM_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, workers or 1)


def _collect_values(
    engine: _SampleEngine, x, targets: Sequence, samples: int, workers: int
) -> tuple[np.ndarray, np.ndarray]:
    workers = _worker_count(workers)
    if workers == 1:
        return engine.green_values(x, targets, 0, samples)
    # fixed chunking independent of the pool size keeps per-sample values and
    # their order identical for any worker count
    chunk = max(100, math.ceil(samples / (4 * workers)))
    ranges = [(lo, min(samples, lo + chunk)) for lo in range(0, samples, chunk)]
    payload = _engine_payload(engine)
    jobs = [(payload, tuple(x), tuple(map(tuple, targets)), lo, hi) for lo, hi in ranges]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_chunk_worker, jobs))
    values = np.concatenate([p[0] for p in parts], axis=0)
    resonant = np.concatenate([p[1] for p in parts], axis=0)
    return values, resonant


def _estimate_from_values(values: np.ndarray, t: float, pair, resonant: np.ndarray) -> MomentEstimate:
    """Mean/stderr of |G|^t in fixed sample order.

    NaN magnitudes (failed solves) are dropped from both variants; finite
    resonant values enter the headline mean and are also reported excluded.
    """
    n_total = values.shape[0]
    powered = np.power(values, t)
    finite = np.isfinite(powered)
    if not finite.any():
        raise ArithmeticError("every sample failed to solve; no estimate available")
    kept = np.where(finite, powered, 0.0)
    n_kept = int(np.count_nonzero(finite))
    mean = float(np.sum(kept) / n_kept)
    var = float(np.sum((kept - mean) ** 2 * finite) / max(1, n_kept - 1))
    stderr = math.sqrt(var / n_kept)
    resonant_count = int(np.count_nonzero(resonant))
    mean_ex = stderr_ex = None
    if resonant_count:
        clean = finite & ~resonant
        n_clean = int(np.count_nonzero(clean))
        if n_clean:
            kept_c = np.where(clean, powered, 0.0)
            mean_ex = float(np.sum(kept_c) / n_clean)
            var_c = float(np.sum((kept_c - mean_ex) ** 2 * clean) / max(1, n_clean - 1))
            stderr_ex = math.sqrt(var_c / n_clean)
    return MomentEstimate(
        mean=mean,
        stderr=stderr,
        samples=n_total,
        t=t,
        pair=pair,
        resonant_count=resonant_count,
        mean_excluding_resonant=mean_ex,
        stderr_excluding_resonant=stderr_ex,
    )


def moment_table(
    region: SiteSet,
    x,
    targets: Sequence,
    cfg: MomentConfig,
    u: SingleSitePotential,
    density: DisorderDistribution,
    workers: int = 1,
) -> list[MomentEstimate]:
    """Moment estimates for several targets sharing the same disorder draws."""
    engine = _SampleEngine(region, u, density, cfg.lam, cfg.z, cfg.seed)
    values, resonant = _collect_values(engine, x, targets, cfg.samples, workers)
    return [
        _estimate_from_values(values[:, j], cfg.t, (tuple(x), tuple(w)), resonant)
        for j, w in enumerate(targets)
    ]


def fractional_moment(
    region: SiteSet,
    x,
    y,
    cfg: MomentConfig,
    u: SingleSitePotential,
    density: DisorderDistribution,
    workers: int = 1,
) -> MomentEstimate:
    """Monte Carlo estimate of the averaged fractional Green-function power."""
    return moment_table(region, x, [y], cfg, u, density, workers)[0]


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def find_boundary_cover(site, region: SiteSet, u: SingleSitePotential) -> Optional[tuple]:
    """An anchor b with site in (support+b) inside the region and the whole
    clipped translate on the translate's interior boundary; None if no such
    anchor exists."""
    site = tuple(site)
    inner_bd = boundaries(u.support).interior
    for t in u.support.sites:
        b = tuple(a - c for a, c in zip(site, t))
        clipped = [
            s
            for s in (tuple(a + c for a, c in zip(b, tt)) for tt in u.support.sites)
            if s in region
        ]
        if not clipped or site not in clipped:
            continue
        ok = all(
            tuple(a - c for a, c in zip(s, b)) in inner_bd for s in clipped
        )
        if ok:
            return b
    return None


@dataclass(frozen=True)
class AprioriExperiment:
    lambda_grid: tuple
    estimates: dict  # pair -> list[MomentEstimate] along the grid
    xi_values: tuple
    slopes: dict  # pair -> LogLinearFit over the strong-disorder half
    slope_requirement: float
    bounded_in_lambda: bool
    part_b: bool
    passed: bool


def apriori_experiment(
    region: SiteSet,
    pairs: Sequence[tuple],
    lambda_grid: Sequence[float],
    cfg: MomentConfig,
    u: SingleSitePotential,
    density: DisorderDistribution,
    part_b: bool = False,
    workers: int = 1,
) -> AprioriExperiment:
    """Boundedness and disorder scaling of the averaged moment along a grid.

    In theorem mode the profile must be positive on its support boundary; the
    exploratory mode drops that requirement (the weaker remainder bound still
    applies).  The variant gated on boundary containment evaluates the plain
    power s and needs every pair to sit on suitably clipped translates.
    """
    if cfg.theorem_mode and not u.boundary_positive():
        raise ValueError(
            "theorem mode requires the profile to be positive on its support boundary"
        )
    exponent = cfg.exponent
    if part_b:
        for x, y in pairs:
            if find_boundary_cover(x, region, u) is None or find_boundary_cover(y, region, u) is None:
                raise ValueError(
                    f"boundary-containment geometry unsatisfiable for pair ({x}, {y}): "
                    "move the sites to clipped support translates at the region edge"
                )
        exponent = cfg.s if cfg.exponent is None else cfg.exponent
    estimates: dict = {tuple(map(tuple, p)): [] for p in pairs}
    for lam in lambda_grid:
        lam_cfg = replace(cfg, lam=float(lam), exponent=exponent)
        for x, y in pairs:
            est = fractional_moment(region, x, y, lam_cfg, u, density, workers)
            estimates[(tuple(x), tuple(y))].append(est)
    xi_values = tuple(xi_s(lam, cfg.s, cfg.theta_size) for lam in lambda_grid)
    half = len(lambda_grid) // 2
    log_lams = np.log(np.asarray(lambda_grid, dtype=float))
    slopes = {}
    t_eff = exponent if exponent is not None else cfg.t
    requirement = -t_eff + 0.15
    bounded = True
    for key, series in estimates.items():
        means = np.array([e.mean for e in series])
        errs = np.array([e.stderr for e in series])
        cap = means[0] * 1.25 + 3.0 * (errs[0] + errs)
        bounded = bounded and bool(np.all(means <= np.maximum(cap, means[0])))
        slopes[key] = loglinear_fit(log_lams[half:], np.log(means[half:]))
    slope_ok = all(fit.slope <= requirement for fit in slopes.values())
    return AprioriExperiment(
        lambda_grid=tuple(float(v) for v in lambda_grid),
        estimates=estimates,
        xi_values=xi_values,
        slopes=slopes,
        slope_requirement=requirement,
        bounded_in_lambda=bounded,
        part_b=part_b,
        passed=bool(slope_ok and bounded),
    )


@dataclass(frozen=True)
class DecayFit:
    """Log-linear fit of moment estimates against distance."""

    prefactor: float
    rate: float
    rate_stderr: float
    rate_ci95: tuple[float, float]
    r2: float
    distances: tuple
    values: tuple
    stderrs: tuple
    estimates: tuple

    @property
    def exponential_decay(self) -> bool:
        return self.rate_ci95[0] > 0.0 and self.r2 >= 0.9


def decay_profile(
    region: SiteSet,
    x,
    distances: Sequence[int],
    cfg: MomentConfig,
    u: SingleSitePotential,
    density: DisorderDistribution,
    axis: int = 0,
    workers: int = 1,
) -> DecayFit:
    """Moment estimates at axis-aligned distances from x, with the decay fit.

    Axis-aligned targets realize the sup metric exactly, so the fitted rate
    is per unit sup-distance.
    """
    x = tuple(x)
    targets = []
    for r in distances:
        y = list(x)
        y[axis] += int(r)
        y = tuple(y)
        if y not in region:
            raise ValueError(f"target {y} at distance {r} falls outside the region")
        targets.append(y)
    if len(set(targets)) < 4:
        raise ValueError("need at least 4 distinct distances for a decay fit")
    estimates = moment_table(region, x, targets, cfg, u, density, workers)
    dist = np.asarray(distances, dtype=float)
    means = np.array([e.mean for e in estimates])
    fit = loglinear_fit(dist, np.log(means))
    return DecayFit(
        prefactor=float(np.exp(fit.intercept)),
        rate=-fit.slope,
        rate_stderr=fit.slope_stderr,
        rate_ci95=(-fit.slope_ci95[1], -fit.slope_ci95[0]),
        r2=fit.r2,
        distances=tuple(float(r) for r in distances),
        values=tuple(float(v) for v in means),
        stderrs=tuple(float(e.stderr) for e in estimates),
        estimates=tuple(estimates),
    )


@dataclass(frozen=True)
class CriterionResult:
    """Finite-volume smallness indicator built from one annulus."""

    raw_sum: float
    raw_sum_stderr: float
    per_site: dict
    skipped_sites: tuple
    annulus_radius: int
    volume_factor: float
    xi: float
    lambda_power: float
    b_constant: Optional[float]
    b_value: Optional[float]
    b_diagnostic: float
    predicted_rate: Optional[float]
    prefactor_over_apriori: Optional[float]
    samples: int

    def predicted_rate_for(self, b: float, support_diam: int) -> float:
        if not 0.0 < b < 1.0:
            raise ValueError("need b in (0, 1) for a decay prediction")
        return abs(math.log(b)) / (self.annulus_radius + support_diam + 2.0)


def finite_volume_criterion(
    gamma: Optional[SiteSet],
    region: SiteSet,
    x,
    annulus_radius: int,
    cfg: MomentConfig,
    u: SingleSitePotential,
    density: DisorderDistribution,
    b_constant: Optional[float] = None,
    workers: int = 1,
) -> CriterionResult:
    """Boundary-moment sum around one center with the criterion prefactors.

    Sites of the fattened-shell exterior that land outside the center's
    component contribute exactly zero by disconnection and are skipped.  When
    the proportionality constant is not supplied, the diagnostic value at
    constant one is reported instead of a bound claim.
    """
    x = tuple(x)
    if gamma is not None and not region.issubset(gamma):
        raise ValueError("the working region must sit inside the global domain")
    ann = annulus_geometry(u.support, x, annulus_radius, domain=gamma)
    shell_plus = ann.shell_plus
    outer = outer_boundary(shell_plus, gamma)
    domain = region.difference(shell_plus)
    if x not in domain:
        raise ValueError("center got removed with the shell; enlarge the region")
    comp = component_of(domain, x)
    targets = [w for w in outer.sites if w in comp]
    skipped = tuple(w for w in outer.sites if w not in comp)
    if not targets:
        raise ValueError("no boundary sites reachable from the center")
    engine = _SampleEngine(comp, u, density, cfg.lam, cfg.z, cfg.seed)
    values, resonant = _collect_values(engine, x, targets, cfg.samples, workers)
    powered = np.power(values, cfg.t)
    per_site = {
        tuple(w): _estimate_from_values(values[:, j], cfg.t, (x, tuple(w)), resonant)
        for j, w in enumerate(targets)
    }
    sums = powered.sum(axis=1)
    finite = np.isfinite(sums)
    n_kept = int(np.count_nonzero(finite))
    if n_kept == 0:
        raise ArithmeticError("every sample failed to solve")
    kept = np.where(finite, sums, 0.0)
    raw_sum = float(np.sum(kept) / n_kept)
    var = float(np.sum((kept - raw_sum) ** 2 * finite) / max(1, n_kept - 1))
    raw_stderr = math.sqrt(var / n_kept)

    d = region.dimension
    volume_factor = float(annulus_radius) ** (3 * (d - 1))
    xi = xi_s(cfg.lam, cfg.s, cfg.theta_size)
    lam_power = cfg.lam ** (-cfg.s / cfg.theta_size)
    alt_spelling = cfg.lam ** (-2.0 * cfg.s / (2.0 * cfg.theta_size))
    assert math.isclose(lam_power, alt_spelling, rel_tol=1e-12), (
        "the two prefactor spellings must agree"
    )
    b_diag = volume_factor * xi * lam_power * raw_sum
    b_value = b_constant * b_diag if b_constant is not None else None
    support_diam = u.linf_diameter
    chosen_b = b_value if b_value is not None else b_diag
    predicted_rate = None
    prefactor = None
    if 0.0 < chosen_b < 1.0:
        predicted_rate = abs(math.log(chosen_b)) / (annulus_radius + support_diam + 2.0)
        prefactor = xi / chosen_b
    return CriterionResult(
        raw_sum=raw_sum,
        raw_sum_stderr=raw_stderr,
        per_site=per_site,
        skipped_sites=skipped,
        annulus_radius=annulus_radius,
        volume_factor=volume_factor,
        xi=xi,
        lambda_power=lam_power,
        b_constant=b_constant,
        b_value=b_value,
        b_diagnostic=b_diag,
        predicted_rate=predicted_rate,
        prefactor_over_apriori=prefactor,
        samples=cfg.samples,
    )
