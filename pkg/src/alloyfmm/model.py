"""Alloy-type random operator: single-site potential, disorder, Hamiltonians.

The random potential at site x is a finite convolution
``V(x) = sum_k w_k u(x - k)`` of i.i.d. couplings w_k with a finitely
supported profile u that may change sign.  Operators are dense matrices
indexed by a :class:`~alloyfmm.geometry.SiteSet`; desk-scale boxes make dense
factorizations simpler and bit-reproducible, so there is no sparse path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import integrate

from .geometry import Site, SiteSet, boundaries, metrics, neighbors

__all__ = [
    "SingleSitePotential",
    "DisorderDistribution",
    "DisorderField",
    "LatticeOperator",
    "AssumptionReport",
    "uniform_density",
    "triangular_density",
    "smooth_bump_density",
    "table_density",
    "sample_rng",
    "coupling_closure",
    "sample_field",
    "check_assumptions",
    "potential_field",
    "hamiltonian",
    "restrict",
    "deplete",
    "operator_norm_bound",
]


class MissingCouplingError(KeyError):
    """A potential evaluation needed a coupling the field does not carry."""


@dataclass(frozen=True)
class SingleSitePotential:
    """Finitely supported real profile u with its derived constants."""

    support: SiteSet
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) == 0:
            raise ValueError("support must be non-empty")
        if len(self.values) != len(self.support):
            raise ValueError("one value per support site is required")
        if (0,) * self.support.dimension not in self.support:
            raise ValueError("support must contain the origin")
        if any(v == 0.0 for v in self.values):
            raise ValueError("values must be non-zero everywhere on the support")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @staticmethod
    def from_pairs(pairs: Mapping[Site, float] | Sequence[tuple[Site, float]]) -> "SingleSitePotential":
        items = dict(pairs)
        support = SiteSet(items.keys())
        return SingleSitePotential(
            support=support, values=tuple(items[s] for s in support.sites)
        )

    @staticmethod
    def chain(values: Sequence[float]) -> "SingleSitePotential":
        """1-d profile on {0, 1, ..., len(values)-1}."""
        return SingleSitePotential.from_pairs(
            {(k,): v for k, v in enumerate(values)}
        )

    def __call__(self, site) -> float:
        site = tuple(site)
        if site in self.support:
            return self.values[self.support.index(site)]
        return 0.0

    @property
    def dimension(self) -> int:
        return self.support.dimension

    @property
    def values_sum(self) -> float:
        """Sum of u over the lattice (the mean-field weight)."""
        return float(sum(self.values))

    @property
    def l1_norm(self) -> float:
        return float(sum(abs(v) for v in self.values))

    @property
    def l1_diameter(self) -> int:
        return metrics(self.support)["diam_l1"]

    @property
    def linf_diameter(self) -> int:
        return metrics(self.support)["diam_inf"]

    def boundary_positive(self) -> bool:
        """True when u > 0 on the interior vertex boundary of its support."""
        inner = boundaries(self.support).interior
        return all(self(s) > 0 for s in inner.sites)

    def min_abs_on_boundary(self) -> float:
        inner = boundaries(self.support).interior
        return min(abs(self(s)) for s in inner.sites)

    def negated(self) -> "SingleSitePotential":
        return SingleSitePotential(
            support=self.support, values=tuple(-v for v in self.values)
        )


_QUAD_TOL = 1e-12


@dataclass(frozen=True)
class DisorderDistribution:
    """Coupling density with the constants the estimates consume.

    ``derivative_l1`` is None when the density is not absolutely continuous
    (uniform: jumps at the endpoints), and ``in_w11`` records that flag.
    """

    kind: str
    params: dict
    radius: float
    sup_norm: float
    l1_norm: float
    in_w11: bool
    derivative_l1: Optional[float]
    density: Callable[[np.ndarray], np.ndarray]
    density_derivative: Optional[Callable[[np.ndarray], np.ndarray]]
    _sampler: Callable[[np.random.Generator, int], np.ndarray]
    _cdf_grid: Optional[tuple[np.ndarray, np.ndarray]] = None
    breakpoints: Optional[tuple[float, ...]] = None

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self._sampler(rng, size)

    def cdf(self, x: np.ndarray) -> np.ndarray:
        """Integral of the density up to x (for sampler verification)."""
        if self._cdf_grid is not None:
            grid, cum = self._cdf_grid
            return np.interp(x, grid, cum)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array(
            [integrate.quad(self.density, -self.radius, xi, limit=200)[0] for xi in x]
        )

    def validate(self) -> None:
        pts = list(self.breakpoints or (-self.radius, 0.0, self.radius))
        total, _ = integrate.quad(
            self.density, -self.radius - 0.5, self.radius + 0.5,
            points=pts,
            limit=400, epsabs=1e-13, epsrel=1e-13,
        )
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"density does not integrate to 1: got {total!r}")
        probe = np.linspace(-self.radius, self.radius, 2001)
        if np.any(self.density(probe) < -1e-12):
            raise ValueError("density takes negative values")


def uniform_density(low: float = -1.0, high: float = 1.0) -> DisorderDistribution:
    """Uniform on [low, high]: bounded and compact, but not W^{1,1}."""
    if not high > low:
        raise ValueError("need high > low")
    width = high - low
    height = 1.0 / width

    def density(x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= low) & (x <= high), height, 0.0)

    dist = DisorderDistribution(
        kind="uniform",
        params={"low": low, "high": high},
        radius=max(abs(low), abs(high)),
        sup_norm=height,
        l1_norm=1.0,
        in_w11=False,
        derivative_l1=None,
        density=density,
        density_derivative=None,
        _sampler=lambda rng, size: rng.uniform(low, high, size),
        _cdf_grid=(np.array([low, high]), np.array([0.0, 1.0])),
        breakpoints=(low, high),
    )
    dist.validate()
    return dist


def triangular_density(half_width: float = 1.0, center: float = 0.0) -> DisorderDistribution:
    """Symmetric triangle on [center - a, center + a]: in W^{1,1}."""
    a = float(half_width)
    if a <= 0:
        raise ValueError("half_width must be positive")
    peak = 1.0 / a

    def density(x):
        x = np.asarray(x, dtype=float)
        return np.maximum(0.0, (a - np.abs(x - center)) / a**2)

    def density_derivative(x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x - center) < a
        return np.where(inside, -np.sign(x - center) / a**2, 0.0)

    grid = np.linspace(center - a, center + a, 20_001)
    cdf_vals = np.where(
        grid <= center,
        0.5 * ((grid - (center - a)) / a) ** 2,
        1.0 - 0.5 * (((center + a) - grid) / a) ** 2,
    )
    dist = DisorderDistribution(
        kind="triangular",
        params={"half_width": a, "center": center},
        radius=max(abs(center - a), abs(center + a)),
        sup_norm=peak,
        l1_norm=1.0,
        in_w11=True,
        derivative_l1=2.0 / a,
        density=density,
        density_derivative=density_derivative,
        _sampler=lambda rng, size: rng.triangular(center - a, center, center + a, size),
        _cdf_grid=(grid, cdf_vals),
        breakpoints=(center - a, center, center + a),
    )
    dist.validate()
    return dist


def _grid_sampler(grid: np.ndarray, density_values: np.ndarray):
    cum = integrate.cumulative_trapezoid(density_values, grid, initial=0.0)
    cum /= cum[-1]

    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        return np.interp(rng.random(size), cum, grid)

    return sampler, (grid, cum)


def smooth_bump_density(radius: float = 1.0) -> DisorderDistribution:
    """Compactly supported C^infinity bump on [-radius, radius]."""
    r = float(radius)
    if r <= 0:
        raise ValueError("radius must be positive")

    def shape(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        inside = np.abs(t) < 1.0
        ti = t[inside]
        out[inside] = np.exp(-1.0 / (1.0 - ti**2))
        return out

    norm = integrate.quad(lambda t: float(shape(t)), -1.0, 1.0, epsabs=1e-14)[0] * r

    def density(x):
        return shape(np.asarray(x, dtype=float) / r) / norm

    def density_derivative(x):
        t = np.asarray(x, dtype=float) / r
        out = np.zeros_like(t)
        inside = np.abs(t) < 1.0
        ti = t[inside]
        out[inside] = (
            np.exp(-1.0 / (1.0 - ti**2)) * (-2.0 * ti / (1.0 - ti**2) ** 2)
        )
        return out / (norm * r)

    deriv_l1 = integrate.quad(
        lambda x: abs(float(density_derivative(x))), -r, r, limit=200
    )[0]
    grid = np.linspace(-r, r, 200_001)
    sampler, cdf_grid = _grid_sampler(grid, density(grid))
    dist = DisorderDistribution(
        kind="smooth-bump",
        params={"radius": r},
        radius=r,
        sup_norm=float(density(np.array([0.0]))[0]),
        l1_norm=1.0,
        in_w11=True,
        derivative_l1=float(deriv_l1),
        density=density,
        density_derivative=density_derivative,
        _sampler=sampler,
        _cdf_grid=cdf_grid,
    )
    dist.validate()
    return dist


def table_density(points: Sequence[float], weights: Sequence[float]) -> DisorderDistribution:
    """Piecewise-linear density through (points, weights), normalized.

    W^{1,1} membership requires the endpoint weights to vanish (otherwise the
    extension by zero jumps).
    """
    xs = np.asarray(points, dtype=float)
    ys = np.asarray(weights, dtype=float)
    if xs.ndim != 1 or xs.size < 2 or np.any(np.diff(xs) <= 0):
        raise ValueError("points must be strictly increasing, length >= 2")
    if ys.shape != xs.shape or np.any(ys < 0) or not np.any(ys > 0):
        raise ValueError("weights must be non-negative with positive mass")
    total = np.trapezoid(ys, xs)  # exact for a piecewise-linear density
    ys = ys / total

    def density(x):
        x = np.asarray(x, dtype=float)
        return np.interp(x, xs, ys, left=0.0, right=0.0)

    slopes = np.diff(ys) / np.diff(xs)
    in_w11 = bool(abs(ys[0]) < 1e-12 and abs(ys[-1]) < 1e-12)

    def density_derivative(x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(slopes) - 1)
        out = slopes[idx]
        return np.where((x <= xs[0]) | (x >= xs[-1]), 0.0, out)

    deriv_l1 = float(np.sum(np.abs(slopes) * np.diff(xs))) if in_w11 else None
    fine = np.unique(np.concatenate([xs, np.linspace(xs[0], xs[-1], 20_001)]))
    sampler, cdf_grid = _grid_sampler(fine, density(fine))
    dist = DisorderDistribution(
        kind="table-density",
        params={"points": [float(v) for v in xs], "weights": [float(v) for v in ys]},
        radius=float(max(abs(xs[0]), abs(xs[-1]))),
        sup_norm=float(ys.max()),
        l1_norm=1.0,
        in_w11=in_w11,
        derivative_l1=deriv_l1,
        density=density,
        density_derivative=density_derivative if in_w11 else None,
        _sampler=sampler,
        _cdf_grid=cdf_grid,
        breakpoints=(float(xs[0]), float(xs[-1])),
    )
    dist.validate()
    return dist


DENSITY_BUILDERS = {
    "uniform": uniform_density,
    "triangular": triangular_density,
    "smooth-bump": smooth_bump_density,
    "table-density": table_density,
}


def sample_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-sample generator derived from (master seed, sample index).

    The derivation is independent of worker count and scheduling, which is
    what makes Monte Carlo reductions reproducible across pool sizes.
    """
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    )


@dataclass(frozen=True)
class DisorderField:
    """One realization: a coupling per relevant lattice site."""

    couplings: Mapping[Site, float]
    provenance: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(
            self,
            "couplings",
            {tuple(k): float(v) for k, v in dict(self.couplings).items()},
        )

    def __getitem__(self, site) -> float:
        site = tuple(site)
        try:
            return self.couplings[site]
        except KeyError:
            raise MissingCouplingError(
                f"no coupling for site {site}; the field does not cover it"
            ) from None

    def sites(self) -> SiteSet:
        return SiteSet(self.couplings.keys())

    def covers(self, sites: SiteSet) -> bool:
        return all(s in self.couplings for s in sites.sites)

    def to_text(self) -> str:
        some = next(iter(self.couplings))
        lines = []
        if self.provenance:
            for k in sorted(self.provenance):
                lines.append(f"# {k} = {self.provenance[k]}")
        lines.append(str(len(some)))
        for site in sorted(self.couplings):
            lines.append(
                " ".join(str(c) for c in site) + " " + repr(self.couplings[site])
            )
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "DisorderField":
        lines = [
            ln
            for ln in (raw.strip() for raw in text.splitlines())
            if ln and not ln.startswith("#")
        ]
        d = int(lines[0])
        couplings = {}
        for ln in lines[1:]:
            toks = ln.split()
            couplings[tuple(int(t) for t in toks[:d])] = float(toks[d])
        return DisorderField(couplings=couplings)


def coupling_closure(region: SiteSet, u: SingleSitePotential) -> SiteSet:
    """Sites whose coupling influences the potential somewhere in ``region``.

    These are the k with u(x - k) != 0 for some x in the region, i.e. the
    region translated by the reflected support.
    """
    out = set()
    for x in region.sites:
        for t in u.support.sites:
            out.add(tuple(a - b for a, b in zip(x, t)))
    return SiteSet(out)


def sample_field(
    distribution: DisorderDistribution,
    region: SiteSet,
    u: SingleSitePotential,
    master_seed: int,
    index: int = 0,
) -> DisorderField:
    """Draw one field on the coupling closure of ``region``."""
    closure = coupling_closure(region, u)
    rng = sample_rng(master_seed, index)
    draws = distribution.sample(rng, len(closure))
    return DisorderField(
        couplings={s: float(v) for s, v in zip(closure.sites, draws)},
        provenance={"master_seed": master_seed, "index": index, "kind": distribution.kind},
    )


@dataclass(frozen=True)
class AssumptionReport:
    """Which hypotheses the (u, density) pair satisfies, plus the constants."""

    a1: bool
    a2: bool
    b1: bool
    b2: bool
    u_sum: float
    u_l1: float
    u_l1_diameter: int
    density_radius: float
    density_sup: float
    density_derivative_l1: Optional[float]
    u_min_boundary: float

    def as_dict(self) -> dict:
        return {
            "A1": self.a1,
            "A2": self.a2,
            "B1": self.b1,
            "B2": self.b2,
            "u_sum": self.u_sum,
            "u_l1": self.u_l1,
            "u_l1_diameter": self.u_l1_diameter,
            "density_radius": self.density_radius,
            "density_sup": self.density_sup,
            "density_derivative_l1": self.density_derivative_l1,
            "u_min_boundary": self.u_min_boundary,
        }


def check_assumptions(u: SingleSitePotential, distribution: DisorderDistribution) -> AssumptionReport:
    """Report-only evaluation of the two assumption tracks."""
    return AssumptionReport(
        a1=True,  # every built-in density is bounded with compact support
        a2=u.boundary_positive(),
        b1=distribution.in_w11,
        b2=u.values_sum != 0.0,
        u_sum=u.values_sum,
        u_l1=u.l1_norm,
        u_l1_diameter=u.l1_diameter,
        density_radius=distribution.radius,
        density_sup=distribution.sup_norm,
        density_derivative_l1=distribution.derivative_l1,
        u_min_boundary=u.min_abs_on_boundary(),
    )


def potential_field(
    field: DisorderField, u: SingleSitePotential, region: SiteSet
) -> dict[Site, float]:
    """Exact finite convolution of couplings with the profile, per site."""
    out = {}
    for x in region.sites:
        total = 0.0
        for t, v in zip(u.support.sites, u.values):
            k = tuple(a - b for a, b in zip(x, t))
            total += field[k] * v
        out[x] = total
    return out


@dataclass(frozen=True)
class LatticeOperator:
    """Dense square matrix indexed by a SiteSet."""

    index: SiteSet
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.shape != (len(self.index), len(self.index)):
            raise ValueError("matrix shape must match the index set")
        object.__setattr__(self, "matrix", m)

    def entry(self, x, y) -> complex:
        return self.matrix[self.index.index(x), self.index.index(y)]


def hopping_matrix(region: SiteSet) -> np.ndarray:
    """Adjacency of the region under |x-y|_1 = 1 (the kinetic part is -1 * this)."""
    n = len(region)
    m = np.zeros((n, n))
    for i, s in enumerate(region.sites):
        for nb in neighbors(s):
            if nb in region:
                m[i, region.index(nb)] = 1.0
    return m


def hamiltonian(
    region: SiteSet,
    lam: float,
    u: Optional[SingleSitePotential] = None,
    field: Optional[DisorderField] = None,
) -> LatticeOperator:
    """Assemble -Laplacian + lam * V over the region.  Real symmetric.

    ``lam = 0`` gives the free restriction and needs no profile or field.
    """
    if lam < 0:
        raise ValueError("disorder strength must be non-negative")
    m = -hopping_matrix(region)
    if lam != 0.0:
        if u is None or field is None:
            raise ValueError("nonzero disorder needs a profile and a field")
        pot = potential_field(field, u, region)
        for i, s in enumerate(region.sites):
            m[i, i] = lam * pot[s]
    return LatticeOperator(index=region, matrix=m)


def restrict(op: LatticeOperator, region: SiteSet) -> LatticeOperator:
    """Compression to a subset of the index (delete outside rows/columns)."""
    if not region.issubset(op.index):
        raise ValueError("restriction target must be part of the index")
    idx = np.array([op.index.index(s) for s in region.sites])
    return LatticeOperator(index=region, matrix=op.matrix[np.ix_(idx, idx)])


def deplete(op: LatticeOperator, inner: SiteSet) -> tuple[LatticeOperator, LatticeOperator]:
    """Remove hopping across the inner/outer cut.

    Returns (depleted, removed) with ``depleted = op + removed`` as matrices:
    the removed part carries +1 exactly on the deleted bonds, matching the
    sign convention of the kinetic term.
    """
    if not inner.issubset(op.index):
        raise ValueError("inner region must be part of the index")
    mask = np.zeros(len(op.index), dtype=bool)
    for s in inner.sites:
        mask[op.index.index(s)] = True
    cross = mask[:, None] ^ mask[None, :]
    removed = np.where(cross & (op.matrix == -1.0), 1.0, 0.0)
    return (
        LatticeOperator(index=op.index, matrix=op.matrix + removed),
        LatticeOperator(index=op.index, matrix=removed),
    )


def operator_norm_bound(
    dimension: int, lam: float, u: SingleSitePotential, distribution: DisorderDistribution
) -> float:
    """Uniform bound 2d + lam * R * |u|_1 on the operator norm."""
    return 2.0 * dimension + lam * distribution.radius * u.l1_norm
