"""Green functions and the exact operator identities behind the moment bounds.

One LU factorization per (operator, energy); columns are solved on demand and
cached.  Real energies go through the same path with a reciprocal-condition
estimate guarding against hitting the spectrum.  Identity checks compare
dense-algebra left and right sides and report the elementwise deviation
scaled by the operand magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

from .geometry import Site, SiteSet, boundaries, box, fatten
from .model import (
    DisorderDistribution,
    DisorderField,
    LatticeOperator,
    SingleSitePotential,
    coupling_closure,
    deplete,
    hamiltonian,
    operator_norm_bound,
    restrict,
    sample_field,
    sample_rng,
    triangular_density,
    uniform_density,
)

__all__ = [
    "SpectrumHitError",
    "GreenEvaluator",
    "IdentityReport",
    "CombesThomasBound",
    "green",
    "schur_complement",
    "verify_schur_identities",
    "verify_geometric_identities",
    "combes_thomas",
    "verify_combes_thomas",
    "fuzz_identities",
    "fuzz_schur_independence",
]

RCOND_FLOOR = 1e-12
RESIDUAL_TOL = 1e-10


class SpectrumHitError(ArithmeticError):
    """(H - z) is numerically singular: the energy sits in the spectrum."""

    def __init__(self, message: str, rcond: float):
        super().__init__(message)
        self.rcond = rcond


class GreenEvaluator:
    """Factorization of (H - z) with cached column solves."""

    def __init__(self, op: LatticeOperator, z: complex, rcond_floor: float = RCOND_FLOOR):
        self.op = op
        self.z = complex(z)
        n = len(op.index)
        self._shifted = op.matrix.astype(np.complex128) - self.z * np.eye(n)
        anorm = np.linalg.norm(self._shifted, 1)
        self._lu = sla.lu_factor(self._shifted, check_finite=False)
        if self.z.imag == 0.0:
            rcond, info = lapack.zgecon(self._lu[0], anorm, norm="1")
            if info != 0 or not np.isfinite(rcond) or rcond < rcond_floor:
                raise SpectrumHitError(
                    f"(H - z) is singular to working precision at z={self.z}: "
                    f"rcond={rcond:.3e}",
                    rcond=float(rcond),
                )
            self.rcond = float(rcond)
        else:
            self.rcond = None
        self._columns: dict[Site, np.ndarray] = {}

    def column(self, y) -> np.ndarray:
        """The resolvent column G(z; ., y), solved once and cached."""
        y = tuple(y)
        cached = self._columns.get(y)
        if cached is not None:
            return cached
        n = len(self.op.index)
        rhs = np.zeros(n, dtype=np.complex128)
        rhs[self.op.index.index(y)] = 1.0
        g = sla.lu_solve(self._lu, rhs, check_finite=False)
        residual = np.linalg.norm(self._shifted @ g - rhs, np.inf)
        if residual >= RESIDUAL_TOL * (1.0 + np.linalg.norm(g, np.inf)):
            raise ArithmeticError(
                f"column solve residual {residual:.3e} exceeds tolerance at z={self.z}"
            )
        if self.z.imag != 0.0:
            bound = (1.0 + 1e-9) / abs(self.z.imag)
            if np.linalg.norm(g) > bound:
                raise ArithmeticError(
                    "resolvent column exceeds the 1/|Im z| norm bound"
                )
        self._columns[y] = g
        return g

    def entry(self, x, y) -> complex:
        return complex(self.column(y)[self.op.index.index(x)])

    def matrix(self) -> np.ndarray:
        """Full inverse (one solve per column, cached)."""
        cols = [self.column(y) for y in self.op.index.sites]
        return np.column_stack(cols)


def green(op: LatticeOperator, z: complex, pairs: Sequence[tuple]) -> list[complex]:
    """Matrix elements of (H - z)^{-1}; zero when either site is off-index."""
    evaluator: Optional[GreenEvaluator] = None
    out = []
    for x, y in pairs:
        if tuple(x) not in op.index or tuple(y) not in op.index:
            out.append(0.0 + 0.0j)
            continue
        if evaluator is None:
            evaluator = GreenEvaluator(op, z)
        out.append(evaluator.entry(x, y))
    return out


def schur_complement(op: LatticeOperator, inner: SiteSet, z: complex) -> LatticeOperator:
    """Boundary operator folding the exterior's resolvent into the inner set.

    Entry (x, y) sums exterior Green elements between the exterior neighbors
    of x and y; rows and columns vanish off the interior boundary of the
    inner set.  Depends on the potential outside the inner set only.
    """
    if not inner.issubset(op.index):
        raise ValueError("inner set must be contained in the operator index")
    n_in = len(inner)
    exterior = op.index.difference(inner)
    if len(exterior) == 0:
        return LatticeOperator(index=inner, matrix=np.zeros((n_in, n_in), dtype=np.complex128))
    from .geometry import neighbors as _neighbors

    contact = np.zeros((len(exterior), n_in))
    for j, y in enumerate(inner.sites):
        for nb in _neighbors(y):
            if nb in exterior:
                contact[exterior.index(nb), j] = 1.0
    h_ext = restrict(op, exterior)
    shifted = h_ext.matrix.astype(np.complex128) - z * np.eye(len(exterior))
    lu = sla.lu_factor(shifted, check_finite=False)
    solved = sla.lu_solve(lu, contact.astype(np.complex128), check_finite=False)
    return LatticeOperator(index=inner, matrix=contact.T @ solved)


@dataclass(frozen=True)
class IdentityReport:
    """Outcome of one identity check at one tolerance."""

    identity: str
    deviation: float
    relative_deviation: float
    dims: tuple
    tolerance: float
    passed: bool

    def to_record(self) -> dict:
        return {
            "identity": self.identity,
            "deviation": self.deviation,
            "relative_deviation": self.relative_deviation,
            "dims": list(self.dims),
            "pass": self.passed,
        }


def _report(identity: str, lhs: np.ndarray, rhs: np.ndarray, tolerance: float,
            extra_exact: float = 0.0) -> IdentityReport:
    deviation = float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0
    scale = max(1.0, float(np.max(np.abs(lhs))) if lhs.size else 0.0,
                float(np.max(np.abs(rhs))) if rhs.size else 0.0)
    return _report_from_deviation(
        identity, deviation, scale, lhs.shape, tolerance, extra_exact
    )


def _report_from_deviation(
    identity: str,
    deviation: float,
    scale: float,
    dims: tuple,
    tolerance: float,
    extra_exact: float = 0.0,
) -> IdentityReport:
    relative = deviation / max(1.0, scale)
    passed = relative <= tolerance and extra_exact == 0.0
    return IdentityReport(
        identity=identity,
        deviation=max(deviation, extra_exact),
        relative_deviation=relative,
        dims=tuple(dims),
        tolerance=tolerance,
        passed=passed,
    )


def _inverse(matrix: np.ndarray, z: complex) -> np.ndarray:
    n = matrix.shape[0]
    return np.linalg.inv(matrix.astype(np.complex128) - z * np.eye(n))


def _compress(op_index: SiteSet, full: np.ndarray, subset: SiteSet) -> np.ndarray:
    idx = np.array([op_index.index(s) for s in subset.sites])
    return full[np.ix_(idx, idx)]


def verify_schur_identities(
    op: LatticeOperator,
    inner1: SiteSet,
    inner2: SiteSet,
    z: complex,
    tolerance: float = 1e-9,
) -> tuple[IdentityReport, IdentityReport]:
    """One-level and nested boundary-complement identities.

    The nested identity requires inner1 to avoid the interior boundary of
    inner2 entirely; violations are rejected before any linear algebra runs.
    """
    if not inner1.issubset(inner2) or not inner2.issubset(op.index):
        raise ValueError("need inner1 within inner2 within the operator index")
    inner_bd2 = boundaries(inner2).interior
    if any(s in inner1 for s in inner_bd2.sites):
        raise ValueError(
            "nested identity hypothesis fails: inner1 touches the interior "
            "boundary of inner2"
        )
    g_full = _inverse(op.matrix, z)

    # one level, on inner1
    b1 = schur_complement(op, inner1, z)
    h1 = restrict(op, inner1)
    rhs1 = np.linalg.inv(
        h1.matrix.astype(np.complex128) - b1.matrix - z * np.eye(len(inner1))
    )
    lhs1 = _compress(op.index, g_full, inner1)
    report1 = _report("schur-one-level", lhs1, rhs1, tolerance)

    # nested: fold the exterior into inner2 first, then reduce to inner1
    ring = inner2.difference(inner1)
    b2 = schur_complement(op, inner2, z)
    ring_idx = np.array([inner2.index(s) for s in ring.sites])
    b2_ring = b2.matrix[np.ix_(ring_idx, ring_idx)]
    h_ring = restrict(op, ring)
    middle = h_ring.matrix.astype(np.complex128) - b2_ring - z * np.eye(len(ring))
    from .geometry import neighbors as _neighbors

    hop = np.zeros((len(inner1), len(ring)))
    for i, s in enumerate(inner1.sites):
        for nb in _neighbors(s):
            if nb in ring:
                hop[i, ring.index(nb)] = 1.0
    correction = hop @ np.linalg.solve(middle, hop.T.astype(np.complex128))
    h_inner1 = restrict(op, inner1)
    rhs2 = np.linalg.inv(
        h_inner1.matrix.astype(np.complex128) - z * np.eye(len(inner1)) - correction
    )
    lhs2 = _compress(op.index, g_full, inner1)
    report2 = _report("schur-nested", lhs2, rhs2, tolerance)
    return report1, report2


def verify_geometric_identities(
    op: LatticeOperator,
    inner: SiteSet,
    z: complex,
    tolerance: float = 1e-9,
) -> tuple[IdentityReport, IdentityReport, IdentityReport]:
    """First-order, second-order and block-structure facts for the cut operator."""
    if not inner.issubset(op.index):
        raise ValueError("inner region must be part of the index")
    g = _inverse(op.matrix, z)
    dep, removed = deplete(op, inner)
    g_dep = _inverse(dep.matrix, z)
    t = removed.matrix

    first_a = g_dep + g_dep @ t @ g
    first_b = g_dep + g @ t @ g_dep
    dev_first = max(
        float(np.max(np.abs(g - first_a))), float(np.max(np.abs(g - first_b)))
    )
    scale_first = max(
        float(np.max(np.abs(g))),
        float(np.max(np.abs(first_a))),
        float(np.max(np.abs(first_b))),
    )
    report_first = _report_from_deviation(
        "first-order", dev_first, scale_first, g.shape, tolerance
    )

    second = g_dep + g_dep @ t @ g_dep + g_dep @ t @ g @ t @ g_dep
    report_second = _report("second-order", g, second, tolerance)

    # block facts: inner block equals the directly assembled restriction,
    # cross blocks vanish exactly, and cutting against the complement is the
    # same operator.
    mask = np.zeros(len(op.index), dtype=bool)
    for s in inner.sites:
        mask[op.index.index(s)] = True
    cross = mask[:, None] ^ mask[None, :]
    cross_max = float(np.max(np.abs(g_dep[cross]))) if cross.any() else 0.0
    dep_c, _ = deplete(op, op.index.difference(inner))
    complement_dev = float(np.max(np.abs(dep.matrix - dep_c.matrix)))
    if len(inner) > 0:
        h_inner = restrict(op, inner)
        g_inner = _inverse(h_inner.matrix, z)
        inner_block = _compress(op.index, g_dep, inner)
        report_block = _report(
            "depleted-structure", inner_block, g_inner, tolerance,
            extra_exact=max(cross_max, complement_dev),
        )
    else:
        report_block = _report(
            "depleted-structure",
            np.zeros((0, 0)),
            np.zeros((0, 0)),
            tolerance,
            extra_exact=max(cross_max, complement_dev),
        )
    return report_first, report_second, report_block


@dataclass(frozen=True)
class CombesThomasBound:
    """Deterministic off-diagonal decay far from the spectrum."""

    dimension: int
    margin: float  # distance M from the spectrum
    norm_bound: float  # K, uniform bound on |H|
    rate: float  # min(1, ln(M / 4d))
    decaying: bool

    def value(self, l1_distance: float) -> float:
        return (2.0 / self.margin) * np.exp(-self.rate * l1_distance)

    @property
    def min_abs_energy(self) -> float:
        return self.norm_bound + self.margin


def combes_thomas(dimension: int, margin: float, norm_bound: float) -> CombesThomasBound:
    """Rate min(1, ln(M/4d)) and prefactor 2/M; flagged non-decaying if the
    rate is not positive (small margins carry no information)."""
    if margin < 1.0:
        raise ValueError("margin must be at least 1")
    rate = min(1.0, float(np.log(margin / (4.0 * dimension))))
    return CombesThomasBound(
        dimension=dimension,
        margin=float(margin),
        norm_bound=float(norm_bound),
        rate=rate,
        decaying=rate > 0.0,
    )


def verify_combes_thomas(
    region: SiteSet,
    lam: float,
    u: SingleSitePotential,
    density: DisorderDistribution,
    margin: float,
    samples: int,
    seed: int,
    z: Optional[complex] = None,
) -> dict:
    """Check the decay bound on every site pair over sampled disorder.

    The energy defaults to the real point K + M just beyond the uniform
    norm bound.  Returns the worst observed ratio |G| / bound; the bound
    holds when that ratio stays at or below 1.
    """
    d = region.dimension
    norm_bound = operator_norm_bound(d, lam, u, density)
    ct = combes_thomas(d, margin, norm_bound)
    if not ct.decaying:
        return {"bound": ct, "checked": 0, "worst_ratio": float("nan"),
                "passed": False, "skipped": "rate <= 0: bound carries no decay"}
    if z is None:
        z = complex(norm_bound + margin)
    if abs(z) < norm_bound + margin - 1e-12:
        raise ValueError("need |z| >= K + M for the decay bound to apply")
    sites = region.sites
    l1 = np.array(
        [[sum(abs(a - b) for a, b in zip(s, t)) for t in sites] for s in sites],
        dtype=float,
    )
    bound_matrix = ct.value(l1)
    worst = 0.0
    for i in range(samples):
        field = sample_field(density, region, u, seed, i)
        op = hamiltonian(region, lam, u, field)
        g = np.abs(_inverse(op.matrix, z))
        worst = max(worst, float(np.max(g / bound_matrix)))
    return {"bound": ct, "checked": samples, "worst_ratio": worst,
            "passed": worst <= 1.0 + 1e-12, "skipped": None}


# ---------------------------------------------------------------------------
# randomized identity fuzzing
# ---------------------------------------------------------------------------


def _random_blob(rng: np.random.Generator, dimension: int, target: int) -> SiteSet:
    """Connected random set grown by neighbor accretion from the origin."""
    origin = (0,) * dimension
    chosen = {origin}
    frontier = list(set(n for n in _site_neighbors(origin)))
    while len(chosen) < target and frontier:
        pick = frontier.pop(int(rng.integers(len(frontier))))
        if pick in chosen:
            continue
        chosen.add(pick)
        for n in _site_neighbors(pick):
            if n not in chosen:
                frontier.append(n)
    return SiteSet(chosen)


def _site_neighbors(site):
    from .geometry import neighbors as _n

    return _n(site)


def _random_potential(rng: np.random.Generator, dimension: int) -> SingleSitePotential:
    size = int(rng.integers(1, 4))
    support = {(0,) * dimension}
    while len(support) < size:
        base = list(support)[int(rng.integers(len(support)))]
        nb = _site_neighbors(base)
        support.add(nb[int(rng.integers(len(nb)))])
    values = {}
    for s in support:
        mag = float(rng.uniform(0.3, 1.5))
        values[s] = mag if rng.random() < 0.5 else -mag
    return SingleSitePotential.from_pairs(values)


def _random_case(rng: np.random.Generator, dimension: int, max_sites: int):
    core_target = int(np.exp(rng.uniform(np.log(3), np.log(max(4, max_sites // 4)))))
    core = _random_blob(rng, dimension, core_target)
    gamma = fatten(core)
    while len(gamma) > max_sites:
        core = _random_blob(rng, dimension, max(3, core_target // 2))
        gamma = fatten(core)
        core_target //= 2
    u = _random_potential(rng, dimension)
    lam = float(rng.uniform(0.5, 5.0))
    density = uniform_density(-1, 1) if rng.random() < 0.5 else triangular_density(1.0)
    field = sample_field(density, gamma, u, int(rng.integers(2**32)), 0)
    op = hamiltonian(gamma, lam, u, field)
    z = complex(rng.uniform(-3, 3), rng.choice([-1, 1]) * rng.uniform(0.05, 1.5))
    keep = rng.random(len(gamma)) < rng.uniform(0.2, 0.8)
    if not keep.any():
        keep[int(rng.integers(len(gamma)))] = True
    if keep.all():
        keep[int(rng.integers(len(gamma)))] = False
    inner = SiteSet(
        (s for s, k in zip(gamma.sites, keep) if k), dimension=dimension
    )
    keep1 = rng.random(len(core)) < 0.5
    if not keep1.any():
        keep1[int(rng.integers(len(core)))] = True
    inner1 = SiteSet((s for s, k in zip(core.sites, keep1) if k), dimension=dimension)
    inner2 = fatten(inner1)  # all lattice neighbors present, so the nested
    # hypothesis holds by construction
    return op, z, inner, inner1, inner2


def fuzz_identities(
    cases: int,
    seed: int,
    tolerance: float = 1e-8,
    dimensions: Sequence[int] = (1, 2),
    max_sites: int = 300,
) -> dict:
    """Randomized verification of all five operator identities.

    Every case checks the one-level and nested boundary complements, both
    resolvent expansions, and the cut-operator block structure on a fresh
    random geometry, potential and disorder draw.
    """
    rng = np.random.default_rng(seed)
    reports: list[IdentityReport] = []
    for _ in range(cases):
        dimension = int(rng.choice(list(dimensions)))
        op, z, inner, inner1, inner2 = _random_case(rng, dimension, max_sites)
        r1, r2 = verify_schur_identities(op, inner1, inner2, z, tolerance)
        g1, g2, g3 = verify_geometric_identities(op, inner, z, tolerance)
        reports.extend([r1, r2, g1, g2, g3])
    failed = [r for r in reports if not r.passed]
    return {
        "cases": cases,
        "reports": reports,
        "checks": len(reports),
        "failures": len(failed),
        "worst_relative_deviation": max(r.relative_deviation for r in reports),
        "passed": not failed,
    }


def fuzz_schur_independence(
    cases: int, seed: int, tolerance: float = 1e-12, dimensions: Sequence[int] = (1, 2)
) -> dict:
    """Perturb couplings that act only inside the inner set; the boundary
    complement must not move."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        dimension = int(rng.choice(list(dimensions)))
        u = _random_potential(rng, dimension)
        reach = max(abs(c) for s in u.support.sites for c in s)
        inner_radius = reach + 1
        outer_radius = inner_radius + int(rng.integers(1, 3))
        gamma = box(outer_radius, (0,) * dimension)
        inner = box(inner_radius, (0,) * dimension)
        lam = float(rng.uniform(0.5, 5.0))
        density = triangular_density(1.0)
        base_seed = int(rng.integers(2**32))
        field = sample_field(density, gamma, u, base_seed, 0)
        z = complex(rng.uniform(-2, 2), rng.choice([-1, 1]) * rng.uniform(0.1, 1.0))
        op = hamiltonian(gamma, lam, u, field)
        b_ref = schur_complement(op, inner, z)
        # couplings whose whole footprint inside gamma lies in the inner set
        closure = coupling_closure(gamma, u)
        movable = []
        for k in closure.sites:
            footprint = [
                tuple(a + b for a, b in zip(k, t)) for t in u.support.sites
            ]
            hits = [s for s in footprint if s in gamma]
            if hits and all(s in inner for s in hits):
                movable.append(k)
        assert movable, "geometry guarantees at least the central coupling moves"
        perturbed = dict(field.couplings)
        shake = sample_rng(base_seed, 1)
        for k in movable:
            perturbed[k] = float(shake.uniform(-1, 1))
        op2 = hamiltonian(gamma, lam, u, DisorderField(couplings=perturbed))
        b_new = schur_complement(op2, inner, z)
        worst = max(worst, float(np.max(np.abs(b_ref.matrix - b_new.matrix))))
    return {"cases": cases, "worst_deviation": worst, "passed": worst <= tolerance}
