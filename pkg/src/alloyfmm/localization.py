"""Box regularity at real energies, certified interval scans, the two-box
probability experiment, eigenvalue-count (Wegner-type) scaling, and direct
eigenfunction-decay evidence.

Real-energy Green columns come from one symmetric eigendecomposition per box
and disorder draw; exact eigenvalues both detect spectrum hits and feed the
resolvent Lipschitz bound that certification propagates along the energy
axis.  Quantifying over a whole interval is undecidable by sampling energies,
so scans certify subintervals conservatively: anything left uncertified
counts against the event being estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fitting import loglinear_fit, wilson_interval
from .geometry import SiteSet, boundaries, box, metrics
from .model import (
    DisorderDistribution,
    DisorderField,
    SingleSitePotential,
    hamiltonian,
    sample_field,
)

__all__ = [
    "RegularityVerdict",
    "BoxSpectralData",
    "ScanResult",
    "TwoBoxResult",
    "WegnerResult",
    "EigenLocalizationResult",
    "ScaleSequence",
    "regularity",
    "certified_scan",
    "two_box_experiment",
    "wegner_experiment",
    "eigen_localization",
    "scale_sequence",
]

SPECTRUM_HIT_RELATIVE = 1e-12


@dataclass(frozen=True)
class RegularityVerdict:
    center: tuple
    radius: int
    energy: float
    rate: float
    status: str  # "regular" | "singular" | "spectrum"
    sup_value: float
    witness: Optional[tuple]
    threshold: float

    @property
    def regular(self) -> bool:
        return self.status == "regular"


class BoxSpectralData:
    """Eigendecomposition of one box operator with its boundary bookkeeping."""

    def __init__(self, region: SiteSet, center, matrix: np.ndarray, radius: Optional[int] = None):
        self.region = region
        self.center = tuple(center)
        self.radius = int(radius) if radius is not None else metrics(region)["diam_inf"] // 2
        self.evals, self.evecs = np.linalg.eigh(matrix)
        self.center_idx = region.index(self.center)
        self.boundary = boundaries(region).interior
        self.boundary_idx = np.array([region.index(s) for s in self.boundary.sites])
        self.norm = max(float(np.max(np.abs(self.evals))), 1.0)

    @classmethod
    def from_model(
        cls,
        center,
        radius: int,
        lam: float,
        u: Optional[SingleSitePotential],
        field: Optional[DisorderField],
    ) -> "BoxSpectralData":
        region = box(radius, center)
        op = hamiltonian(region, lam, u, field)
        return cls(region, center, op.matrix, radius=radius)

    def spectrum_distance(self, energy: float) -> float:
        return float(np.min(np.abs(self.evals - energy)))

    def hits_spectrum(self, energy: float) -> bool:
        return self.spectrum_distance(energy) < SPECTRUM_HIT_RELATIVE * self.norm

    def boundary_green(self, energy: float) -> np.ndarray:
        """|G(E; center, w)| for w on the interior boundary."""
        coeff = self.evecs[self.center_idx, :] / (self.evals - energy)
        col = self.evecs[self.boundary_idx, :] @ coeff
        return np.abs(col)

    def boundary_sup(self, energy: float) -> tuple[float, tuple]:
        vals = self.boundary_green(energy)
        j = int(np.argmax(vals))
        return float(vals[j]), self.boundary.sites[j]


def regularity(
    center,
    radius: int,
    energy: float,
    rate: float,
    lam: float,
    u: Optional[SingleSitePotential],
    field: Optional[DisorderField],
) -> RegularityVerdict:
    """Classify one box at one real energy against the e^{-rate*radius} test."""
    data = BoxSpectralData.from_model(center, radius, lam, u, field)
    return _verdict(data, energy, rate)


def _verdict(data: BoxSpectralData, energy: float, rate: float) -> RegularityVerdict:
    threshold = math.exp(-rate * data.radius)
    if data.hits_spectrum(energy):
        return RegularityVerdict(
            center=data.center,
            radius=data.radius,
            energy=float(energy),
            rate=rate,
            status="spectrum",
            sup_value=math.inf,
            witness=None,
            threshold=threshold,
        )
    sup, witness = data.boundary_sup(energy)
    status = "regular" if sup <= threshold else "singular"
    return RegularityVerdict(
        center=data.center,
        radius=data.radius,
        energy=float(energy),
        rate=rate,
        status=status,
        sup_value=sup,
        witness=witness,
        threshold=threshold,
    )


@dataclass(frozen=True)
class ScanResult:
    grid: tuple
    sup_values: tuple
    spectrum_distances: tuple
    subintervals: tuple  # (lo, hi, certified)
    certified_measure: float
    uncertified_measure: float
    threshold: float

    @property
    def fully_certified(self) -> bool:
        return self.uncertified_measure == 0.0

    def certified_mask(self) -> np.ndarray:
        return np.array([c for _, _, c in self.subintervals], dtype=bool)


def certified_scan(
    data: BoxSpectralData,
    interval: tuple[float, float],
    rate: float,
    grid_step: float,
) -> ScanResult:
    """Grid scan with sound propagation between grid points.

    A subinterval is certified only when a neighboring grid value plus the
    propagated resolvent-Lipschitz margin stays under the threshold; grid
    points at (or numerically inside) the spectrum certify nothing.
    """
    if grid_step <= 0:
        raise ValueError("grid step must be positive")
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise ValueError("interval must have positive length")
    n_cells = max(1, math.ceil((b - a) / grid_step - 1e-12))
    grid = np.linspace(a, b, n_cells + 1)
    threshold = math.exp(-rate * data.radius)
    sups = np.empty(grid.size)
    dists = np.empty(grid.size)
    for i, e in enumerate(grid):
        dists[i] = data.spectrum_distance(float(e))
        if data.hits_spectrum(float(e)):
            sups[i] = math.inf
        else:
            sups[i] = data.boundary_sup(float(e))[0]

    def reach_ok(i: int, width: float) -> bool:
        if not math.isfinite(sups[i]):
            return False
        d = dists[i]
        if d <= width:
            return False
        margin = width / (d * (d - width))
        return sups[i] + margin <= threshold

    cells = []
    certified_len = 0.0
    for i in range(n_cells):
        lo, hi = float(grid[i]), float(grid[i + 1])
        width = hi - lo
        ok = reach_ok(i, width) or reach_ok(i + 1, width)
        if ok:
            certified_len += width
        cells.append((lo, hi, ok))
    return ScanResult(
        grid=tuple(float(e) for e in grid),
        sup_values=tuple(float(v) for v in sups),
        spectrum_distances=tuple(float(v) for v in dists),
        subintervals=tuple(cells),
        certified_measure=certified_len,
        uncertified_measure=(b - a) - certified_len,
        threshold=threshold,
    )


@dataclass(frozen=True)
class TwoBoxResult:
    probability: float
    confidence: tuple[float, float]
    samples: int
    events: int
    mean_uncovered_fraction: float
    separation: int
    radius: int


def two_box_experiment(
    x,
    y,
    radius: int,
    interval: tuple[float, float],
    rate: float,
    samples: int,
    lam: float,
    u: SingleSitePotential,
    density: DisorderDistribution,
    seed: int,
    grid_step: float = 0.01,
) -> TwoBoxResult:
    """Probability that, over the whole interval, at least one of two
    well-separated boxes beats the regularity test at every energy.

    Both boxes are scanned on the same grid per disorder draw; a subinterval
    left uncertified in both boxes defeats the event (conservative direction).
    """
    x, y = tuple(x), tuple(y)
    sep = max(abs(a - b) for a, b in zip(x, y))
    needed = 2 * radius + u.linf_diameter + 1
    if sep < needed:
        raise ValueError(
            f"centers are too close: separation {sep} < 2L + diam(support) + 1 = {needed}"
        )
    region_x = box(radius, x)
    region_y = box(radius, y)
    joint = region_x.union(region_y)
    events = 0
    uncovered = []
    a, b = float(interval[0]), float(interval[1])
    for i in range(samples):
        field = sample_field(density, joint, u, seed, i)
        data_x = BoxSpectralData.from_model(x, radius, lam, u, field)
        data_y = BoxSpectralData.from_model(y, radius, lam, u, field)
        scan_x = certified_scan(data_x, interval, rate, grid_step)
        scan_y = certified_scan(data_y, interval, rate, grid_step)
        mask = scan_x.certified_mask() | scan_y.certified_mask()
        widths = np.array([hi - lo for lo, hi, _ in scan_x.subintervals])
        missing = float(np.sum(widths[~mask]))
        uncovered.append(missing / (b - a))
        if missing == 0.0:
            events += 1
    lo_ci, hi_ci = wilson_interval(events, samples)
    return TwoBoxResult(
        probability=events / samples,
        confidence=(lo_ci, hi_ci),
        samples=samples,
        events=events,
        mean_uncovered_fraction=float(np.mean(uncovered)),
        separation=sep,
        radius=radius,
    )


@dataclass(frozen=True)
class WegnerResult:
    widths: tuple
    mean_counts: tuple
    stderrs: tuple
    exponent: float
    exponent_requirement: float
    exponent_ok: bool
    volume_ratio: Optional[float]
    count_ratio: Optional[float]
    linear_in_volume: Optional[bool]
    samples: int


def wegner_experiment(
    radius: int,
    interval: tuple[float, float],
    widths: Sequence[float],
    samples: int,
    lam: float,
    u: SingleSitePotential,
    density: DisorderDistribution,
    seed: int,
    s_reference: float,
    second_radius: Optional[int] = None,
    dimension: int = 1,
) -> WegnerResult:
    """Expected eigenvalue counts in shrinking windows, with the width fit.

    Windows are centered in the interval.  The fitted width exponent must
    reach the reference power minus 0.15 (steeper is allowed: the bound is
    one-sided).  With a second box size the count ratio at the widest window
    is compared against the volume ratio.
    """
    widths = sorted(float(w) for w in widths)
    if not widths or widths[-1] > (interval[1] - interval[0]):
        raise ValueError("windows must fit inside the scanned interval")
    center = 0.5 * (interval[0] + interval[1])

    def counts_for(r: int, seed_offset: int) -> np.ndarray:
        region = box(r, (0,) * dimension)
        table = np.zeros((samples, len(widths)))
        for i in range(samples):
            field = sample_field(density, region, u, seed, seed_offset + i)
            op = hamiltonian(region, lam, u, field)
            evals = np.linalg.eigvalsh(op.matrix)
            for j, w in enumerate(widths):
                lo, hi = center - w / 2.0, center + w / 2.0
                table[i, j] = np.count_nonzero((evals >= lo) & (evals <= hi))
        return table

    table = counts_for(radius, 0)
    means = table.mean(axis=0)
    stderrs = table.std(axis=0, ddof=1) / math.sqrt(samples)
    usable = means > 0
    if np.count_nonzero(usable) < 2:
        raise ValueError("all windows are empty; widen them or add samples")
    fit = loglinear_fit(
        np.log(np.asarray(widths)[usable]), np.log(means[usable])
    )
    requirement = s_reference - 0.15
    volume_ratio = count_ratio = linear = None
    if second_radius is not None:
        table2 = counts_for(second_radius, samples)
        mean2 = table2.mean(axis=0)[-1]
        volume_ratio = len(box(second_radius, (0,) * dimension)) / len(
            box(radius, (0,) * dimension)
        )
        count_ratio = float(mean2 / means[-1])
        linear = bool(abs(count_ratio / volume_ratio - 1.0) <= 0.25)
    return WegnerResult(
        widths=tuple(widths),
        mean_counts=tuple(float(v) for v in means),
        stderrs=tuple(float(v) for v in stderrs),
        exponent=fit.slope,
        exponent_requirement=requirement,
        exponent_ok=bool(fit.slope >= requirement),
        volume_ratio=volume_ratio,
        count_ratio=count_ratio,
        linear_in_volume=linear,
        samples=samples,
    )


@dataclass(frozen=True)
class EigenLocalizationResult:
    decay_rates: tuple
    iprs: tuple
    median_rate: float
    median_ipr: float
    kept_vectors: int
    samples: int
    records: tuple  # (sample, energy, rate, ipr)


def eigen_localization(
    radius: int,
    lam: float,
    u: Optional[SingleSitePotential],
    density: Optional[DisorderDistribution],
    samples: int,
    seed: int,
    window: Optional[tuple[float, float]] = None,
    core_radius: Optional[int] = None,
    dimension: int = 1,
) -> EigenLocalizationResult:
    """Per-eigenvector decay rates and inverse participation ratios.

    The decay rate fits shell-maximum amplitudes against sup-distance from
    the amplitude peak, skipping a core of radius L/4 so the fit measures the
    tail rather than the peak profile.  Vectors with fewer than four usable
    shells are dropped from the rate statistics (their participation ratios
    are kept).
    """
    region = box(radius, (0,) * dimension)
    sites = np.array(region.sites)
    if core_radius is None:
        core_radius = max(1, radius // 4)
    rates = []
    iprs = []
    records = []
    for i in range(samples):
        if lam == 0.0:
            op = hamiltonian(region, 0.0)
        else:
            field = sample_field(density, region, u, seed, i)
            op = hamiltonian(region, lam, u, field)
        evals, evecs = np.linalg.eigh(op.matrix)
        for j, energy in enumerate(evals):
            if window is not None and not window[0] <= energy <= window[1]:
                continue
            psi = np.abs(evecs[:, j])
            ipr = float(np.sum(psi**4))
            iprs.append(ipr)
            peak = sites[int(np.argmax(psi))]
            dist = np.max(np.abs(sites - peak), axis=1)
            rmax = int(dist.max())
            shell_r = []
            shell_amp = []
            for r in range(core_radius + 1, rmax + 1):
                on_shell = psi[dist == r]
                # amplitudes near the underflow floor are numerical noise
                if on_shell.size and float(on_shell.max()) > 1e-200:
                    shell_r.append(r)
                    shell_amp.append(float(on_shell.max()))
            rate = None
            if len(shell_r) >= 4:
                fit = loglinear_fit(np.array(shell_r, dtype=float), np.log(shell_amp))
                rate = -fit.slope
                rates.append(rate)
            records.append((i, float(energy), rate, ipr))
    if not rates:
        raise ValueError("no eigenvector produced enough shells for a rate fit")
    return EigenLocalizationResult(
        decay_rates=tuple(rates),
        iprs=tuple(iprs),
        median_rate=float(np.median(rates)),
        median_ipr=float(np.median(iprs)),
        kept_vectors=len(rates),
        samples=samples,
        records=tuple(records),
    )


@dataclass(frozen=True)
class ScaleSequence:
    """Geometric-power ladder of box sizes for the scale induction schedule."""

    start: int
    growth: float
    lengths: tuple

    def __iter__(self):
        return iter(self.lengths)


def scale_sequence(
    start: int,
    growth: float,
    count: int,
    moment_power: Optional[float] = None,
    dimension: Optional[int] = None,
) -> ScaleSequence:
    """L_{k} = round(L_{k-1}^growth), strictly increasing.

    When a probability power p and dimension are supplied, the growth
    exponent must lie in (1, 2p/d) with p > d.
    """
    if start < 2:
        raise ValueError("starting scale must be at least 2 to grow")
    if growth <= 1.0:
        raise ValueError("growth exponent must exceed 1")
    if moment_power is not None:
        if dimension is None:
            raise ValueError("dimension is required alongside the probability power")
        if not moment_power > dimension:
            raise ValueError("probability power must exceed the dimension")
        if not growth < 2.0 * moment_power / dimension:
            raise ValueError("growth exponent must stay below 2p/d")
    lengths = [int(start)]
    for _ in range(count - 1):
        nxt = round(lengths[-1] ** growth)
        if nxt <= lengths[-1]:
            raise ValueError("sequence stopped increasing")
        lengths.append(int(nxt))
    return ScaleSequence(start=int(start), growth=float(growth), lengths=tuple(lengths))
