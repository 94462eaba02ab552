"""Lattice geometry on Z^d: site sets, boundaries, boxes, annuli, components.

Sites are plain tuples of ints.  A :class:`SiteSet` is an immutable, lexically
sorted collection with an index map, so that operators assembled over the same
set are laid out identically across runs and platforms.  All constructions
that take an ambient set clip their output to it at build time; downstream
code never re-filters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

Site = tuple

__all__ = [
    "Site",
    "SiteSet",
    "Boundaries",
    "AnnulusGeometry",
    "neighbors",
    "boundaries",
    "outer_boundary",
    "fatten",
    "box",
    "annulus_geometry",
    "components",
    "component_of",
    "metrics",
    "sites_to_text",
    "sites_from_text",
]


def _as_site(coords) -> Site:
    site = tuple(int(c) for c in coords)
    if not site:
        raise ValueError("sites need at least one coordinate")
    return site


class SiteSet:
    """Finite ordered set of lattice points, sorted lexicographically.

    An empty set is allowed but must state its dimension explicitly.
    """

    __slots__ = ("sites", "dimension", "_index")

    def __init__(self, sites: Iterable[Sequence[int]], dimension: Optional[int] = None):
        normalized = sorted({_as_site(s) for s in sites})
        dims = {len(s) for s in normalized}
        if dimension is not None:
            dims.add(int(dimension))
        if len(dims) > 1:
            raise ValueError(f"mixed dimensions in site list: {sorted(dims)}")
        if not dims:
            raise ValueError("an empty SiteSet needs an explicit dimension")
        self.sites: tuple[Site, ...] = tuple(normalized)
        self.dimension: int = dims.pop()
        self._index = {s: i for i, s in enumerate(self.sites)}

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self) -> Iterator[Site]:
        return iter(self.sites)

    def __contains__(self, site) -> bool:
        return tuple(site) in self._index

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SiteSet)
            and self.sites == other.sites
            and self.dimension == other.dimension
        )

    def __hash__(self) -> int:
        return hash((self.dimension, self.sites))

    def __repr__(self) -> str:
        if len(self) <= 6:
            return f"SiteSet({list(self.sites)})"
        return f"SiteSet(<{len(self)} sites in Z^{self.dimension}>)"

    def index(self, site) -> int:
        """Ordinal of ``site`` in the sorted order; KeyError if absent."""
        return self._index[tuple(site)]

    def translate(self, shift: Sequence[int]) -> "SiteSet":
        shift = _as_site(shift)
        return SiteSet(
            (tuple(a + b for a, b in zip(s, shift)) for s in self.sites),
            dimension=self.dimension,
        )

    def union(self, other: "SiteSet") -> "SiteSet":
        return SiteSet(self.sites + other.sites, dimension=self.dimension)

    def difference(self, other) -> "SiteSet":
        return SiteSet(
            (s for s in self.sites if s not in other), dimension=self.dimension
        )

    def intersection(self, other) -> "SiteSet":
        return SiteSet(
            (s for s in self.sites if s in other), dimension=self.dimension
        )

    def issubset(self, other) -> bool:
        return all(s in other for s in self.sites)


def neighbors(site: Site) -> tuple[Site, ...]:
    """The 2d nearest neighbors of a site (|x - y|_1 = 1)."""
    out = []
    for axis in range(len(site)):
        for step in (-1, 1):
            n = list(site)
            n[axis] += step
            out.append(tuple(n))
    return tuple(out)


def _in_ambient(site: Site, ambient: Optional[SiteSet]) -> bool:
    return ambient is None or site in ambient


@dataclass(frozen=True)
class Boundaries:
    interior: SiteSet
    exterior: SiteSet
    bonds: tuple[tuple[Site, Site], ...]


def boundaries(region: SiteSet, ambient: Optional[SiteSet] = None) -> Boundaries:
    """Interior boundary, exterior boundary and crossing bonds of a region.

    Interior: sites of ``region`` with fewer than 2d neighbors inside it
    (depends on the region only).  Exterior: ambient sites outside ``region``
    adjacent to it; ``ambient=None`` means all of Z^d.  Bonds are ordered
    pairs (inside, outside) with the outside endpoint in the ambient set.
    An empty region yields empty boundaries, not an error.
    """
    if ambient is not None and not region.issubset(ambient):
        raise ValueError("region must be contained in the ambient set")
    two_d = 2 * region.dimension
    interior = []
    exterior = set()
    bonds = []
    for s in region.sites:
        inside = 0
        for n in neighbors(s):
            if n in region:
                inside += 1
            elif _in_ambient(n, ambient):
                exterior.add(n)
                bonds.append((s, n))
        if inside < two_d:
            interior.append(s)
    d = region.dimension
    return Boundaries(
        interior=SiteSet(interior, dimension=d),
        exterior=SiteSet(exterior, dimension=d),
        bonds=tuple(sorted(bonds)),
    )


def outer_boundary(region: SiteSet, ambient: Optional[SiteSet] = None) -> SiteSet:
    """Exterior boundary only (ambient-clipped)."""
    return boundaries(region, ambient).exterior


def fatten(region: SiteSet, ambient: Optional[SiteSet] = None) -> SiteSet:
    """One-step fattening: the region plus its exterior boundary."""
    return region.union(outer_boundary(region, ambient))


def box(radius: int, center: Sequence[int]) -> SiteSet:
    """Cube of side 2*radius + 1 around ``center`` in the sup metric."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    center = _as_site(center)
    sites = [()]
    for axis in range(len(center)):
        sites = [
            s + (center[axis] + offset,)
            for s in sites
            for offset in range(-radius, radius + 1)
        ]
    return SiteSet(sites)


def components(region: SiteSet) -> tuple[SiteSet, ...]:
    """Partition into maximal |.|_1-connected components (flood fill)."""
    unseen = set(region.sites)
    parts = []
    while unseen:
        seed = unseen.pop()
        stack = [seed]
        part = {seed}
        while stack:
            s = stack.pop()
            for n in neighbors(s):
                if n in unseen:
                    unseen.remove(n)
                    part.add(n)
                    stack.append(n)
        parts.append(SiteSet(part))
    return tuple(sorted(parts, key=lambda p: p.sites))


def component_of(region: SiteSet, site) -> SiteSet:
    """The connected component containing ``site``; KeyError if absent."""
    site = tuple(site)
    if site not in region:
        raise KeyError(f"site {site} is not in the set")
    stack = [site]
    part = {site}
    while stack:
        s = stack.pop()
        for n in neighbors(s):
            if n in region and n not in part:
                part.add(n)
                stack.append(n)
    return SiteSet(part)


def metrics(region: SiteSet) -> dict:
    """Exact sup-norm and 1-norm diameters of a non-empty finite set."""
    if len(region) == 0:
        raise ValueError("diameters of an empty set are undefined")
    diam_inf = 0
    diam_l1 = 0
    sites = region.sites
    for i, a in enumerate(sites):
        for b in sites[i + 1 :]:
            diff = [abs(x - y) for x, y in zip(a, b)]
            diam_inf = max(diam_inf, max(diff))
            diam_l1 = max(diam_l1, sum(diff))
    return {"diam_inf": diam_inf, "diam_l1": diam_l1}


@dataclass(frozen=True)
class AnnulusGeometry:
    """Annulus of potential-support translates around the sphere of a box.

    ``sphere`` is the interior boundary of the radius-L box around the
    center, taken in the full lattice.  ``shell`` is the union of support
    translates anchored on the sphere, clipped to the domain; ``shell_plus``
    is its one-step fattening.  ``core``/``core_plus`` are the analogous
    unions over the whole box.  Removing ``shell`` disconnects the center
    from everything outside ``core_plus``.
    """

    center: Site
    radius: int
    sphere: SiteSet
    shell: SiteSet
    shell_plus: SiteSet
    core: SiteSet
    core_plus: SiteSet


def _translates_union(
    support: SiteSet, anchors: Iterable[Site], domain: Optional[SiteSet]
) -> SiteSet:
    out = set()
    for b in anchors:
        for t in support.sites:
            s = tuple(a + c for a, c in zip(t, b))
            if _in_ambient(s, domain):
                out.add(s)
    if not out:
        raise ValueError("translate union is empty inside the domain")
    return SiteSet(out)


def annulus_geometry(
    support: SiteSet,
    center: Sequence[int],
    radius: int,
    domain: Optional[SiteSet] = None,
    check_disconnection: bool = True,
) -> AnnulusGeometry:
    """Build the annulus sets for one center; ``domain=None`` means Z^d.

    Requires ``radius >= diam_inf(support) + 2`` (with 0 in the support) so
    the center itself stays clear of the fattened shell.
    """
    center = _as_site(center)
    d = support.dimension
    if len(center) != d:
        raise ValueError("center dimension does not match the support")
    if (0,) * d not in support:
        raise ValueError("support must contain the origin")
    diam = metrics(support)["diam_inf"]
    if radius < diam + 2:
        raise ValueError(
            f"annulus radius {radius} is too small: need at least "
            f"diam(support) + 2 = {diam + 2} for the shell to clear the center"
        )
    full_box = box(radius, center)
    sphere = boundaries(full_box).interior  # in the full lattice, not clipped
    shell = _translates_union(support, sphere.sites, domain)
    shell_plus = fatten(shell, domain)
    core = _translates_union(support, full_box.sites, domain)
    core_plus = fatten(core, domain)
    ann = AnnulusGeometry(
        center=center,
        radius=radius,
        sphere=sphere,
        shell=shell,
        shell_plus=shell_plus,
        core=core,
        core_plus=core_plus,
    )
    if check_disconnection:
        _check_disconnection(ann, domain)
    return ann


def _check_disconnection(ann: AnnulusGeometry, domain: Optional[SiteSet]) -> None:
    """Removing the shell must separate the center from far sites.

    Checked inside the domain when it is finite and extends beyond the core;
    for the full lattice the check runs in a window comfortably containing
    the fattened core.
    """
    if domain is None:
        window_radius = ann.radius + metrics(ann.core_plus)["diam_inf"]
        window = box(window_radius, ann.center)
    else:
        window = domain
        if all(s in ann.core_plus for s in domain.sites):
            return  # domain does not extend beyond the core: nothing to separate
    rest = window.difference(ann.shell)
    if ann.center not in rest:
        raise ValueError("center fell inside the shell; geometry is inconsistent")
    parts = components(rest)
    if len(parts) < 2:
        raise ValueError(
            "removing the shell does not disconnect the region "
            "(domain too small or support too sparse)"
        )
    center_part = component_of(rest, ann.center)
    for s in rest.sites:
        if s not in ann.core_plus and s in center_part:
            raise ValueError("center component leaks past the fattened core")


def sites_to_text(region: SiteSet) -> str:
    """Line-oriented dump: dimension header, then one site per line."""
    lines = [str(region.dimension)]
    lines.extend(" ".join(str(c) for c in s) for s in region.sites)
    return "\n".join(lines) + "\n"


def sites_from_text(text: str) -> SiteSet:
    lines = [
        ln
        for ln in (raw.strip() for raw in text.splitlines())
        if ln and not ln.startswith("#")
    ]
    if not lines:
        raise ValueError("empty site dump")
    d = int(lines[0])
    sites = []
    for ln in lines[1:]:
        coords = tuple(int(tok) for tok in ln.split())
        if len(coords) != d:
            raise ValueError(f"site line {ln!r} does not match dimension {d}")
        sites.append(coords)
    return SiteSet(sites, dimension=d)
