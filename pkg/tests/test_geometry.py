"""Lattice geometry: boundary operators, boxes, annuli, components."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alloyfmm.geometry import (
    SiteSet,
    annulus_geometry,
    boundaries,
    box,
    component_of,
    components,
    metrics,
    neighbors,
    sites_from_text,
    sites_to_text,
)


def sites_1d(*xs):
    return SiteSet([(x,) for x in xs])


class TestBoundaries:
    def test_interval_1d(self):
        b = boundaries(sites_1d(0, 1, 2, 3))
        assert b.interior == sites_1d(0, 3)
        assert b.exterior == sites_1d(-1, 4)
        assert set(b.bonds) == {((0,), (-1,)), ((3,), (4,))}

    def test_square_2d(self):
        region = SiteSet([(0, 0), (0, 1), (1, 0), (1, 1)])
        b = boundaries(region)
        assert b.interior == region  # every site has 2 < 4 inner neighbors
        assert len(b.exterior) == 8
        assert len(b.bonds) == 8

    def test_halfline_ambient_clips_exterior(self):
        region = box(2, (0,))
        ambient = sites_1d(*range(0, 10)).union(region)
        b = boundaries(region, ambient)
        assert b.exterior == sites_1d(3)
        assert b.bonds == (((2,), (3,)),)

    def test_empty_region(self):
        b = boundaries(SiteSet([], dimension=2))
        assert len(b.interior) == 0 and len(b.exterior) == 0 and b.bonds == ()

    def test_region_outside_ambient_rejected(self):
        with pytest.raises(ValueError):
            boundaries(sites_1d(0, 1), ambient=sites_1d(0))

    def test_bond_endpoints_split_across_boundaries(self):
        region = box(2, (0, 0))
        b = boundaries(region)
        for u, v in b.bonds:
            assert u in b.interior and v in b.exterior
            assert sum(abs(a - c) for a, c in zip(u, v)) == 1


class TestBox:
    def test_single_site(self):
        assert box(0, (0, 0)) == SiteSet([(0, 0)])

    def test_cardinality_2d(self):
        assert len(box(1, (0, 0))) == 9

    def test_offset_1d(self):
        assert box(3, (5,)) == sites_1d(2, 3, 4, 5, 6, 7, 8)

    @pytest.mark.parametrize("d,L", [(1, 1), (1, 4), (2, 1), (2, 3), (3, 2)])
    def test_sphere_cardinality(self, d, L):
        sphere = boundaries(box(L, (0,) * d)).interior
        assert len(sphere) == (2 * L + 1) ** d - (2 * L - 1) ** d


class TestAnnulus:
    def test_point_support(self):
        ann = annulus_geometry(SiteSet([(0,)]), (0,), 2)
        assert ann.sphere == sites_1d(-2, 2)
        assert ann.shell == sites_1d(-2, 2)
        assert ann.shell_plus == sites_1d(-3, -2, -1, 1, 2, 3)

    def test_two_site_support(self):
        ann = annulus_geometry(SiteSet([(0,), (1,)]), (0,), 3)
        assert ann.shell == sites_1d(-3, -2, 3, 4)
        window = box(10, (0,))
        rest = window.difference(ann.shell)
        assert component_of(rest, (0,)) == sites_1d(-1, 0, 1, 2)

    def test_figure_halfplane_geometry(self):
        # split support in a half-plane: the shell is clipped at the wall and
        # still pens the center into a bounded component
        support = SiteSet(
            [(i, j) for i in range(-2, 3) for j in range(-2, 3)]
            + [(i, j) for i in range(4, 7) for j in range(4, 7)]
        )
        domain = SiteSet(
            [(i, j) for i in range(0, 31) for j in range(-30, 31)]
        )
        ann = annulus_geometry(support, (0, 0), 10, domain=domain)
        assert all(s[0] >= 0 for s in ann.shell.sites)
        rest = domain.difference(ann.shell)
        parts = components(rest)
        assert len(parts) >= 2
        center_part = component_of(rest, (0, 0))
        assert all(s in ann.core_plus for s in center_part.sites)
        far = (30, 30)
        assert far in rest and far not in center_part

    def test_radius_too_small_rejected(self):
        support = SiteSet([(0,), (1,), (2,)])  # sup-diameter 2
        with pytest.raises(ValueError, match="too small"):
            annulus_geometry(support, (0,), 3)

    def test_nesting_invariants(self):
        support = SiteSet([(0,), (1,)])
        ann = annulus_geometry(support, (0,), 4)
        assert ann.shell.issubset(ann.shell_plus)
        assert ann.shell.issubset(ann.core)
        assert ann.core.issubset(ann.core_plus)

    def test_center_clears_fattened_shell(self):
        support = SiteSet([(0,), (1,), (2,)])
        for radius in (4, 5, 7):
            ann = annulus_geometry(support, (3,), radius)
            assert (3,) not in ann.shell_plus
            # any site far beyond the reach of the shell is clear of it too
            far = (3 + 2 * radius + 2 + 1,)
            assert far not in ann.shell_plus


class TestComponents:
    def test_two_intervals(self):
        parts = components(sites_1d(0, 1, 5, 6))
        assert set(parts) == {sites_1d(0, 1), sites_1d(5, 6)}

    def test_punctured_box(self):
        region = box(1, (0,)).difference(sites_1d(0))
        assert set(components(region)) == {sites_1d(-1), sites_1d(1)}

    def test_component_of_missing_site(self):
        with pytest.raises(KeyError):
            component_of(sites_1d(0, 1), (5,))

    @settings(max_examples=60, deadline=None)
    @given(
        st.sets(
            st.tuples(st.integers(-8, 8), st.integers(-8, 8)),
            min_size=1,
            max_size=200,
        )
    )
    def test_matches_union_find_oracle(self, raw):
        region = SiteSet(raw)
        parent = {s: s for s in region.sites}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for s in region.sites:
            for n in neighbors(s):
                if n in region:
                    ra, rb = find(s), find(n)
                    if ra != rb:
                        parent[ra] = rb
        oracle = {}
        for s in region.sites:
            oracle.setdefault(find(s), set()).add(s)
        expected = {frozenset(g) for g in oracle.values()}
        got = {frozenset(p.sites) for p in components(region)}
        assert got == expected


class TestMetrics:
    def test_singleton(self):
        assert metrics(sites_1d(0)) == {"diam_inf": 0, "diam_l1": 0}

    def test_interval(self):
        assert metrics(sites_1d(0, 1, 2)) == {"diam_inf": 2, "diam_l1": 2}

    def test_diagonal_pair(self):
        m = metrics(SiteSet([(0, 0), (2, 3)]))
        assert m == {"diam_inf": 3, "diam_l1": 5}

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            metrics(SiteSet([], dimension=1))


class TestSiteSet:
    def test_sorted_and_indexed(self):
        s = SiteSet([(3,), (1,), (2,)])
        assert s.sites == ((1,), (2,), (3,))
        assert [s.index(x) for x in s.sites] == [0, 1, 2]

    def test_no_duplicates(self):
        assert len(SiteSet([(1,), (1,), (2,)])) == 2

    def test_mixed_dimension_rejected(self):
        with pytest.raises(ValueError):
            SiteSet([(1,), (1, 2)])

    @settings(max_examples=40, deadline=None)
    @given(
        st.sets(
            st.tuples(st.integers(-99, 99), st.integers(-99, 99), st.integers(-99, 99)),
            min_size=1,
            max_size=40,
        )
    )
    def test_text_roundtrip(self, raw):
        region = SiteSet(raw)
        assert sites_from_text(sites_to_text(region)) == region
