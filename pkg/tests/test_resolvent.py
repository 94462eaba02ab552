"""Green functions, boundary complements, resolvent identities, decay bound."""

import numpy as np
import pytest

from alloyfmm.geometry import SiteSet, boundaries, box
from alloyfmm.model import (
    SingleSitePotential,
    hamiltonian,
    restrict,
    sample_field,
    triangular_density,
    uniform_density,
)
from alloyfmm.resolvent import (
    GreenEvaluator,
    SpectrumHitError,
    combes_thomas,
    fuzz_identities,
    fuzz_schur_independence,
    green,
    schur_complement,
    verify_combes_thomas,
    verify_geometric_identities,
    verify_schur_identities,
)

U_GOOD = SingleSitePotential.chain([1.0, -0.5, 1.0])
U_SIGN = SingleSitePotential.chain([1.0, -0.5])
RHO = triangular_density(1.0)


def chain(n):
    return SiteSet([(k,) for k in range(n)])


def sampled_op(region, lam, u, seed, index=0):
    field = sample_field(RHO, region, u, seed, index)
    return hamiltonian(region, lam, u, field)


class TestGreen:
    def test_single_free_site(self):
        op = hamiltonian(SiteSet([(0,)]), 0.0)
        (g,) = green(op, 1j, [((0,), (0,))])
        assert g == pytest.approx(1j)

    def test_two_site_closed_form(self):
        op = hamiltonian(chain(2), 0.0)
        (g,) = green(op, 2j, [((0,), (1,))])
        assert g == pytest.approx(1.0 / ((2j) ** 2 - 1.0))

    def test_matches_dense_inversion_oracle(self):
        op = sampled_op(chain(8), 1.0, U_SIGN, seed=momseed())
        z = 0.4 + 0.7j
        oracle = np.linalg.inv(op.matrix.astype(complex) - z * np.eye(8))
        pairs = [((i,), (j,)) for i in range(8) for j in range(8)]
        values = np.array(green(op, z, pairs)).reshape(8, 8)
        assert np.max(np.abs(values - oracle)) < 1e-10

    def test_outside_sites_give_zero(self):
        op = hamiltonian(chain(3), 0.0)
        values = green(op, 1j, [((0,), (9,)), ((-4,), (1,))])
        assert values == [0.0, 0.0]

    def test_symmetry(self):
        op = sampled_op(box(2, (0, 0)), 2.0, U_GOOD, seed=5)
        ev = GreenEvaluator(op, 0.3 + 0.5j)
        for x, y in [((0, 0), (2, -1)), ((1, 1), (-2, 0))]:
            assert ev.entry(x, y) == pytest.approx(ev.entry(y, x), rel=1e-10)

    def test_norm_bound_vs_imaginary_part(self):
        op = sampled_op(chain(12), 1.0, U_GOOD, seed=8)
        for z in (0.2 + 0.05j, -1.0 + 0.4j):
            ev = GreenEvaluator(op, z)
            g = ev.matrix()
            assert np.linalg.norm(g, 2) <= 1.0 / abs(z.imag) + 1e-9

    def test_real_energy_spectrum_hit(self):
        op = sampled_op(chain(6), 1.0, U_GOOD, seed=2)
        eigenvalue = float(np.linalg.eigvalsh(op.matrix)[2])
        with pytest.raises(SpectrumHitError):
            GreenEvaluator(op, eigenvalue)

    def test_real_energy_off_spectrum_solves(self):
        op = sampled_op(chain(6), 1.0, U_GOOD, seed=2)
        ev = GreenEvaluator(op, 50.0)
        assert abs(ev.entry((0,), (5,))) < 1e-6

    def test_resolvent_lipschitz_between_real_energies(self):
        op = sampled_op(chain(10), 1.0, U_GOOD, seed=4)
        evals = np.linalg.eigvalsh(op.matrix)
        e1, e2 = float(evals[-1]) + 0.5, float(evals[-1]) + 0.6
        g1 = GreenEvaluator(op, e1).matrix()
        g2 = GreenEvaluator(op, e2).matrix()
        lhs = np.max(np.abs(g1 - g2))
        bound = abs(e1 - e2) * np.linalg.norm(g1, 2) * np.linalg.norm(g2, 2)
        assert lhs <= bound * (1 + 1e-9)


def momseed():
    return 31


class TestSchurComplement:
    def test_no_exterior_gives_zero(self):
        op = sampled_op(chain(4), 1.0, U_SIGN, seed=1)
        b = schur_complement(op, op.index, 1j)
        assert not b.matrix.any()

    def test_corner_value_three_site_chain(self):
        op = hamiltonian(chain(3), 0.0)
        b = schur_complement(op, SiteSet([(0,)]), 1j)
        # exterior pair {1,2}: corner of the inverse of a free 2-chain
        expected = (-1j) / ((1j) ** 2 - 1.0)
        assert b.matrix[0, 0] == pytest.approx(expected)

    def test_support_pattern_on_inner_boundary(self):
        region = box(2, (0, 0))
        op = sampled_op(region, 1.5, U_GOOD, seed=6)
        inner = box(1, (0, 0))
        b = schur_complement(op, inner, 0.5j)
        inner_bd = boundaries(inner).interior
        for i, x in enumerate(inner.sites):
            for j, y in enumerate(inner.sites):
                if x not in inner_bd or y not in inner_bd:
                    assert b.matrix[i, j] == 0.0

    def test_one_level_identity_on_block(self):
        gamma = chain(6)
        op = sampled_op(gamma, 1.0, U_SIGN, seed=3)
        z = 1j
        inner = SiteSet([(0,), (1,)])
        full = np.linalg.inv(op.matrix.astype(complex) - z * np.eye(6))
        lhs = full[np.ix_([0, 1], [0, 1])]
        b = schur_complement(op, inner, z)
        rhs = np.linalg.inv(
            restrict(op, inner).matrix.astype(complex) - b.matrix - z * np.eye(2)
        )
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_two_by_two_interior_block_2d(self):
        region = SiteSet([(i, j) for i in range(4) for j in range(3)])
        op = sampled_op(region, 1.0, U_GOOD, seed=12)
        inner = SiteSet([(1, 1), (2, 1)])
        ring = SiteSet(
            [s for s in region.sites if s not in inner and any(
                sum(abs(a - b) for a, b in zip(s, t)) <= 2 for t in inner.sites)]
        )
        r1, r2 = verify_schur_identities(op, inner, op.index, 0.2 + 0.4j)
        assert r1.relative_deviation < 1e-9
        assert r2.relative_deviation < 1e-9


class TestSchurIdentities:
    def test_nested_pair_on_chain(self):
        op = sampled_op(chain(6), 1.0, U_GOOD, seed=9)
        inner1 = SiteSet([(2,), (3,)])
        inner2 = SiteSet([(1,), (2,), (3,), (4,)])
        r1, r2 = verify_schur_identities(op, inner1, inner2, 1j)
        assert r1.passed and r2.passed
        assert r1.deviation < 1e-10 and r2.deviation < 1e-10

    def test_degenerate_nesting_reduces_to_one_level(self):
        op = sampled_op(chain(7), 1.0, U_GOOD, seed=10)
        inner1 = SiteSet([(2,), (3,)])
        r1, r2 = verify_schur_identities(op, inner1, op.index, 0.1 + 0.8j)
        assert r1.passed and r2.passed

    def test_hypothesis_violation_rejected(self):
        op = sampled_op(chain(6), 1.0, U_GOOD, seed=9)
        inner1 = SiteSet([(0,), (1,)])
        inner2 = SiteSet([(0,), (1,), (2,)])  # its boundary contains (0,)
        with pytest.raises(ValueError, match="hypothesis"):
            verify_schur_identities(op, inner1, inner2, 1j)

    def test_independence_from_inner_couplings(self):
        res = fuzz_schur_independence(cases=20, seed=77)
        assert res["passed"]
        assert res["worst_deviation"] <= 1e-12


class TestGeometricIdentities:
    def test_trivial_cuts(self):
        op = sampled_op(chain(5), 1.0, U_SIGN, seed=14)
        for inner in (SiteSet([], dimension=1), op.index):
            r1, r2, r3 = verify_geometric_identities(op, inner, 0.7j)
            assert r1.deviation == 0.0
            assert r2.deviation == 0.0
            assert r3.passed

    def test_middle_block_chain(self):
        op = sampled_op(chain(12), 1.0, U_GOOD, seed=15)
        inner = SiteSet([(4,), (5,), (6,), (7,)])
        reports = verify_geometric_identities(op, inner, 0.3 + 0.1j)
        assert all(r.relative_deviation < 1e-9 for r in reports)
        assert all(r.passed for r in reports)

    def test_cross_component_terms_vanish_exactly(self):
        # cutting out the shell splits the domain; the zeroth and first order
        # terms connect the two far components through nothing and vanish
        from alloyfmm.geometry import annulus_geometry
        from alloyfmm.model import deplete

        support = SiteSet([(0,), (1,)])
        domain = box(12, (0,))
        ann = annulus_geometry(support, (0,), 4, domain=domain)
        op = sampled_op(domain, 1.0, U_SIGN, seed=16)
        dep, removed = deplete(op, ann.shell)
        z = 0.2 + 0.3j
        g_dep = np.linalg.inv(dep.matrix.astype(complex) - z * np.eye(len(domain)))
        x, y = domain.index((0,)), domain.index((11,))
        assert g_dep[x, y] == 0.0
        first = g_dep @ removed.matrix @ g_dep
        assert first[x, y] == 0.0

    def test_fuzz_all_identities(self):
        res = fuzz_identities(cases=40, seed=2025, tolerance=1e-8)
        assert res["passed"]
        assert res["worst_relative_deviation"] < 1e-10


class TestCombesThomas:
    def test_rate_one_at_e_margin(self):
        ct = combes_thomas(1, 4 * np.e, 2.0)
        assert ct.rate == pytest.approx(1.0)
        assert ct.decaying

    def test_flat_rate_flagged(self):
        ct = combes_thomas(2, 8.0, 2.0)
        assert ct.rate == pytest.approx(0.0)
        assert not ct.decaying

    def test_bound_holds_on_samples(self):
        region = chain(24)
        res = verify_combes_thomas(
            region, lam=1.0, u=U_GOOD, density=RHO, margin=4 * np.e,
            samples=10, seed=20,
        )
        assert res["passed"]
        assert res["worst_ratio"] <= 1.0

    def test_non_decaying_margin_skipped(self):
        res = verify_combes_thomas(
            chain(8), lam=1.0, u=U_GOOD, density=RHO, margin=2.0,
            samples=2, seed=1,
        )
        assert res["skipped"]
