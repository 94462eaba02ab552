"""Alloy model assembly: potentials, densities, fields, Hamiltonians."""

import numpy as np
import pytest
from scipy import stats

from alloyfmm.geometry import SiteSet, box
from alloyfmm.model import (
    DisorderField,
    MissingCouplingError,
    SingleSitePotential,
    check_assumptions,
    coupling_closure,
    deplete,
    hamiltonian,
    operator_norm_bound,
    potential_field,
    restrict,
    sample_field,
    sample_rng,
    smooth_bump_density,
    table_density,
    triangular_density,
    uniform_density,
)

U_SIGN = SingleSitePotential.chain([1.0, -0.5])
U_GOOD = SingleSitePotential.chain([1.0, -0.5, 1.0])
U_POINT = SingleSitePotential.chain([1.0])


class TestPotential:
    def test_constants(self):
        assert U_SIGN.values_sum == 0.5
        assert U_SIGN.l1_norm == 1.5
        assert U_SIGN.l1_diameter == 1

    def test_origin_required(self):
        with pytest.raises(ValueError):
            SingleSitePotential.from_pairs({(1,): 1.0})

    def test_zero_value_rejected(self):
        with pytest.raises(ValueError):
            SingleSitePotential.chain([1.0, 0.0, 1.0])


class TestAssumptions:
    def test_sign_flip_at_boundary(self):
        report = check_assumptions(U_SIGN, triangular_density(1.0))
        assert not report.a2  # negative value on the support edge
        assert report.b2 and report.u_sum == 0.5

    def test_boundary_positive_interior_negative(self):
        report = check_assumptions(U_GOOD, triangular_density(1.0))
        assert report.a2
        assert report.b1 and report.b2

    def test_rank_one(self):
        report = check_assumptions(U_POINT, uniform_density(0, 1))
        assert report.a2 and report.b2
        assert report.u_l1_diameter == 0
        assert not report.b1  # uniform density is not absolutely continuous


class TestPotentialField:
    def test_constant_couplings_point_support(self):
        region = box(3, (0,))
        field = DisorderField({(k,): 2.5 for k in range(-3, 4)})
        values = potential_field(field, U_POINT, region)
        assert all(v == 2.5 for v in values.values())

    def test_delta_coupling(self):
        field = DisorderField({(0,): 1.0, (1,): 0.0, (-1,): 0.0})
        values = potential_field(field, U_SIGN, SiteSet([(0,), (1,)]))
        assert values[(0,)] == 1.0 and values[(1,)] == -0.5

    def test_two_term_convolution(self):
        field = DisorderField({(0,): 2.0, (1,): 4.0})
        values = potential_field(field, U_SIGN, SiteSet([(1,)]))
        assert values[(1,)] == pytest.approx(2.0 * (-0.5) + 4.0 * 1.0)

    def test_missing_coupling_names_site(self):
        field = DisorderField({(0,): 1.0})
        with pytest.raises(MissingCouplingError, match=r"\(1,\)"):
            potential_field(field, U_SIGN, SiteSet([(1,), (2,)]))


class TestHamiltonian:
    def test_pure_hopping(self):
        op = hamiltonian(SiteSet([(0,), (1,)]), 0.0)
        assert np.array_equal(op.matrix, [[0.0, -1.0], [-1.0, 0.0]])

    def test_single_site(self):
        field = DisorderField({(0,): 3.0})
        op = hamiltonian(SiteSet([(0,)]), 2.0, U_POINT, field)
        assert op.matrix == np.array([[6.0]])

    def test_three_site_assembly(self):
        region = SiteSet([(0,), (1,), (2,)])
        field = DisorderField({(0,): 3.0, (1,): 1e-9, (2,): -1.0})
        op = hamiltonian(region, 2.0, U_POINT, field)
        expected = np.array(
            [[6.0, -1.0, 0.0], [-1.0, 2e-9, -1.0], [0.0, -1.0, -2.0]]
        )
        assert np.allclose(op.matrix, expected)

    def test_exactly_symmetric(self):
        rng = np.random.default_rng(0)
        density = triangular_density(1.0)
        for case in range(10):
            region = box(3, (0, 0))
            field = sample_field(density, region, U_GOOD, 100 + case)
            op = hamiltonian(region, float(rng.uniform(0.1, 5)), U_GOOD, field)
            assert np.array_equal(op.matrix, op.matrix.T)

    def test_restriction_consistency(self):
        density = triangular_density(1.0)
        gamma = box(4, (0,))
        field = sample_field(density, gamma, U_GOOD, 7)
        full = hamiltonian(gamma, 2.0, U_GOOD, field)
        for inner in (box(2, (0,)), SiteSet([(-3,), (0,), (1,)])):
            direct = hamiltonian(inner, 2.0, U_GOOD, field)
            assert np.array_equal(restrict(full, inner).matrix, direct.matrix)

    def test_norm_bound_on_samples(self):
        density = uniform_density(-1, 1)
        region = box(8, (0,))
        lam = 3.0
        bound = operator_norm_bound(1, lam, U_GOOD, density)
        for i in range(20):
            field = sample_field(density, region, U_GOOD, 55, i)
            op = hamiltonian(region, lam, U_GOOD, field)
            evals = np.linalg.eigvalsh(op.matrix)
            assert np.max(np.abs(evals)) <= bound + 1e-12


class TestDeplete:
    def _chain_op(self):
        region = SiteSet([(0,), (1,), (2,), (3,)])
        return hamiltonian(region, 0.0)

    def test_empty_inner(self):
        op = self._chain_op()
        dep, removed = deplete(op, SiteSet([], dimension=1))
        assert np.array_equal(dep.matrix, op.matrix)
        assert not removed.matrix.any()

    def test_full_inner(self):
        op = self._chain_op()
        dep, removed = deplete(op, op.index)
        assert np.array_equal(dep.matrix, op.matrix)
        assert not removed.matrix.any()

    def test_single_cut(self):
        op = self._chain_op()
        dep, removed = deplete(op, SiteSet([(0,), (1,)]))
        assert np.count_nonzero(removed.matrix) == 2
        assert removed.entry((1,), (2,)) == 1.0
        assert removed.entry((2,), (1,)) == 1.0
        assert dep.entry((1,), (2,)) == 0.0

    def test_operator_identity_and_block_structure(self):
        rng = np.random.default_rng(3)
        density = triangular_density(1.0)
        region = box(2, (0, 0))
        field = sample_field(density, region, U_GOOD, 11)
        op = hamiltonian(region, 1.5, U_GOOD, field)
        keep = rng.random(len(region)) < 0.5
        inner = SiteSet(
            [s for s, k in zip(region.sites, keep) if k], dimension=2
        )
        dep, removed = deplete(op, inner)
        assert np.array_equal(op.matrix, dep.matrix - removed.matrix)
        mask = np.array([s in inner for s in region.sites])
        cross = mask[:, None] ^ mask[None, :]
        assert not dep.matrix[cross].any()

    def test_inner_outside_index_rejected(self):
        op = self._chain_op()
        with pytest.raises(ValueError):
            deplete(op, SiteSet([(9,)]))


class TestDensities:
    @pytest.mark.parametrize(
        "dist,in_w11",
        [
            (uniform_density(-1, 1), False),
            (triangular_density(1.0), True),
            (smooth_bump_density(1.0), True),
            (table_density([-1, -0.5, 0, 0.5, 1], [0, 1, 2, 1, 0]), True),
        ],
    )
    def test_flags_and_radius(self, dist, in_w11):
        assert dist.in_w11 == in_w11
        assert dist.radius == 1.0
        assert dist.l1_norm == 1.0

    def test_asymmetric_uniform_radius(self):
        d = uniform_density(-0.25, 2.0)
        assert d.radius == 2.0

    def test_triangular_derivative_l1(self):
        assert triangular_density(0.5).derivative_l1 == pytest.approx(4.0)

    @pytest.mark.parametrize(
        "dist",
        [
            uniform_density(-1, 1),
            triangular_density(1.0),
            smooth_bump_density(1.0),
            table_density([-1, 0, 1], [0, 1, 0]),
        ],
    )
    def test_sampler_matches_density(self, dist):
        rng = np.random.default_rng(2024)
        draws = dist.sample(rng, 100_000)
        ks = stats.kstest(draws, dist.cdf).statistic
        assert ks < 0.01

    def test_table_endpoint_mass_breaks_w11(self):
        d = table_density([-1, 0, 1], [1, 1, 1])
        assert not d.in_w11


class TestFields:
    def test_coupling_closure_reflected(self):
        closure = coupling_closure(SiteSet([(0,), (1,)]), U_SIGN)
        # couplings at x - support for each x in the region
        assert closure == SiteSet([(-1,), (0,), (1,)])

    def test_sampling_covers_closure_and_reproduces(self):
        density = triangular_density(1.0)
        region = box(3, (0,))
        f1 = sample_field(density, region, U_GOOD, 99, 4)
        f2 = sample_field(density, region, U_GOOD, 99, 4)
        assert f1.couplings == f2.couplings
        assert f1.covers(coupling_closure(region, U_GOOD))
        f3 = sample_field(density, region, U_GOOD, 99, 5)
        assert f1.couplings != f3.couplings

    def test_text_roundtrip(self):
        field = sample_field(triangular_density(1.0), box(2, (0, 0)), U_GOOD, 1, 0)
        back = DisorderField.from_text(field.to_text())
        assert back.couplings == field.couplings

    def test_sample_rng_is_index_keyed(self):
        a = sample_rng(5, 0).random(4)
        b = sample_rng(5, 0).random(4)
        c = sample_rng(5, 1).random(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
