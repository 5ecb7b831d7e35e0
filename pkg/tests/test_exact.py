import math

import numpy as np
import pytest

from perturbmap.exact import (
    MarginalTable,
    distribution,
    empirical_marginal,
    energy_table,
    exact_sample,
    log_partition,
    marginal,
    sample,
    total_variation,
    vertex_marginals,
)
from perturbmap.model import (
    InvalidModelError,
    PairwiseModel,
    SpinGlassConfig,
    StateSpaceTooLargeError,
    batch_energies,
    assignment_range,
    generate_spin_glass,
    state_strides,
)
from _stats import chi_square_pvalue, empirical_distribution

NEG_INF = float("-inf")

# Frozen by this module's own enumeration; guards against regressions.
LOGZ_3X3_SEED7_C1 = 9.068104023727983


def binary_vertex(a, b):
    return PairwiseModel([2], [np.array([a, b])])


class TestLogPartition:
    def test_two_equal_terms(self):
        assert log_partition(binary_vertex(0.0, 0.0)) == pytest.approx(math.log(2))

    def test_one_plus_three(self):
        assert log_partition(binary_vertex(0.0, math.log(3))) == pytest.approx(math.log(4))

    def test_frozen_spin_glass_constant(self):
        m = generate_spin_glass(SpinGlassConfig(3, 3, coupling_max=1.0, seed=7))
        assert log_partition(m) == pytest.approx(LOGZ_3X3_SEED7_C1, abs=1e-12)

    def test_cap_enforced(self):
        m = generate_spin_glass(SpinGlassConfig(3, 3, seed=0))
        with pytest.raises(StateSpaceTooLargeError):
            log_partition(m, max_states=100)

    def test_neg_inf_configurations_contribute_zero(self):
        m = PairwiseModel([2], [np.array([0.0, NEG_INF])])
        assert log_partition(m) == pytest.approx(0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_linear_space_sum(self, seed):
        m = generate_spin_glass(SpinGlassConfig(2, 3, coupling_max=2.0, seed=seed))
        direct = np.exp(
            batch_energies(m, assignment_range(m.domain_sizes, 0, m.num_states))
        ).sum()
        assert math.exp(log_partition(m)) == pytest.approx(direct, rel=1e-9)


class TestMarginal:
    def test_uniform_model_single_vertex(self):
        m = PairwiseModel([2, 3], [np.zeros(2), np.zeros(3)])
        t = marginal(m, [1])
        assert np.allclose(t.probs, np.full(3, 1 / 3))

    def test_two_vertex_chain(self):
        t = np.array([[math.log(2), 0.0], [0.0, math.log(2)]])
        m = PairwiseModel([2, 2], [np.zeros(2), np.zeros(2)], [(0, 1)], [t])
        table = marginal(m, [0, 1])
        assert np.allclose(table.probs, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]])

    def test_exclusion_gives_point_mass(self):
        m = PairwiseModel([3], [np.array([NEG_INF, 0.0, NEG_INF])])
        assert np.allclose(marginal(m, [0]).probs, [0.0, 1.0, 0.0])

    def test_subset_errors(self):
        m = PairwiseModel([2, 2], [np.zeros(2), np.zeros(2)])
        with pytest.raises(InvalidModelError):
            marginal(m, [0, 0])
        with pytest.raises(InvalidModelError):
            marginal(m, [5])

    @pytest.mark.parametrize("seed", range(3))
    def test_marginal_equals_joint_sum(self, seed):
        m = generate_spin_glass(SpinGlassConfig(2, 3, coupling_max=1.0, seed=seed))
        joint = distribution(m).reshape(m.domain_sizes)
        pair = marginal(m, [1, 4])
        summed = joint.sum(axis=(0, 2, 3, 5))
        assert np.allclose(pair.probs, summed, atol=1e-12)

    def test_marginal_table_invariants(self):
        with pytest.raises(InvalidModelError):
            MarginalTable((0,), np.array([0.7, 0.7]))
        with pytest.raises(InvalidModelError):
            MarginalTable((0, 0), np.full((2, 2), 0.25))


class TestExactSample:
    def test_deterministic_model(self):
        m = PairwiseModel([2, 2], [np.array([NEG_INF, 0.0]), np.array([0.0, NEG_INF])])
        draws = sample(m, 50, np.random.default_rng(0))
        assert (draws == [1, 0]).all()

    def test_single_vertex_frequency(self):
        m = binary_vertex(0.0, math.log(3))
        draws = sample(m, 100000, np.random.default_rng(1))
        freq = draws.mean()
        sigma = math.sqrt(0.75 * 0.25 / 100000)
        assert abs(freq - 0.75) < 3 * sigma

    def test_spin_glass_chi_square(self):
        m = generate_spin_glass(SpinGlassConfig(2, 2, coupling_max=1.0, seed=3))
        draws = sample(m, 100000, np.random.default_rng(2))
        counts = np.bincount(
            draws @ state_strides(m.domain_sizes), minlength=m.num_states
        )
        assert chi_square_pvalue(counts, distribution(m)) > 0.001

    def test_exact_sample_single(self):
        m = binary_vertex(0.0, 0.0)
        x = exact_sample(m, np.random.default_rng(3))
        assert x.shape == (1,) and x[0] in (0, 1)


class TestTotalVariation:
    def test_identical(self):
        p = MarginalTable((0,), np.array([0.3, 0.7]))
        assert total_variation(p, p) == 0.0

    def test_disjoint_point_masses(self):
        p = MarginalTable((0,), np.array([1.0, 0.0]))
        q = MarginalTable((0,), np.array([0.0, 1.0]))
        assert total_variation(p, q) == 1.0

    def test_quarter(self):
        p = MarginalTable((0,), np.array([0.75, 0.25]))
        q = MarginalTable((0,), np.array([0.5, 0.5]))
        assert total_variation(p, q) == pytest.approx(0.25)

    def test_shape_mismatch(self):
        p = MarginalTable((0,), np.array([0.75, 0.25]))
        q = MarginalTable((1,), np.array([0.5, 0.5]))
        with pytest.raises(InvalidModelError):
            total_variation(p, q)


class TestHelpers:
    def test_vertex_marginals_match_individual(self):
        m = generate_spin_glass(SpinGlassConfig(2, 3, coupling_max=1.5, seed=4))
        for i, table in enumerate(vertex_marginals(m)):
            assert np.allclose(table.probs, marginal(m, [i]).probs, atol=1e-12)

    def test_empirical_marginal_counts(self):
        samples = np.array([[0, 1], [0, 1], [1, 0], [0, 0]])
        t = empirical_marginal(samples, (0,), (2, 2))
        assert np.allclose(t.probs, [0.75, 0.25])

    def test_energy_table_order_is_lexicographic(self):
        m = PairwiseModel([2, 2], [np.array([0.0, 1.0]), np.array([0.0, 10.0])])
        assert np.allclose(energy_table(m), [0.0, 10.0, 1.0, 11.0])

    def test_empirical_distribution_helper(self):
        m = binary_vertex(0.0, 0.0)
        samples = np.array([[0], [1], [1], [1]])
        emp = empirical_distribution(samples, state_strides(m.domain_sizes), 2)
        assert np.allclose(emp, [0.25, 0.75])
