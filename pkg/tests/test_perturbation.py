import math

import numpy as np
import pytest
from scipy import stats

from perturbmap.model import PairwiseModel, SpinGlassConfig, generate_spin_glass
from perturbmap.model import StateSpaceTooLargeError
from perturbmap.perturbation import (
    EULER_GAMMA,
    GUMBEL_VARIANCE,
    SeedPath,
    gumbel_cdf,
    gumbel_quantile,
    perturb_full,
    perturb_pairwise,
    perturb_unary,
    sample_gumbel,
)
from perturbmap.model import is_attractive

NEG_INF = float("-inf")


class TestGumbel:
    def test_quantile_at_exp_minus_one(self):
        # -ln(-ln(u)) vanishes at u = e^-1, leaving exactly -c.
        assert gumbel_quantile(math.exp(-1.0)) == pytest.approx(-EULER_GAMMA, abs=1e-15)

    def test_moments(self):
        g = sample_gumbel(SeedPath(12).generator(), 1_000_000)
        assert abs(g.mean()) < 0.005
        assert abs(g.var() - GUMBEL_VARIANCE) < 0.01

    def test_ks_against_cdf(self):
        g = sample_gumbel(SeedPath(34).generator(), 100_000)
        assert stats.kstest(g, gumbel_cdf).pvalue > 0.001

    def test_draws_always_finite(self):
        g = sample_gumbel(SeedPath(5).generator(), 200_000)
        assert np.isfinite(g).all()


class TestSeedPath:
    def test_identical_paths_identical_noise(self):
        a = sample_gumbel(SeedPath(7, (1, 2)).generator(), 100)
        b = sample_gumbel(SeedPath(7, (1, 2)).generator(), 100)
        assert np.array_equal(a, b)

    def test_sibling_paths_differ(self):
        root = SeedPath(7)
        a = sample_gumbel(root.child(0).generator(), 1000)
        b = sample_gumbel(root.child(1).generator(), 1000)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.1

    def test_child_extends_path(self):
        assert SeedPath(3).child(4).child(5) == SeedPath(3, (4, 5))


def two_vertex_model():
    return PairwiseModel(
        [2, 2],
        [np.array([0.1, -0.2]), np.array([0.3, 0.4])],
        [(0, 1)],
        [np.array([[0.5, -0.5], [-0.5, 0.5]])],
    )


class TestPerturbUnary:
    def test_consumes_one_draw_per_finite_entry(self):
        m = two_vertex_model()
        perturbed = perturb_unary(m, SeedPath(11).generator())
        expected = sample_gumbel(SeedPath(11).generator(), 4)
        added = np.concatenate([perturbed.unary[i] - m.unary[i] for i in range(2)])
        assert np.allclose(added, expected)
        for a, b in zip(perturbed.pairwise, m.pairwise):
            assert np.array_equal(a, b)

    def test_neg_inf_entries_unchanged(self):
        m = PairwiseModel([2], [np.array([NEG_INF, 1.0])])
        p = perturb_unary(m, SeedPath(2).generator())
        assert p.unary[0][0] == NEG_INF
        assert np.isfinite(p.unary[0][1])

    def test_preserves_attractiveness(self):
        m = generate_spin_glass(SpinGlassConfig(3, 3, coupling_max=2.0, seed=1))
        assert is_attractive(perturb_unary(m, SeedPath(3).generator()))

    def test_seeded_reproducibility(self):
        m = two_vertex_model()
        a = perturb_unary(m, SeedPath(9).generator())
        b = perturb_unary(m, SeedPath(9).generator())
        for u, v in zip(a.unary, b.unary):
            assert np.array_equal(u, v)


class TestPerturbPairwise:
    def test_draw_layout_unary_then_pairwise(self):
        m = two_vertex_model()
        perturbed = perturb_pairwise(m, SeedPath(21).generator())
        draws = sample_gumbel(SeedPath(21).generator(), 8)
        added_unary = np.concatenate(
            [perturbed.unary[i] - m.unary[i] for i in range(2)]
        )
        added_pair = (perturbed.pairwise[0] - m.pairwise[0]).ravel()
        assert np.allclose(added_unary, draws[:4])
        assert np.allclose(added_pair, draws[4:])

    def test_can_break_attractiveness(self):
        m = generate_spin_glass(SpinGlassConfig(2, 2, coupling_max=0.1, seed=0))
        broke = False
        for seed in range(20):
            if not is_attractive(perturb_pairwise(m, SeedPath(seed).generator())):
                broke = True
                break
        assert broke

    def test_never_produces_nan_or_inf(self):
        m = generate_spin_glass(SpinGlassConfig(2, 3, seed=5))
        p = perturb_pairwise(m, SeedPath(6).generator())
        for t in list(p.unary) + list(p.pairwise):
            assert np.isfinite(t).all()


class TestPerturbFull:
    def test_one_draw_per_configuration(self):
        m = PairwiseModel([2], [np.array([1.0, 2.0])])
        table = perturb_full(m, SeedPath(31).generator())
        draws = sample_gumbel(SeedPath(31).generator(), 2)
        assert np.allclose(table, np.array([1.0, 2.0]) + draws)

    def test_single_feasible_configuration_always_wins(self):
        m = PairwiseModel(
            [2, 2], [np.array([NEG_INF, 0.0]), np.array([0.0, NEG_INF])]
        )
        for seed in range(10):
            table = perturb_full(m, SeedPath(seed).generator())
            assert int(np.argmax(table)) == 2  # labels (1, 0)

    def test_cap(self):
        m = generate_spin_glass(SpinGlassConfig(2, 3, seed=0))
        with pytest.raises(StateSpaceTooLargeError):
            perturb_full(m, SeedPath(0).generator(), max_states=8)
