import json
import math

import numpy as np
import pytest

from perturbmap.model import (
    InvalidModelError,
    PairwiseModel,
    SpinGlassConfig,
    batch_energies,
    assignment_range,
    condition,
    energy,
    from_json,
    generate_spin_glass,
    grid_edges,
    is_attractive,
    is_forest,
    to_dict,
    to_json,
    validate,
)

NEG_INF = float("-inf")


def uniform_model(sizes, edges=()):
    return PairwiseModel(
        sizes,
        [np.zeros(d) for d in sizes],
        edges,
        [np.zeros((sizes[i], sizes[j])) for i, j in edges],
    )


class TestEnergy:
    def test_all_zero_tables(self):
        m = uniform_model([2, 3], [(0, 1)])
        assert energy(m, [1, 2]) == 0.0

    def test_single_vertex_lookup(self):
        m = PairwiseModel([2], [np.array([0.0, math.log(3.0)])])
        assert energy(m, [1]) == pytest.approx(math.log(3.0))

    def test_spin_glass_energy_matches_json_tables(self):
        # Independent oracle: re-sum the emitted JSON tables directly.
        m = generate_spin_glass(SpinGlassConfig(2, 2, seed=42))
        data = json.loads(to_json(m))
        x = [1, 1, 1, 1]
        expected = sum(data["unary"][i][x[i]] for i in range(4))
        expected += sum(
            data["pairwise"][k][x[i]][x[j]] for k, (i, j) in enumerate(data["edges"])
        )
        assert energy(m, x) == pytest.approx(expected, abs=1e-12)

    def test_neg_inf_absorbs(self):
        m = PairwiseModel([2], [np.array([NEG_INF, 1.0])])
        assert energy(m, [0]) == NEG_INF

    def test_dimension_mismatch(self):
        m = uniform_model([2, 2])
        with pytest.raises(InvalidModelError):
            energy(m, [0])
        with pytest.raises(InvalidModelError):
            energy(m, [0, 2])

    def test_additive_over_disjoint_parts(self):
        rng = np.random.default_rng(0)
        u1 = [rng.normal(size=2) for _ in range(2)]
        p1 = [rng.normal(size=(2, 2))]
        u2 = [rng.normal(size=3) for _ in range(2)]
        p2 = [rng.normal(size=(3, 3))]
        a = PairwiseModel([2, 2], u1, [(0, 1)], p1)
        b = PairwiseModel([3, 3], u2, [(0, 1)], p2)
        combined = PairwiseModel([2, 2, 3, 3], u1 + u2, [(0, 1), (2, 3)], p1 + p2)
        xa, xb = [1, 0], [2, 1]
        assert energy(combined, xa + xb) == pytest.approx(
            energy(a, xa) + energy(b, xb), abs=1e-12
        )


class TestSpinGlass:
    def test_degenerate_grid(self):
        m = generate_spin_glass(SpinGlassConfig(1, 1, seed=0))
        assert m.num_vertices == 1 and len(m.edges) == 0

    def test_grid_edge_count(self):
        m = generate_spin_glass(SpinGlassConfig(2, 2, seed=0))
        assert m.num_vertices == 4 and len(m.edges) == 4
        assert len(grid_edges(3, 3)) == 12

    def test_zero_coupling(self):
        m = generate_spin_glass(SpinGlassConfig(2, 3, coupling_max=0.0, seed=1))
        for t in m.pairwise:
            assert (t == 0).all()

    def test_reproducible_byte_for_byte(self):
        cfg = SpinGlassConfig(3, 3, coupling_max=2.0, seed=9)
        assert to_json(generate_spin_glass(cfg)) == to_json(generate_spin_glass(cfg))

    @pytest.mark.parametrize("rows,cols,seed", [(2, 2, 0), (3, 3, 5), (2, 3, 11)])
    def test_encoding_matches_spin_formula(self, rows, cols, seed):
        cfg = SpinGlassConfig(rows, cols, coupling_max=1.5, seed=seed)
        m = generate_spin_glass(cfg)
        fields = np.array([u[1] for u in m.unary])
        couplings = np.array([t[1, 1] for t in m.pairwise])
        labels = assignment_range(m.domain_sizes, 0, m.num_states)
        spins = 2 * labels - 1
        expected = spins @ fields
        for k, (i, j) in enumerate(m.edges):
            expected = expected + couplings[k] * spins[:, i] * spins[:, j]
        assert np.allclose(batch_energies(m, labels), expected, atol=1e-12)

    def test_config_validation(self):
        with pytest.raises(InvalidModelError):
            SpinGlassConfig(0, 2)
        with pytest.raises(InvalidModelError):
            SpinGlassConfig(2, 2, coupling_max=-1.0)


class TestAttractive:
    def test_spin_glass_is_attractive(self):
        assert is_attractive(generate_spin_glass(SpinGlassConfig(2, 3, seed=3)))

    def test_negative_coupling_breaks_it(self):
        m = generate_spin_glass(SpinGlassConfig(2, 2, seed=3))
        tables = [t.copy() for t in m.pairwise]
        w = 1.0
        tables[0] = np.array([[w, -w], [-w, w]]) * -1.0
        assert not is_attractive(m.replace_tables(pairwise=tables))

    def test_non_binary_is_not_attractive(self):
        assert not is_attractive(uniform_model([3, 3], [(0, 1)]))


class TestValidate:
    def test_well_formed(self):
        assert validate(generate_spin_glass(SpinGlassConfig(2, 2, seed=0))) == []

    def test_edge_referencing_missing_vertex(self):
        data = to_dict(uniform_model([2, 2], [(0, 1)]))
        data["edges"] = [[0, 2]]
        problems = validate(data)
        assert len(problems) == 1 and "missing vertex" in problems[0]

    def test_all_neg_inf_tables(self):
        data = to_dict(uniform_model([2]))
        data["unary"] = [["-inf", "-inf"]]
        assert any("-inf" in p for p in validate(data))

    def test_jointly_infeasible(self):
        # Each table has finite entries but no configuration avoids -inf.
        m = PairwiseModel(
            [2, 2],
            [np.zeros(2), np.zeros(2)],
            [(0, 1)],
            [np.array([[NEG_INF, NEG_INF], [NEG_INF, NEG_INF]])],
        )
        assert validate(m) == ["pairwise[0] is entirely -inf"]
        m2 = PairwiseModel(
            [2, 2],
            [np.array([0.0, NEG_INF]), np.array([NEG_INF, 0.0])],
            [(0, 1)],
            [np.array([[NEG_INF, NEG_INF], [0.0, 0.0]])],
        )
        assert any("infeasible" in p for p in validate(m2))

    def test_constructor_rejects_structural_junk(self):
        with pytest.raises(InvalidModelError):
            PairwiseModel([2, 2], [np.zeros(2), np.zeros(2)], [(0, 0)], [np.zeros((2, 2))])
        with pytest.raises(InvalidModelError):
            PairwiseModel(
                [2, 2],
                [np.zeros(2), np.zeros(2)],
                [(0, 1), (1, 0)],
                [np.zeros((2, 2)), np.zeros((2, 2))],
            )
        with pytest.raises(InvalidModelError):
            PairwiseModel([2], [np.zeros(3)])
        with pytest.raises(InvalidModelError):
            PairwiseModel([2], [np.array([np.nan, 0.0])])


class TestStructure:
    def test_is_forest(self):
        assert is_forest(uniform_model([2, 2, 2], [(0, 1), (1, 2)]))
        assert not is_forest(uniform_model([2, 2, 2], [(0, 1), (1, 2), (0, 2)]))

    def test_condition_full_clamp_is_energy(self):
        m = generate_spin_glass(SpinGlassConfig(2, 2, seed=1))
        x = [0, 1, 1, 0]
        sub, const, free = condition(m, dict(enumerate(x)))
        assert sub is None and free == []
        assert const == pytest.approx(energy(m, x), abs=1e-12)

    def test_condition_partial_consistency(self):
        m = generate_spin_glass(SpinGlassConfig(2, 2, seed=2))
        sub, const, free = condition(m, {0: 1, 3: 0})
        assert free == [1, 2]
        for x1 in range(2):
            for x2 in range(2):
                full = [1, x1, x2, 0]
                assert const + energy(sub, [x1, x2]) == pytest.approx(
                    energy(m, full), abs=1e-12
                )


class TestJson:
    def test_round_trip_with_neg_inf(self):
        m = PairwiseModel(
            [2, 3],
            [np.array([0.5, NEG_INF]), np.zeros(3)],
            [(0, 1)],
            [np.array([[1.0, 2.0, NEG_INF], [0.0, -1.5, 3.0]])],
        )
        text = to_json(m)
        assert '"-inf"' in text
        back = from_json(text)
        assert back.domain_sizes == m.domain_sizes
        assert back.edges == m.edges
        for a, b in zip(back.unary, m.unary):
            assert np.array_equal(a, b)
        for a, b in zip(back.pairwise, m.pairwise):
            assert np.array_equal(a, b)

    def test_field_order_is_stable(self):
        m = uniform_model([2])
        assert list(json.loads(to_json(m)).keys()) == [
            "domain_sizes", "unary", "edges", "pairwise",
        ]

    def test_malformed_json_rejected(self):
        with pytest.raises(InvalidModelError):
            from_json("{not json")
        with pytest.raises(InvalidModelError):
            from_json('{"domain_sizes": [2]}')
