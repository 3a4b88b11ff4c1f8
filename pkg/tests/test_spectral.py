import math
from itertools import product

import numpy as np
import pytest
from scipy import stats

from duetgraph.fusion import MLP, DuetModel
from duetgraph.kg_data import build_normalized_adjacency, graph_from_rows
from duetgraph.numerics import ContractError, Parameter
from duetgraph.spectral import (
    PathwayMatrices,
    alpha_threshold,
    bound_strictly_decreasing,
    compose_dual_pathway,
    compose_single_pathway,
    empirical_gap_vs_bound,
    gap_upper_bound,
    measure_gap_vs_bound,
    normal_max,
    singular_report,
    subtable_gap_lower_bound,
    subtable_gap_montecarlo,
)
from duetgraph.synthetic import kinship_split


def _row_stochastic(rng, n, temp=1.0):
    logits = rng.standard_normal((n, n)) * temp
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True)


def _path_adjacency(n):
    return build_normalized_adjacency(graph_from_rows([(f"v{i}", "r", f"v{i + 1}") for i in range(n - 1)]))


def _random_adjacency(rng, n):
    # ring for connectivity plus random chords
    rows = [(f"v{i}", "r", f"v{(i + 1) % n}") for i in range(n)]
    rows += [(f"v{a}", "r", f"v{b}") for a, b in rng.integers(0, n, size=(n, 2)) if a != b]
    return build_normalized_adjacency(graph_from_rows(rows))


# -- composition -----------------------------------------------------------

def test_single_pathway_reductions():
    rng = np.random.default_rng(0)
    p, a = _row_stochastic(rng, 5), _path_adjacency(5)
    np.testing.assert_array_equal(compose_single_pathway(p, a, 0), p)
    np.testing.assert_allclose(compose_single_pathway(p, np.eye(5), 3), p, rtol=1e-15)


def test_single_pathway_dense_oracle():
    rng = np.random.default_rng(1)
    p, a = _row_stochastic(rng, 6), rng.standard_normal((6, 6))
    ref = p.copy()
    for _ in range(3):
        ref = ref @ a
    np.testing.assert_allclose(compose_single_pathway(p, a, 3), ref, rtol=1e-10, atol=1e-12)


def test_dual_pathway_endpoints_and_oracle():
    rng = np.random.default_rng(2)
    p, a = _row_stochastic(rng, 6), _random_adjacency(rng, 6)
    a2 = a @ a
    np.testing.assert_allclose(compose_dual_pathway(p, a, 2, 1 - 1e-12), a2, atol=1e-10)
    np.testing.assert_allclose(compose_dual_pathway(p, a, 2, 1e-12), p, atol=1e-10)
    np.testing.assert_allclose(compose_dual_pathway(p, a, 2, 0.3), 0.3 * a2 + 0.7 * p, rtol=1e-13)
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ContractError):
            compose_dual_pathway(p, a, 2, bad)


# -- singular report -------------------------------------------------------

def test_identity_attention_on_path():
    rep = singular_report(PathwayMatrices(_path_adjacency(6), np.eye(6), 1, 0.5))
    assert abs(rep.sigma_single - 1.0) <= 1e-9
    assert rep.passed


def test_uniform_attention_unit_norm():
    n = 7
    rep = singular_report(PathwayMatrices(_path_adjacency(n), np.full((n, n), 1 / n), 2, 0.4))
    assert abs(rep.sigma_attention - 1.0) <= 1e-9


def test_fifty_random_instances_pass_sound_checks():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(3, 30))
        mats = PathwayMatrices(_random_adjacency(rng, n), _row_stochastic(rng, n, rng.uniform(0.1, 5)),
                               int(rng.integers(0, 5)), float(rng.uniform(0.05, 0.95)))
        rep = singular_report(mats)
        assert rep.passed, rep.failed_checks()
        lo = abs(mats.alpha - (1 - mats.alpha) * rep.sigma_attention) - 1e-9
        hi = mats.alpha * rep.sigma_adjacency_power + (1 - mats.alpha) * rep.sigma_attention + 1e-9
        assert lo <= rep.sigma_dual <= hi
        if rep.sigma_dual > rep.sigma_single:
            assert all(d >= s for _, s, d in rep.curves)
        assert rep.alpha_below_threshold == (mats.alpha < alpha_threshold(rep.sigma_single, rep.sigma_dual))


def test_attention_claim_reported_not_asserted():
    rng = np.random.default_rng(4)
    rep = singular_report(PathwayMatrices(_random_adjacency(rng, 8), _row_stochastic(rng, 8), 1, 0.5))
    claim = {c.name: c for c in rep.claims}["attention_below_one"]
    # a row-stochastic matrix fixes the all-ones vector, so sigma_max >= 1
    assert not claim.passed and rep.passed
    d = rep.to_dict()
    assert "attention_below_one" in d["reported_claims"] and d["passed"]
    assert rep.curves_csv().splitlines()[0] == "ell,single_bound,dual_bound"


def test_matrices_validation():
    a = _path_adjacency(3)
    with pytest.raises(ContractError):
        PathwayMatrices(a, np.full((3, 3), 0.5), 1, 0.5)
    with pytest.raises(ContractError):
        PathwayMatrices(a, np.eye(3), 1, 1.0)
    with pytest.raises(ContractError):
        PathwayMatrices(a + np.triu(np.ones((3, 3)), 1), np.eye(3), 1, 0.5)


# -- threshold and gap bound -----------------------------------------------

def test_alpha_threshold_examples():
    assert alpha_threshold(0.5, 0.5) == pytest.approx(2 / 3, abs=1e-15)
    assert alpha_threshold(0.0, 0.37) == 0.37


def test_alpha_threshold_monotone_in_dual():
    grid = np.linspace(0, 3, 31)
    for s_o in grid:
        vals = [alpha_threshold(s_o, s_d) for s_d in grid]
        assert all(b > a for a, b in zip(vals, vals[1:]))


def test_gap_bound_examples():
    assert gap_upper_bound(1.0, 0.5, 3, 1.0) == 0.25
    assert gap_upper_bound(1.7, 0.3, 0, 2.0) == pytest.approx(2 * 1.7 * 2.0)
    with pytest.raises(ContractError):
        gap_upper_bound(-1.0, 0.5, 1, 1.0)


def test_gap_bound_decreasing():
    for s in (0.0001, 0.3, 0.9, 0.999):
        assert bound_strictly_decreasing(s)
    assert not bound_strictly_decreasing(1.0)


def _linear_mlp(w):
    return MLP([Parameter("w", np.asarray(w, float).reshape(-1, 1))], [Parameter("b", np.zeros(1))])


def test_zero_x0_zero_gaps():
    rng = np.random.default_rng(5)
    m = _row_stochastic(rng, 6)
    rep = measure_gap_vs_bound(m, np.zeros((6, 3)), _linear_mlp([1.0, -2.0, 0.5]), 2,
                               np.array([[0, 1], [2, 5], [3, 4]]))
    assert rep.bound == 0.0 and np.all(rep.gaps == 0.0) and rep.violations == 0


def test_hundred_pairs_on_thirty_entities():
    split = kinship_split(30, seed=0)
    model = DuetModel(split.num_relations, hidden_dim=8, local_layers=2, seed=0)
    h, r, _ = split.train[0].tolist()
    rep = empirical_gap_vs_bound(model, split.fact_graph, (h, r), 100, np.random.default_rng(0))
    assert rep.gaps.size == 100 and rep.violations == 0


def test_bound_tightness_probe():
    # M = I, rows +e1 / -e1, f(x) = x_1: gap 2, bound 2*sqrt(2); halving sigma gives sqrt(2) < 2
    x0 = np.array([[1.0, 0.0], [-1.0, 0.0]])
    mlp = _linear_mlp([1.0, 0.0])
    pairs = np.array([[0, 1]])
    full = measure_gap_vs_bound(np.eye(2), x0, mlp, 1, pairs)
    assert full.violations == 0 and full.gaps[0] == 2.0
    halved = measure_gap_vs_bound(np.eye(2), x0, mlp, 1, pairs, sigma=0.5)
    assert halved.violations == 1


# -- subtable gap ----------------------------------------------------------

def test_subtable_lower_bound_examples():
    assert subtable_gap_lower_bound(4, 10_000, 1.0) == pytest.approx(1 / 17 - 1 / (10 ** 8 + 1), abs=1e-15)
    assert abs(subtable_gap_lower_bound(4, 10_000, 1.0) - 0.0588235) <= 1e-6
    assert subtable_gap_lower_bound(6, 6, 2.0) == 0.0
    assert subtable_gap_lower_bound(3, 9, 0.0) == 0.0


def test_normal_max_matches_direct_sampling():
    rng = np.random.default_rng(6)
    fast = normal_max(4, 20_000, rng)
    direct = rng.standard_normal((20_000, 4)).max(axis=1)
    assert stats.ks_2samp(fast, direct).pvalue > 1e-3
    # E[max of 2 normals] = 1/sqrt(pi)
    assert normal_max(2, 200_000, rng).mean() == pytest.approx(1 / math.sqrt(math.pi), abs=0.01)


def test_montecarlo_large_tables():
    rep = subtable_gap_montecarlo(4, 10_000, 100_000, np.random.default_rng(7))
    assert 2.7 <= rep.mean_gap <= 2.9 and rep.passed


def test_montecarlo_constant_scores():
    rep = subtable_gap_montecarlo(1, 1, 10_000, np.random.default_rng(0),
                                  sampler=lambda rng, shape: np.full(shape, 0.7))
    assert rep.mean_gap == 0.0 and rep.bound == 0.0


def test_montecarlo_three_value_enumeration():
    values = np.array([0.0, 1.0, 2.0])
    exact = np.mean([abs(x - max(y1, y2)) for x, y1, y2 in product(values, repeat=3)])
    rep = subtable_gap_montecarlo(1, 2, 100_000, np.random.default_rng(8),
                                  sampler=lambda rng, shape: rng.choice(values, size=shape))
    assert abs(rep.mean_gap - exact) <= 3 * rep.stderr


def test_montecarlo_rejects_few_trials():
    with pytest.raises(ContractError):
        subtable_gap_montecarlo(1, 2, 100, np.random.default_rng(0))
