import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duetgraph.evaluation import (
    DEFAULT_GAP_EDGES,
    EvalConfig,
    EvalReport,
    canonical_json,
    evaluate,
    hits_at_k,
    mrr,
    rank_of,
    score_gap_histogram,
)
from duetgraph.numerics import ContractError

from conftest import tiny_split


# -- rank ------------------------------------------------------------------

def test_rank_examples():
    assert rank_of([0.9, 0.5, 0.1], 0) == 1.0
    assert rank_of([0.9, 0.5, 0.1], 2) == 3.0
    assert rank_of([0.5, 0.5, 0.1], 1) == 1.5
    assert rank_of([0.2, 0.2, 0.2, 0.2], 3) == 2.5


def test_rank_filtered_example():
    assert rank_of([0.9, 0.8, 0.1], 1, mask=[False, True, True]) == 1.0


def test_rank_masked_answer_rejected():
    with pytest.raises(ContractError):
        rank_of([0.1, 0.2], 0, mask=[False, True])


def _loop_rank(scores, answer, mask):
    higher = ties = 0
    for v, s in enumerate(scores):
        if not mask[v] or v == answer:
            continue
        if s > scores[answer]:
            higher += 1
        elif s == scores[answer]:
            ties += 1
    return 1 + higher + ties / 2


def test_rank_matches_loop_on_1000_vectors():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        s = rng.integers(0, 5, n).astype(float)
        mask = rng.random(n) < 0.8
        a = int(rng.integers(n))
        mask[a] = True
        assert rank_of(s, a, mask) == _loop_rank(s, a, mask)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=1, max_size=20), st.data())
def test_rank_bounds_and_monotone_invariance(scores, data):
    # integer scores keep the transform exact and strictly increasing
    s = np.asarray(scores, dtype=np.float64)
    a = data.draw(st.integers(0, len(s) - 1))
    r = rank_of(s, a)
    assert 1.0 <= r <= len(s)
    assert rank_of(s ** 3 + 2 * s - 7, a) == r


# -- metrics ---------------------------------------------------------------

def test_mrr_example():
    assert mrr([1, 2, 4]) == pytest.approx(7 / 12, abs=1e-15)


def test_hits_examples():
    ranks = [1, 2, 3, 10, 11, 1.5]
    assert hits_at_k(ranks, 1) == pytest.approx(1 / 6)
    assert hits_at_k(ranks, 3) == pytest.approx(4 / 6)
    assert hits_at_k(ranks, 10) == pytest.approx(5 / 6)


def test_empty_and_bad_ranks():
    with pytest.raises(ContractError):
        mrr([])
    with pytest.raises(ContractError):
        hits_at_k([], 1)
    with pytest.raises(ContractError):
        mrr([0.5])
    with pytest.raises(ContractError):
        hits_at_k([1], 0)


def test_report_checks_consistency():
    with pytest.raises(ContractError):
        EvalReport(0.5, {1: 0.5, 3: 0.4, 10: 0.9}, 2, "transductive", 4, 8.0, "filtered")
    with pytest.raises(ContractError):
        EvalReport(0.1, {1: 0.5, 3: 0.6, 10: 0.9}, 2, "transductive", 4, 8.0, "filtered")


# -- histogram -------------------------------------------------------------

def test_histogram_example():
    s = np.array([2.0, 0.0, 1.0, 1.0])
    std = float(np.std(s))
    edges = [0.0, 1.0, 2.0, 3.0]
    h = score_gap_histogram(s, 0, edges)
    # gaps / std: 2/std, 1/std, 1/std with std = 0.7071
    assert std == pytest.approx(math.sqrt(0.5))
    assert h.counts.tolist() == [0, 2, 1]
    assert h.total == 3


def test_histogram_direct_oracle():
    rng = np.random.default_rng(4)
    edges = np.asarray(DEFAULT_GAP_EDGES)
    for _ in range(100):
        n = int(rng.integers(3, 40))
        s = rng.standard_normal(n)
        a = int(rng.integers(n))
        h = score_gap_histogram(s, a)
        ref = np.zeros(len(edges) - 1, dtype=int)
        for v in range(n):
            if v == a:
                continue
            g = abs(s[a] - s[v]) / np.std(s)
            b = len(edges) - 2
            for i in range(len(edges) - 1):
                if edges[i] <= g < edges[i + 1]:
                    b = i
                    break
            ref[b] += 1
        assert h.counts.tolist() == ref.tolist()


def test_histogram_degenerate_and_masked():
    h = score_gap_histogram(np.full(5, 0.3), 2)
    assert h.degenerate and h.counts[0] == 4 and h.total == 4
    h = score_gap_histogram(np.arange(6.0), 0, mask=[True, False, True, True, False, True])
    assert h.total == 3


def test_histogram_merge_and_csv():
    a = score_gap_histogram([0.0, 1.0, 2.0], 0, [0.0, 1.0, 2.0])
    b = score_gap_histogram([0.0, 1.0, 2.0], 1, [0.0, 1.0, 2.0])
    m = a.merge(b)
    assert m.total == 4
    lines = m.to_csv().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count" and len(lines) == 3
    assert sum(int(x.split(",")[2]) for x in lines[1:]) == 4


# -- evaluate --------------------------------------------------------------

class TableScorer:
    """Score vectors looked up by (head, relation)."""

    def __init__(self, table):
        self.table = table

    def score_all(self, graph, query):
        return np.asarray(self.table[(int(query[0]), int(query[1]))], dtype=np.float64)


def _random_setup(n_triples, seed, n_ent=12, n_rel=2):
    rng = np.random.default_rng(seed)
    all_tr = np.unique(rng.integers(0, [n_ent, n_rel, n_ent], size=(4 * n_triples, 3)), axis=0)
    all_tr = all_tr[rng.permutation(len(all_tr))]
    train, test = all_tr[n_triples:], all_tr[:n_triples]
    split = tiny_split([tuple(t) for t in train.tolist()], n_ent, n_rel, test=test)
    fine, coarse = {}, {}
    for h in range(n_ent):
        for r in range(2 * n_rel):
            fine[(h, r)] = rng.integers(0, 6, n_ent).astype(float)
            coarse[(h, r)] = rng.standard_normal(n_ent)
    return split, TableScorer(fine), TableScorer(coarse)


def _oracle_fine_ranks(split, fine):
    known = set()
    r = split.num_relations
    for arr in (split.train, split.valid, split.test):
        for h, rel, t in arr.tolist():
            known.add((h, rel, t))
            known.add((t, rel + r, h))
    ranks = []
    queries = [tuple(x) for x in split.test.tolist()] + [(t, rel + r, h) for h, rel, t in split.test.tolist()]
    for h, rel, t in queries:
        s = fine.table[(h, rel)]
        mask = [v == t or (h, rel, v) not in known for v in range(len(s))]
        ranks.append(_loop_rank(s, t, mask))
    return ranks


def test_single_query_ranks():
    split = tiny_split([(0, 0, 1), (1, 0, 2)], 4, 1, test=[(0, 0, 3)])
    fine = {(0, 0): [0.0, 5.0, 1.0, 2.0], (3, 1): [9.0, 0.0, 0.0, 0.0]}
    reports, _ = evaluate(TableScorer(fine), None, split, EvalConfig(variants=("fine_only",)))
    rep = reports["fine_only"]
    # forward: entity 1 is a known tail and filtered, so 3 ranks first; inverse: 0 ranks first
    assert rep.n_queries == 2 and rep.mrr == 1.0 and rep.hits[1] == 1.0


def test_twenty_query_hand_aggregation():
    split, fine, coarse = _random_setup(10, seed=5)
    ranks = _oracle_fine_ranks(split, fine)
    assert len(ranks) == 20
    reports, _ = evaluate(fine, coarse, split, EvalConfig(variants=("fine_only", "full"), k=12))
    rep = reports["fine_only"]
    assert rep.mrr == pytest.approx(float(np.mean([1 / x for x in ranks])), abs=1e-12)
    for k in (1, 3, 10):
        assert rep.hits[k] == pytest.approx(float(np.mean([x <= k for x in ranks])), abs=1e-12)
    # with k covering every entity the pipeline reduces to the fine ranking
    assert reports["full"].mrr == pytest.approx(rep.mrr, abs=1e-12)


def test_query_order_invariance():
    split, fine, coarse = _random_setup(8, seed=6)
    cfg = EvalConfig(variants=("full", "fine_only", "coarse_only", "no_threshold"), k=3, delta=0.5)
    a, _ = evaluate(fine, coarse, split, cfg)
    split.test = split.test[::-1].copy()
    b, _ = evaluate(fine, coarse, split, cfg)
    for v in cfg.variants:
        assert a[v].mrr == pytest.approx(b[v].mrr, abs=1e-12)
        assert a[v].hits == pytest.approx(b[v].hits)


def test_monotone_transform_invariance():
    split, fine, coarse = _random_setup(8, seed=7)
    warped = TableScorer({q: np.exp(v) * 2 + 1 for q, v in fine.table.items()})
    cfg = EvalConfig(variants=("fine_only", "no_threshold"), k=2)
    a, _ = evaluate(fine, coarse, split, cfg)
    b, _ = evaluate(warped, coarse, split, cfg)
    for v in cfg.variants:
        assert a[v].mrr == pytest.approx(b[v].mrr, abs=1e-12)
        assert a[v].hits == b[v].hits


def test_histograms_pool_all_queries():
    split, fine, coarse = _random_setup(5, seed=8)
    _, hists = evaluate(fine, coarse, split, EvalConfig(histogram=True))
    assert set(hists) == {"fine", "coarse"}
    assert hists["fine"].total == hists["coarse"].total > 0


def test_unknown_variant():
    split, fine, coarse = _random_setup(3, seed=9)
    with pytest.raises(ContractError):
        evaluate(fine, coarse, split, EvalConfig(variants=("bogus",)))


# -- canonical JSON --------------------------------------------------------

def test_canonical_json_stable():
    obj = {"b": 1 / 3, "a": [math.inf, 2.0000004], "c": {"z": np.float64(0.1234567)}}
    text = canonical_json(obj)
    assert text == canonical_json(json.loads(json.dumps({"c": {"z": 0.1234567}, "a": [math.inf, 2.0000004],
                                                         "b": 1 / 3})))
    parsed = json.loads(text)
    assert list(parsed) == ["a", "b", "c"]
    assert parsed["a"] == ["inf", 2.0] and parsed["b"] == 0.333333
    assert text.endswith("\n")
