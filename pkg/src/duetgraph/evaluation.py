"""Filtered ranking metrics, the normalized score-gap histogram, and the eval driver."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .inference import implied_scores, predict
from .kg_data import DatasetSplit, KnownTriples, add_inverse_relations, filtered_candidates, inverse_queries
from .numerics import ContractError
from .pathways import MessageGraph

VARIANTS = ("full", "fine_only", "coarse_only", "no_threshold")
DEFAULT_GAP_EDGES = tuple(np.round(np.linspace(0.0, 2.0, 101), 6))


def rank_of(scores, answer: int, mask=None) -> float:
    """1 + #higher + #ties/2 among unmasked candidates."""
    s = np.asarray(scores, dtype=np.float64)
    live = np.ones(s.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not live[answer]:
        raise ContractError(f"answer {answer} is filtered out")
    target = s[answer]
    higher = np.count_nonzero(live & (s > target))
    ties = np.count_nonzero(live & (s == target)) - 1
    return 1.0 + higher + ties / 2.0


def _check_ranks(ranks) -> np.ndarray:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ContractError("no ranks")
    if (r < 1).any():
        raise ContractError("ranks must be >= 1")
    return r


def mrr(ranks) -> float:
    return float(np.mean(1.0 / _check_ranks(ranks)))


def hits_at_k(ranks, k: int) -> float:
    if k < 1:
        raise ContractError("k must be >= 1")
    return float(np.mean(_check_ranks(ranks) <= k))


@dataclass
class GapHistogram:
    edges: np.ndarray
    counts: np.ndarray
    score_std: float
    degenerate: bool = False

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "GapHistogram") -> "GapHistogram":
        if not np.array_equal(self.edges, other.edges):
            raise ContractError("cannot merge histograms with different bins")
        return GapHistogram(self.edges, self.counts + other.counts, math.nan,
                             self.degenerate or other.degenerate)

    def fraction_below(self, threshold: float) -> float:
        """Share of counts in bins whose upper edge is <= threshold."""
        if self.total == 0:
            return 0.0
        upto = self.edges[1:] <= threshold + 1e-12
        return float(self.counts[upto].sum() / self.total)

    def to_csv(self) -> str:
        rows = ["bin_lo,bin_hi,count"]
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            rows.append(f"{lo:.6f},{hi:.6f},{int(c)}")
        return "\n".join(rows) + "\n"


def score_gap_histogram(scores, answer: int, edges=DEFAULT_GAP_EDGES, mask=None) -> GapHistogram:
    """|s_answer - s_v| / std(scores) for each incorrect candidate v.

    Gaps past the last edge land in the last bin.  A near-constant score
    vector is flagged degenerate with all mass in bin 0.
    """
    s = np.asarray(scores, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    live = np.ones(s.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    if live.sum() < 2:
        raise ContractError("need at least two candidates")
    std = float(np.std(s[live]))
    live[answer] = False
    counts = np.zeros(edges.shape[0] - 1, dtype=np.int64)
    n_wrong = int(live.sum())
    if std < 1e-12:
        counts[0] = n_wrong
        return GapHistogram(edges, counts, std, True)
    gap = np.abs(s[answer] - s[live]) / std
    idx = np.clip(np.searchsorted(edges, gap, side="right") - 1, 0, counts.shape[0] - 1)
    np.add.at(counts, idx, 1)
    return GapHistogram(edges, counts, std, False)


@dataclass
class EvalConfig:
    k: int = 4
    delta: float = 8.0
    protocol: str = "filtered"
    variants: tuple[str, ...] = ("full",)
    split: str = "test"
    max_queries: int | None = None
    histogram: bool = False
    gap_edges: tuple = DEFAULT_GAP_EDGES


@dataclass
class EvalReport:
    mrr: float
    hits: dict[int, float]
    n_queries: int
    mode: str
    k: int
    delta: float
    protocol: str
    variant: str = "full"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        ks = sorted(self.hits)
        vals = [self.hits[x] for x in ks]
        if any(b < a - 1e-12 for a, b in zip(vals, vals[1:])):
            raise ContractError("hits must be nondecreasing in k")
        # a miss at k=1 has rank >= 1.5 under tie averaging, so it adds at most 2/3
        h1 = self.hits.get(1)
        if h1 is not None and not (h1 - 1e-12 <= self.mrr <= h1 + (1 - h1) * 2 / 3 + 1e-12):
            raise ContractError(f"mrr {self.mrr} inconsistent with hits@1 {h1}")

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in sorted(self.hits.items())},
            "n_queries": self.n_queries,
            "mode": self.mode,
            "k": self.k,
            "delta": self.delta,
            "protocol": self.protocol,
            "variant": self.variant,
            **self.extra,
        }


def _round_floats(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return float(f"{obj:.6f}")
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round_floats(obj.item())
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, floats fixed to 6 decimals; stable bytes for equal inputs."""
    return json.dumps(_round_floats(obj), sort_keys=True, indent=2) + "\n"


def _queries(split: DatasetSplit, which: str) -> np.ndarray:
    arr = {"test": split.test, "valid": split.valid, "train": split.train}[which]
    if arr.shape[0] == 0:
        raise ContractError(f"split has no {which} queries")
    return inverse_queries(arr, split.num_relations)


def known_triples(split: DatasetSplit) -> KnownTriples:
    """Every true triple the filtered protocol must skip, both directions."""
    r = split.num_relations
    if split.mode == "transductive":
        arrays = [split.train, split.valid, split.test]
    else:
        arrays = [split.test_graph.triples, split.test]
    return KnownTriples(*(inverse_queries(a, r) for a in arrays))


def evaluate(fine_model, coarse_scorer, split: DatasetSplit, config: EvalConfig | None = None):
    """Rank every query in both directions; one report per requested variant.

    Returns ``(reports, histograms)`` where ``reports`` maps variant name to
    :class:`EvalReport` and ``histograms`` maps "fine"/"coarse" to pooled
    :class:`GapHistogram` (empty unless ``config.histogram``).
    """
    config = config or EvalConfig()
    for v in config.variants:
        if v not in VARIANTS:
            raise ContractError(f"unknown variant {v!r}")
    if config.protocol not in ("filtered", "raw"):
        raise ContractError(f"unknown protocol {config.protocol!r}")
    graph_kg = split.test_graph if config.split == "test" else split.fact_graph
    graph = MessageGraph(add_inverse_relations(graph_kg))
    queries = _queries(split, config.split)
    if config.max_queries is not None:
        queries = queries[: config.max_queries]
    known = known_triples(split) if config.protocol == "filtered" else None
    n = graph.num_entities
    ranks: dict[str, list[float]] = {v: [] for v in config.variants}
    hists: dict[str, GapHistogram] = {}
    for h, r, t in queries.tolist():
        mask = filtered_candidates((h, r), t, known, n) if known is not None else None
        need_coarse = coarse_scorer is not None and any(v != "fine_only" for v in config.variants)
        if need_coarse:
            pred = predict(fine_model, coarse_scorer, graph, (h, r), config.k, config.delta, mask)
            fine, coarse = pred.fine_scores, pred.coarse_scores
        else:
            pred, fine, coarse = None, fine_model.score_all(graph, (h, r)), None
        for v in config.variants:
            if v == "full":
                ranks[v].append(rank_of(implied_scores(fine, pred.decision, mask), t, mask))
            elif v == "fine_only":
                ranks[v].append(rank_of(fine, t, mask))
            elif v == "coarse_only":
                ranks[v].append(rank_of(coarse, t, mask))
            else:
                alt = predict(fine_model, coarse_scorer, graph, (h, r), config.k, math.inf, mask)
                ranks[v].append(rank_of(implied_scores(fine, alt.decision, mask), t, mask))
        if config.histogram:
            for name, sc in (("fine", fine), ("coarse", coarse)):
                if sc is None:
                    continue
                hg = score_gap_histogram(sc, t, config.gap_edges, mask)
                hists[name] = hists[name].merge(hg) if name in hists else hg
    reports = {}
    for v, rs in ranks.items():
        reports[v] = EvalReport(mrr(rs), {1: hits_at_k(rs, 1), 3: hits_at_k(rs, 3), 10: hits_at_k(rs, 10)},
                                len(rs), split.mode, config.k, float(config.delta), config.protocol, v)
    return reports, hists
