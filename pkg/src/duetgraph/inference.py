"""Coarse-to-fine inference: refine the split tables, decide, rank."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .coarse import ScoreTable, SplitTable, coarse_score_all, split_table
from .numerics import ContractError


@dataclass(frozen=True)
class Decision:
    high_entity: int
    high_score: float
    low_entity: int | None
    low_score: float | None
    gamma: float
    delta: float
    chosen: int
    source: str  # "high" or "low"


def refine_tables(split: SplitTable, fine_scores: np.ndarray) -> SplitTable:
    """Same membership, every score replaced by the fine model's score."""
    fine = np.asarray(fine_scores, dtype=np.float64)
    for part in (split.high, split.low):
        if part.entities.size and (part.entities.min() < 0 or part.entities.max() >= fine.shape[0]):
            raise ContractError("fine scores do not cover every table entity")
    return SplitTable(
        ScoreTable(split.high.entities, fine[split.high.entities]),
        ScoreTable(split.low.entities, fine[split.low.entities]),
        split.k,
    )


def decide(split: SplitTable, delta: float) -> Decision:
    """Pick the low-table argmax only when it leads the high argmax by more than delta."""
    if len(split.high) == 0:
        raise ContractError("high table is empty")
    e_h, s_h = split.high.argmax()
    if len(split.low) == 0:
        return Decision(e_h, s_h, None, None, -math.inf, float(delta), e_h, "high")
    e_l, s_l = split.low.argmax()
    gamma = s_l - s_h
    if gamma > delta:
        return Decision(e_h, s_h, e_l, s_l, gamma, float(delta), e_l, "low")
    return Decision(e_h, s_h, e_l, s_l, gamma, float(delta), e_h, "high")


def final_ranking(split: SplitTable, decision: Decision) -> np.ndarray:
    """Chosen entity first, then every other entity by fine score (ties: smaller id).

    When the chosen entity is already the overall fine argmax this is the
    plain fine-score sort.
    """
    merged = ScoreTable(
        np.concatenate([split.high.entities, split.low.entities]),
        np.concatenate([split.high.scores, split.low.scores]),
    )
    order = merged.entities[merged.ordered()]
    return np.concatenate([[decision.chosen], order[order != decision.chosen]])


def implied_scores(fine_scores: np.ndarray, decision: Decision, mask: np.ndarray | None = None) -> np.ndarray:
    """Scores whose tie-averaged rank matches the final ranking.

    Fine scores, with the chosen entity lifted to +inf when it is not
    already tied for the top among unmasked entities.
    """
    scores = np.array(fine_scores, dtype=np.float64)
    live = scores if mask is None else scores[mask]
    if scores[decision.chosen] < live.max():
        scores[decision.chosen] = math.inf
    return scores


@dataclass
class Prediction:
    query: tuple[int, int]
    decision: Decision
    ranking: np.ndarray
    fine_scores: np.ndarray
    coarse_scores: np.ndarray

    def to_json(self, top: int = 10) -> str:
        d = self.decision
        gamma = d.gamma if math.isfinite(d.gamma) else None
        return json.dumps({
            "head": int(self.query[0]), "relation": int(self.query[1]),
            "chosen": int(d.chosen), "source": d.source,
            "gamma": None if gamma is None else round(gamma, 6),
            "top10": [int(e) for e in self.ranking[:top]],
        }, sort_keys=True)


def predict(fine_model, coarse_scorer, graph, query, k: int, delta: float,
            mask: np.ndarray | None = None, coarse_graph=None) -> Prediction:
    """Coarse table, filter, split, fine rescoring, decision and ranking.

    Entities with ``mask`` false are left out of both tables and appended
    to the end of the ranking, so they never sit above a live candidate.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    coarse = coarse_score_all(coarse_scorer, graph if coarse_graph is None else coarse_graph, query)
    fine = np.asarray(fine_model.score_all(graph, query), dtype=np.float64)
    if fine.shape != coarse.scores.shape:
        raise ContractError("coarse and fine scorers disagree on the entity count")
    live = np.ones(fine.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    table = ScoreTable(coarse.entities[live], coarse.scores[live])
    split = refine_tables(split_table(table, k), fine)
    decision = decide(split, delta)
    ranking = final_ranking(split, decision)
    dead = np.flatnonzero(~live)
    if dead.size:
        dead = dead[np.lexsort((dead, -fine[dead]))]
        ranking = np.concatenate([ranking, dead])
    return Prediction((int(query[0]), int(query[1])), decision, ranking, fine, coarse.scores)
