"""Stage-1 coarse scorers and the top-k table split."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import numerics as nx
from .fusion import MLP, TrainConfig, TrainingContext, make_mlp, prepare_training, train_epoch
from .kg_data import DatasetSplit
from .numerics import ContractError, Parameter, Tensor
from .pathways import LocalPathway, MessageGraph, encode_input, local_forward


class ModeError(ValueError):
    pass


@dataclass
class ScoreTable:
    """Parallel arrays of entity ids and scores."""

    entities: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.entities = np.asarray(self.entities, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.entities.shape != self.scores.shape or self.entities.ndim != 1:
            raise ContractError("entities and scores must be parallel 1-D arrays")

    def __len__(self) -> int:
        return self.entities.shape[0]

    def argmax(self) -> tuple[int, float]:
        """Highest score, ties broken by the smaller entity id."""
        if len(self) == 0:
            raise ContractError("empty table has no argmax")
        best = np.flatnonzero(self.scores == self.scores.max())
        i = best[np.argmin(self.entities[best])]
        return int(self.entities[i]), float(self.scores[i])

    def ordered(self) -> np.ndarray:
        """Positions sorted by score descending, then entity id ascending."""
        return np.lexsort((self.entities, -self.scores))


@dataclass
class SplitTable:
    high: ScoreTable
    low: ScoreTable
    k: int


class CoarseScorer(Protocol):
    def score_all(self, graph: MessageGraph, query) -> np.ndarray: ...

    def parameters(self) -> list[Parameter]: ...


class TripletCoarse:
    """Multiplicative triplet scorer: sum_d E[h]_d R[r]_d E[t]_d.

    Needs an entity table, so it only scores entities seen in training.
    """

    kind = "triplet"
    transductive_only = True

    def __init__(self, num_entities: int, num_relations: int, dim: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.dim = dim
        scale = 1.0 / np.sqrt(dim)
        self.entity_emb = Parameter("coarse.entity_emb", rng.normal(0.0, scale, (num_entities, dim)) + scale)
        self.relation_emb = Parameter("coarse.relation_emb", rng.normal(0.0, scale, (2 * num_relations, dim)) + scale)

    def config(self) -> dict:
        return {"kind": self.kind, "num_entities": self.num_entities,
                "num_relations": self.num_relations, "dim": self.dim}

    def parameters(self) -> list[Parameter]:
        return [self.entity_emb, self.relation_emb]

    def triplet_score(self, h: int, r: int, t: int) -> float:
        e, rel = self.entity_emb.data, self.relation_emb.data
        return float(np.sum(e[h] * rel[r] * e[t]))

    def score_query(self, graph: MessageGraph, query, candidates=None, keep=None) -> Tensor:
        h, r = int(query[0]), int(query[1])
        if graph.num_entities != self.num_entities:
            raise ModeError("triplet scorer cannot score a graph with a different entity set")
        hr = nx.gather_rows(self.entity_emb, [h]) * nx.gather_rows(self.relation_emb, [r])
        ents = self.entity_emb if candidates is None else nx.gather_rows(self.entity_emb, candidates)
        return nx.reshape(ents @ hr.T, (ents.shape[0],))

    def score_all(self, graph: MessageGraph, query) -> np.ndarray:
        h, r = int(query[0]), int(query[1])
        e = self.entity_emb.data
        return e @ (e[h] * self.relation_emb.data[r])


class StructuralCoarse:
    """Small local-pathway scorer with no per-entity parameters.

    Usable on inductive splits where test entities are unseen.
    """

    kind = "structural"
    transductive_only = False

    def __init__(self, num_relations: int, dim: int = 16, layers: int = 2, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.num_relations = num_relations
        self.dim = dim
        bound = np.sqrt(6.0 / (2 * dim))
        self.relation_emb = Parameter("coarse.relation_emb", rng.standard_normal((2 * num_relations, dim)))
        self.local = LocalPathway(
            [Parameter(f"coarse.local.w{i}", rng.uniform(-bound, bound, (dim, dim))) for i in range(layers)],
            [Parameter(f"coarse.local.b{i}", np.zeros(dim)) for i in range(layers)],
        )
        self.mlp: MLP = make_mlp("coarse.mlp", [dim, dim, 1], rng)

    def config(self) -> dict:
        return {"kind": self.kind, "num_relations": self.num_relations, "dim": self.dim,
                "layers": self.local.num_layers}

    def parameters(self) -> list[Parameter]:
        return [self.relation_emb, *self.local.parameters(), *self.mlp.parameters()]

    def score_query(self, graph: MessageGraph, query, candidates=None, keep=None) -> Tensor:
        state = encode_input(graph, query, self.relation_emb, 0, keep)
        z = local_forward(state, graph, self.local, keep)
        if candidates is not None:
            z = nx.gather_rows(z, candidates)
        return self.mlp(z)

    def score_all(self, graph: MessageGraph, query) -> np.ndarray:
        return self.score_query(graph, query).data.copy()


def coarse_score_all(scorer, graph: MessageGraph, query) -> ScoreTable:
    scores = scorer.score_all(graph, query)
    return ScoreTable(np.arange(scores.shape[0]), scores)


def split_table(table: ScoreTable, k: int) -> SplitTable:
    """Top-k entities by score (ties: smaller id first) versus the rest."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    order = table.ordered()
    hi, lo = order[:k], order[k:]
    return SplitTable(
        ScoreTable(table.entities[hi], table.scores[hi]),
        ScoreTable(table.entities[lo], table.scores[lo]),
        k,
    )


def train_coarse(scorer, split: DatasetSplit, config: TrainConfig, rng=None, log=None):
    """Fit a coarse scorer with the same negative-sampling loss and Adam."""
    if getattr(scorer, "transductive_only", False) and split.mode != "transductive":
        raise ModeError(f"{type(scorer).__name__} requires a transductive split")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    ctx: TrainingContext = prepare_training(split, config.lr, config.weight_decay)
    stats = [train_epoch(scorer, ctx, config, rng, log) for _ in range(config.epochs)]
    return scorer, stats
