"""Adaptive fusion of the two pathways, scoring, loss and training."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .kg_data import DatasetSplit, add_inverse_relations, inverse_queries, sample_negatives
from .numerics import AdamState, ContractError, Parameter, Tape, Tensor, adam_step, spectral_norm
from .pathways import (
    EncoderState,
    GlobalPathway,
    LocalPathway,
    MessageGraph,
    encode_input,
    global_forward,
    local_forward,
)

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-5
    hidden_dim: int = 32
    negatives: int = 128
    epochs: int = 10
    batch_size: int = 1
    seed: int = 42
    local_layers: int = 3
    global_layers: int = 1
    encoder_layers: int = 0
    attention: str = "softmax"


@dataclass
class MLP:
    """Linear -> ReLU -> ... -> Linear, scalar output."""

    weights: list[Parameter]
    biases: list[Parameter]

    def parameters(self) -> list[Parameter]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = nx.add_rowvec(x @ w, b)
            if i < last:
                x = nx.relu(x)
        return nx.reshape(x, (x.shape[0],))

    def forward_numpy(self, x: np.ndarray) -> np.ndarray:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.data + b.data
            if i < last:
                x = np.maximum(x, 0.0)
        return x[:, 0]


def _glorot(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def make_mlp(prefix: str, widths: list[int], rng) -> MLP:
    ws, bs = [], []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        ws.append(Parameter(f"{prefix}.w{i}", _glorot(rng, a, b)))
        bs.append(Parameter(f"{prefix}.b{i}", np.zeros(b)))
    return MLP(ws, bs)


class DuetModel:
    """Encoder relation table, both pathways, fusion logit and scorer.

    The fusion weight is ``alpha = logistic(a)`` so it stays in (0, 1).
    """

    kind = "duet"

    def __init__(self, num_relations: int, hidden_dim: int = 32, local_layers: int = 3,
                 global_layers: int = 1, encoder_layers: int = 0, attention: str = "softmax",
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        d = hidden_dim
        self.num_relations = num_relations
        self.hidden_dim = d
        self.encoder_layers = encoder_layers
        self.attention = attention
        self.relation_emb = Parameter("encoder.relation_emb", rng.standard_normal((2 * num_relations, d)))
        self.local = LocalPathway(
            [Parameter(f"local.w{i}", _glorot(rng, d, d)) for i in range(local_layers)],
            [Parameter(f"local.b{i}", np.zeros(d)) for i in range(local_layers)],
        )
        kernel = "elu" if attention == "linear" else attention
        self.global_ = GlobalPathway(
            [Parameter(f"global.wq{i}", _glorot(rng, d, d)) for i in range(global_layers)],
            [Parameter(f"global.wk{i}", _glorot(rng, d, d)) for i in range(global_layers)],
            [Parameter(f"global.wv{i}", _glorot(rng, d, d)) for i in range(global_layers)],
            kernel=kernel,
            linear=attention == "linear",
        )
        self.fusion_logit = Parameter("fusion.a", np.zeros(()))
        self.mlp = make_mlp("mlp", [d, d, 1], rng)

    # -- structure ---------------------------------------------------------

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "num_relations": self.num_relations,
            "hidden_dim": self.hidden_dim,
            "local_layers": self.local.num_layers,
            "global_layers": self.global_.num_layers,
            "encoder_layers": self.encoder_layers,
            "attention": self.attention,
        }

    def parameters(self) -> list[Parameter]:
        params = [self.relation_emb, *self.local.parameters(), *self.global_.parameters(),
                  self.fusion_logit, *self.mlp.parameters()]
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ContractError("duplicate parameter names")
        return params

    @property
    def alpha(self) -> float:
        a = float(self.fusion_logit.data)
        return 1.0 / (1.0 + math.exp(-a))

    # -- forward -----------------------------------------------------------

    def encode(self, graph: MessageGraph, query, keep=None) -> EncoderState:
        return encode_input(graph, query, self.relation_emb, self.encoder_layers, keep)

    def representations(self, graph: MessageGraph, query, keep=None) -> Tensor:
        state = self.encode(graph, query, keep)
        z_local = local_forward(state, graph, self.local, keep)
        z_global, _ = global_forward(state, self.global_)
        return fuse(z_local, z_global, nx.sigmoid(self.fusion_logit))

    def score_query(self, graph: MessageGraph, query, candidates=None, keep=None) -> Tensor:
        z = self.representations(graph, query, keep)
        return score_entities(z, self.mlp, candidates)

    def score_all(self, graph: MessageGraph, query) -> np.ndarray:
        return self.score_query(graph, query).data.copy()


def fuse(z_local: Tensor, z_global: Tensor, alpha) -> Tensor:
    """alpha * Z_local + (1 - alpha) * Z_global."""
    if z_local.shape != z_global.shape:
        raise ContractError(f"fuse: shapes {z_local.shape} and {z_global.shape} differ")
    a = nx.as_tensor(alpha)
    if a.data.size != 1:
        raise ContractError("alpha must be a scalar")
    av = float(a.data)
    if not 0.0 <= av <= 1.0:
        raise ContractError(f"alpha={av} outside [0, 1]")
    a = nx.reshape(a, ())
    return a * z_local + (1.0 - a) * z_global


def score_entities(z: Tensor, mlp: MLP, candidates=None) -> Tensor:
    """Row-wise MLP score; ``candidates`` selects rows first."""
    if z.shape[1] != mlp.weights[0].shape[0]:
        raise ContractError(f"MLP input width {mlp.weights[0].shape[0]} != {z.shape[1]}")
    if candidates is not None:
        z = nx.gather_rows(z, candidates)
    return mlp(z)


def loss(scores: Tensor, answer_pos: int = 0, negative_pos=None) -> Tensor:
    """-log sigmoid(s_answer) - sum log(1 - sigmoid(s_neg)).

    ``scores`` holds the answer at ``answer_pos``; the remaining entries
    (or ``negative_pos``) are negatives.
    """
    n = scores.shape[0]
    if negative_pos is None:
        negative_pos = [i for i in range(n) if i != answer_pos]
    neg = np.asarray(negative_pos, dtype=np.int64)
    if neg.size == 0:
        raise ContractError("loss needs at least one negative")
    if (neg == answer_pos).any():
        raise ContractError("answer appears among negatives")
    pos = nx.gather_rows(scores, [answer_pos])
    return nx.total(nx.softplus(-pos)) + nx.total(nx.softplus(nx.gather_rows(scores, neg)))


def query_loss(model, graph: MessageGraph, query_triple, negatives: np.ndarray, keep=None) -> Tensor:
    h, r, t = (int(x) for x in query_triple)
    if (negatives == t).any():
        raise ContractError("answer appears among negatives")
    cands = np.concatenate([[t], negatives])
    scores = model.score_query(graph, (h, r), cands, keep)
    return loss(scores, 0)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    alpha: float | None

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "mean_loss": self.mean_loss, "alpha": self.alpha}, sort_keys=True)


@dataclass
class TrainingContext:
    """Per-split state reused across epochs: message graph, queries, Adam."""

    graph: MessageGraph
    queries: np.ndarray
    adam: AdamState
    epoch: int = 0


def prepare_training(split: DatasetSplit, lr: float, weight_decay: float) -> TrainingContext:
    if split.train.shape[0] == 0:
        raise ContractError("split has no training queries")
    graph = MessageGraph(add_inverse_relations(split.fact_graph))
    queries = inverse_queries(split.train, split.num_relations)
    return TrainingContext(graph, queries, AdamState(lr=lr, weight_decay=weight_decay))


def train_epoch(model, ctx: TrainingContext, config: TrainConfig, rng: np.random.Generator,
                log=None) -> EpochStats:
    """One pass over shuffled train queries, one Adam step per query."""
    params = model.parameters()
    order = rng.permutation(ctx.queries.shape[0])
    total_loss = 0.0
    n_ent = ctx.graph.num_entities
    for qi in order:
        triple = ctx.queries[qi]
        keep = ctx.graph.edge_mask_without(triple)
        negs = sample_negatives(n_ent, int(triple[2]), config.negatives, rng)
        with Tape() as tape:
            value = query_loss(model, ctx.graph, triple, negs, keep)
            lv = value.item()
            if not math.isfinite(lv):
                dump = {p.name: float(np.abs(p.data).max()) for p in params}
                raise TrainingError(f"non-finite loss at query {triple.tolist()}; max |param|: {dump}")
            grads = tape.backward(value)
        adam_step(params, grads, ctx.adam)
        total_loss += lv
    ctx.epoch += 1
    alpha = model.alpha if hasattr(model, "fusion_logit") else None
    stats = EpochStats(ctx.epoch, total_loss / len(order), alpha)
    if log is not None:
        log.write(stats.to_json() + "\n")
    logger.info("epoch %d mean loss %.6f", stats.epoch, stats.mean_loss)
    return stats


def train(model, split: DatasetSplit, config: TrainConfig, rng=None, log=None) -> list[EpochStats]:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    ctx = prepare_training(split, config.lr, config.weight_decay)
    return [train_epoch(model, ctx, config, rng, log) for _ in range(config.epochs)]


@dataclass(frozen=True)
class LipschitzEstimate:
    value: float
    method: str = "spectral-product"


def estimate_lipschitz(mlp: MLP) -> LipschitzEstimate:
    """Product of per-layer spectral norms; valid for 1-Lipschitz activations."""
    value = 1.0
    for w in mlp.weights:
        value *= spectral_norm(w.data).value
    return LipschitzEstimate(value)
