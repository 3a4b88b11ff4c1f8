"""Query-conditioned input encoding and the two parallel pathways.

The local pathway is relational message passing seeded at the query
head; the global pathway is attention over every entity.  Both read the
same :class:`EncoderState` and never feed into each other.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import numerics as nx
from .kg_data import KnowledgeGraph, SizeError
from .numerics import ContractError, Parameter, Tensor

ATTENTION_DIAGNOSTIC_CAP = 2000


class MessageGraph:
    """Directed edge arrays (src, rel, dst) used for message passing.

    Built from a graph that already carries inverse relations, so every
    fact contributes an edge in each direction.
    """

    def __init__(self, kg: KnowledgeGraph):
        if not kg.has_inverse:
            raise ContractError("message passing expects a graph with inverse relations")
        tr = kg.triples
        self.num_entities = kg.num_entities
        self.num_relations = kg.num_relations
        self.src = tr[:, 0].copy()
        self.rel = tr[:, 1].copy()
        self.dst = tr[:, 2].copy()
        self.base_relations = kg.base_relations
        self._edge_ids = {key: i for i, key in enumerate(map(tuple, tr.tolist()))}

    @property
    def num_edges(self) -> int:
        return self.src.shape[0]

    def edge_mask_without(self, triples) -> np.ndarray | None:
        """Keep-mask dropping the given triples and their inverse edges.

        Used while training so a query cannot be answered by reading its
        own edge off the fact graph.
        """
        drop = []
        for h, r, t in np.asarray(triples).reshape(-1, 3).tolist():
            r_inv = r - self.base_relations if r >= self.base_relations else r + self.base_relations
            for key in ((h, r, t), (t, r_inv, h)):
                i = self._edge_ids.get(key)
                if i is not None:
                    drop.append(i)
        if not drop:
            return None
        keep = np.ones(self.num_edges, dtype=bool)
        keep[drop] = False
        return keep

    def mean_operator(self, keep: np.ndarray | None = None) -> sp.csr_matrix:
        """Row-normalized undirected adjacency with self-loops."""
        src, dst = (self.src, self.dst) if keep is None else (self.src[keep], self.dst[keep])
        n = self.num_entities
        off = src != dst
        a = sp.csr_matrix((np.ones(int(off.sum())), (dst[off], src[off])), shape=(n, n))
        a.data[:] = 1.0
        a = a.maximum(a.T) + sp.identity(n, format="csr")
        deg = np.asarray(a.sum(axis=1)).ravel()
        return sp.diags(1.0 / deg) @ a


@dataclass
class EncoderState:
    x0: Tensor
    relation_emb: Parameter
    head: int
    relation: int


def encode_input(graph: MessageGraph, query: tuple[int, int], relation_emb: Parameter,
                 encoder_layers: int = 0, keep: np.ndarray | None = None) -> EncoderState:
    """Place the query relation embedding on the head row, zeros elsewhere.

    ``encoder_layers`` rounds of neighborhood averaging (self-loop
    included) optionally smooth the labeling over the graph.
    """
    h, r = int(query[0]), int(query[1])
    n = graph.num_entities
    if not (0 <= h < n) or not (0 <= r < relation_emb.shape[0]):
        raise ContractError(f"query ({h}, {r}) out of range")
    seed = nx.gather_rows(relation_emb, [r])
    x = nx.segment_sum(seed, [h], n)
    if encoder_layers:
        op = graph.mean_operator(keep)
        for _ in range(encoder_layers):
            x = nx.spmm(op, x)
    return EncoderState(x, relation_emb, h, r)


@dataclass
class LocalPathway:
    weights: list[Parameter] = field(default_factory=list)
    biases: list[Parameter] = field(default_factory=list)
    activation: str = "relu"

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[Parameter]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def _activate(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return nx.relu(x)
    if kind == "identity":
        return x
    raise ContractError(f"unknown activation {kind!r}")


def local_forward(state: EncoderState, graph: MessageGraph, pathway: LocalPathway,
                  keep: np.ndarray | None = None) -> Tensor:
    """Relational message passing.

    Per layer, edge (u, r, v) sends x_u * W_r; node v takes its own state
    plus incoming messages, divided by (1 + in-degree), then applies a
    linear map and the activation.
    """
    src, rel, dst = graph.src, graph.rel, graph.dst
    if keep is not None:
        src, rel, dst = src[keep], rel[keep], dst[keep]
    n = graph.num_entities
    deg = np.bincount(dst, minlength=n).astype(np.float64) + 1.0
    inv_deg = 1.0 / deg
    edge_w = inv_deg[dst]
    x = state.x0
    for w, b in zip(pathway.weights, pathway.biases):
        msg = nx.gather_rows(x, src) * nx.gather_rows(state.relation_emb, rel)
        agg = nx.segment_sum(msg, dst, n, edge_w) + nx.scale_rows(x, Tensor(inv_deg))
        x = _activate(nx.add_rowvec(agg @ w, b), pathway.activation)
    return x


@dataclass
class GlobalPathway:
    """Attention layers; ``kernel`` is "softmax" or "elu" (linearizable)."""

    query_weights: list[Parameter] = field(default_factory=list)
    key_weights: list[Parameter] = field(default_factory=list)
    value_weights: list[Parameter] = field(default_factory=list)
    kernel: str = "softmax"
    linear: bool = False

    @property
    def num_layers(self) -> int:
        return len(self.query_weights)

    def parameters(self) -> list[Parameter]:
        return [p for trio in zip(self.query_weights, self.key_weights, self.value_weights) for p in trio]


def attention_matrix(q: Tensor, k: Tensor, kernel: str = "softmax") -> Tensor:
    """Row-stochastic attention weights between all entity pairs."""
    d = q.shape[1]
    if kernel == "softmax":
        return nx.softmax_rows((q @ k.T) * (1.0 / np.sqrt(d)))
    if kernel == "elu":
        sim = nx.elu_plus_one(q) @ nx.elu_plus_one(k).T
        return nx.scale_rows(sim, nx.reciprocal(nx.reshape(sim @ Tensor(np.ones((sim.shape[1], 1))), (sim.shape[0],))))
    raise ContractError(f"unknown attention kernel {kernel!r}")


def _linear_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    fq, fk = nx.elu_plus_one(q), nx.elu_plus_one(k)
    kv = fk.T @ v
    ksum = fk.T @ Tensor(np.ones((fk.shape[0], 1)))
    denom = nx.reshape(fq @ ksum, (fq.shape[0],))
    return nx.scale_rows(fq @ kv, nx.reciprocal(denom))


def global_forward(state: EncoderState, pathway: GlobalPathway, return_attention: bool = False):
    """Per layer: Z <- P (Z W_v) with P = softmax(Q K^T / sqrt(d)).

    Returns ``(Z_global, attention)`` where ``attention`` is a list of the
    per-layer P arrays when requested, else None.
    """
    z = state.x0
    n = z.shape[0]
    if return_attention and n > ATTENTION_DIAGNOSTIC_CAP:
        raise SizeError(f"dense attention for {n} entities exceeds cap {ATTENTION_DIAGNOSTIC_CAP}")
    mats = [] if return_attention else None
    for wq, wk, wv in zip(pathway.query_weights, pathway.key_weights, pathway.value_weights):
        q, k, v = z @ wq, z @ wk, z @ wv
        if pathway.linear and not return_attention:
            if pathway.kernel != "elu":
                raise ContractError("linear attention requires the 'elu' kernel")
            z = _linear_attention(q, k, v)
            continue
        p = attention_matrix(q, k, pathway.kernel)
        if mats is not None:
            mats.append(p.data.copy())
        z = p @ v
    return z, mats
