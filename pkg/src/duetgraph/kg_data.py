"""Knowledge-graph ingestion, vocabularies, adjacency and sampling."""
from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .numerics import ContractError

DENSE_ADJACENCY_CAP = 5000


class DataError(ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class SizeError(ValueError):
    pass


class ZeroDegreeError(ValueError):
    pass


class SamplingError(ValueError):
    pass


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class Vocab:
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    entity_index: dict = field(init=False, repr=False, compare=False)
    relation_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ent = {name: i for i, name in enumerate(self.entities)}
        rel = {name: i for i, name in enumerate(self.relations)}
        if len(ent) != len(self.entities) or len(rel) != len(self.relations):
            raise DataError("vocabulary names must be unique")
        object.__setattr__(self, "entity_index", ent)
        object.__setattr__(self, "relation_index", rel)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)


class KnowledgeGraph:
    """Immutable triple store with per-relation adjacency lists.

    ``triples`` is an (m, 3) int array of (head, relation, tail).  After
    :func:`add_inverse_relations` the graph has ``2 * base_relations``
    relation ids and ``has_inverse`` is set.
    """

    def __init__(self, vocab: Vocab, triples, *, has_inverse: bool = False,
                 num_relations: int | None = None):
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        self.vocab = vocab
        self.has_inverse = has_inverse
        self.num_entities = vocab.num_entities
        self.base_relations = vocab.num_relations
        self.num_relations = num_relations if num_relations is not None else (
            2 * vocab.num_relations if has_inverse else vocab.num_relations)
        if arr.size:
            if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= self.num_entities:
                raise DataError("entity id out of vocabulary bounds")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= self.num_relations:
                raise DataError("relation id out of vocabulary bounds")
        _, first = np.unique(arr, axis=0, return_index=True)
        arr = arr[np.sort(first)]
        arr.setflags(write=False)
        self.triples = arr
        adj: dict[int, np.ndarray] = {}
        for r in range(self.num_relations):
            sel = arr[arr[:, 1] == r]
            pairs = sel[:, [0, 2]].copy()
            pairs.setflags(write=False)
            adj[r] = pairs
        self._adjacency = adj

    def __len__(self) -> int:
        return self.triples.shape[0]

    def adjacency(self, relation: int) -> np.ndarray:
        """(head, tail) pairs for one relation."""
        return self._adjacency[relation]

    def relation_name(self, r: int) -> str:
        if r >= self.base_relations:
            return self.vocab.relations[r - self.base_relations] + "^-1"
        return self.vocab.relations[r]

    def triple_set(self) -> set[tuple[int, int, int]]:
        return set(map(tuple, self.triples.tolist()))


@dataclass
class DatasetSplit:
    """Fact graphs plus query triples.

    Transductive: ``test_graph is fact_graph`` and every id lives in one
    vocabulary.  Inductive: ``test_graph`` has its own entity vocabulary
    (disjoint names) and shares relation ids with the training graph.
    """

    mode: str
    fact_graph: KnowledgeGraph
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    test_graph: KnowledgeGraph

    @property
    def num_relations(self) -> int:
        return self.fact_graph.base_relations


def _read_tsv(path: Path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    for i, line in enumerate(text.split("\n"), start=1):
        if line == "" and i == text.count("\n") + 1:
            break  # trailing newline
        fields = line.split("\t")
        if len(fields) != 3 or any(f == "" for f in fields):
            raise ParseError(path, i, f"expected 3 tab-separated fields, got {len(fields)}")
        rows.append((fields[0], fields[1], fields[2]))
    return rows


def _build_vocab(rows: Iterable[tuple[str, str, str]], relations: tuple[str, ...] | None = None) -> Vocab:
    ents: dict[str, None] = {}
    rels: dict[str, None] = {}
    for h, r, t in rows:
        ents.setdefault(h)
        ents.setdefault(t)
        rels.setdefault(r)
    return Vocab(tuple(ents), relations if relations is not None else tuple(rels))


def _encode(rows, vocab: Vocab, path, *, strict: bool = True) -> np.ndarray:
    out = []
    for i, (h, r, t) in enumerate(rows, start=1):
        try:
            out.append((vocab.entity_index[h], vocab.relation_index[r], vocab.entity_index[t]))
        except KeyError as exc:
            raise DataError(f"{path}:{i}: unknown name {exc.args[0]!r}") from None
    arr = np.asarray(out, dtype=np.int64).reshape(-1, 3)
    _, first = np.unique(arr, axis=0, return_index=True)
    return arr[np.sort(first)]


def graph_from_rows(rows, vocab: Vocab | None = None) -> KnowledgeGraph:
    vocab = vocab or _build_vocab(rows)
    return KnowledgeGraph(vocab, _encode(rows, vocab, "<rows>"))


def load_split(directory, mode: str = "transductive") -> DatasetSplit:
    """Read train/valid/test TSV files (plus facts.txt when inductive)."""
    d = Path(directory)
    if mode not in ("transductive", "inductive"):
        raise ContractError(f"unknown mode {mode!r}")
    train_rows = _read_tsv(d / "train.txt")
    valid_rows = _read_tsv(d / "valid.txt")
    test_rows = _read_tsv(d / "test.txt")
    vocab = _build_vocab(train_rows)
    train = _encode(train_rows, vocab, d / "train.txt")
    valid = _encode(valid_rows, vocab, d / "valid.txt")
    facts = KnowledgeGraph(vocab, train)
    if mode == "transductive":
        test = _encode(test_rows, vocab, d / "test.txt")
        return DatasetSplit(mode, facts, train, valid, test, facts)
    test_fact_rows = _read_tsv(d / "facts.txt")
    unknown = {r for _, r, _ in test_fact_rows + test_rows} - set(vocab.relations)
    if unknown:
        raise DataError(f"inductive test graph uses unseen relations: {sorted(unknown)[:5]}")
    test_vocab = _build_vocab(test_fact_rows + test_rows, relations=vocab.relations)
    test_graph = KnowledgeGraph(test_vocab, _encode(test_fact_rows, test_vocab, d / "facts.txt"))
    test = _encode(test_rows, test_vocab, d / "test.txt")
    return DatasetSplit(mode, facts, train, valid, test, test_graph)


def write_split(directory, split: DatasetSplit) -> None:
    """Inverse of :func:`load_split` (names come from the vocabularies)."""
    d = Path(directory)
    os.makedirs(d, exist_ok=True)

    def dump(name, arr, vocab):
        lines = [f"{vocab.entities[h]}\t{vocab.relations[r]}\t{vocab.entities[t]}\n" for h, r, t in arr.tolist()]
        (d / name).write_text("".join(lines), encoding="utf-8")

    tv = split.fact_graph.vocab
    dump("train.txt", split.train, tv)
    dump("valid.txt", split.valid, tv)
    dump("test.txt", split.test, split.test_graph.vocab)
    if split.mode == "inductive":
        dump("facts.txt", split.test_graph.triples, split.test_graph.vocab)


def add_inverse_relations(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Append (t, r + |R|, h) for every (h, r, t)."""
    if kg.has_inverse:
        raise ContractError("graph already carries inverse relations")
    tr = kg.triples
    inv = np.stack([tr[:, 2], tr[:, 1] + kg.base_relations, tr[:, 0]], axis=1)
    return KnowledgeGraph(kg.vocab, np.concatenate([tr, inv]), has_inverse=True)


def inverse_queries(triples: np.ndarray, num_relations: int) -> np.ndarray:
    """Tail queries for both directions: (h, r, t) and (t, r + R, h)."""
    tr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    inv = np.stack([tr[:, 2], tr[:, 1] + num_relations, tr[:, 0]], axis=1)
    return np.concatenate([tr, inv])


def undirected_adjacency(kg: KnowledgeGraph, add_self_loops: bool = True) -> sp.csr_matrix:
    """Binary symmetric co-occurrence matrix, optionally plus the identity."""
    n = kg.num_entities
    tr = kg.triples
    off = tr[:, 0] != tr[:, 2]
    rows = np.concatenate([tr[off, 0], tr[off, 2]])
    cols = np.concatenate([tr[off, 2], tr[off, 0]])
    a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    a.data[:] = 1.0  # collapse parallel edges
    if add_self_loops:
        a = a + sp.identity(n, format="csr")
    return a.tocsr()


def build_normalized_adjacency(kg: KnowledgeGraph, add_self_loops: bool = True) -> np.ndarray:
    """Dense D^-1/2 A D^-1/2 of the undirected entity graph."""
    n = kg.num_entities
    if n > DENSE_ADJACENCY_CAP:
        raise SizeError(f"{n} entities exceeds the dense adjacency cap of {DENSE_ADJACENCY_CAP}")
    a = undirected_adjacency(kg, add_self_loops).toarray()
    deg = a.sum(axis=1)
    if (deg == 0).any():
        raise ZeroDegreeError(f"isolated vertex {int(np.flatnonzero(deg == 0)[0])} without self-loop")
    s = 1.0 / np.sqrt(deg)
    out = a * s[:, None] * s[None, :]
    return (out + out.T) / 2.0


def sample_negatives(num_entities: int, answer: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n entity ids drawn uniformly with replacement, excluding ``answer``."""
    if num_entities < 2:
        raise SamplingError("need at least two entities to sample negatives")
    if n < 1:
        raise SamplingError("n must be positive")
    draws = rng.integers(0, num_entities - 1, size=n)
    return draws + (draws >= answer)


class KnownTriples:
    """(head, relation) -> set of tails over every known triple."""

    def __init__(self, *triple_arrays: np.ndarray):
        index: dict[tuple[int, int], set[int]] = defaultdict(set)
        for arr in triple_arrays:
            for h, r, t in np.asarray(arr).reshape(-1, 3).tolist():
                index[(h, r)].add(t)
        self._index = dict(index)

    def tails(self, head: int, relation: int) -> set[int]:
        return self._index.get((head, relation), set())

    def __contains__(self, triple) -> bool:
        h, r, t = triple
        return t in self._index.get((h, r), ())


def known_with_inverses(num_relations: int, *triple_arrays) -> KnownTriples:
    return KnownTriples(*(inverse_queries(a, num_relations) for a in triple_arrays))


def filtered_candidates(query: tuple[int, int], answer: int, known: KnownTriples, num_entities: int) -> np.ndarray:
    """True for the answer and for every entity that is not another known answer."""
    h, r = query
    mask = np.ones(num_entities, dtype=bool)
    others = list(known.tails(h, r))
    if others:
        mask[others] = False
    mask[answer] = True
    return mask
