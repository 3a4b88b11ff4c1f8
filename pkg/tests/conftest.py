import numpy as np
import pytest

from duetgraph.kg_data import DatasetSplit, KnowledgeGraph, Vocab, add_inverse_relations
from duetgraph.numerics import Tape
from duetgraph.pathways import MessageGraph


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``f`` reads ``x`` in place."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_error(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def tape_grads(loss_fn, params):
    with Tape() as tape:
        loss = loss_fn()
        return tape.backward(loss)


def tiny_split(triples, num_entities, num_relations, test=None) -> DatasetSplit:
    vocab = Vocab(tuple(f"e{i}" for i in range(num_entities)), tuple(f"r{i}" for i in range(num_relations)))
    kg = KnowledgeGraph(vocab, triples)
    empty = np.zeros((0, 3), dtype=np.int64)
    test = empty if test is None else np.asarray(test, dtype=np.int64)
    return DatasetSplit("transductive", kg, kg.triples.copy(), empty, test, kg)


@pytest.fixture
def chain_split():
    # 0 -r0-> 1 -r0-> 2 -r1-> 3, plus 3 -r1-> 4
    return tiny_split([(0, 0, 1), (1, 0, 2), (2, 1, 3), (3, 1, 4)], 5, 2)


@pytest.fixture
def chain_graph(chain_split):
    return MessageGraph(add_inverse_relations(chain_split.fact_graph))


# -- acceptance summary ----------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, passed, detail)`` records one criterion line and prints it."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        results[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
