"""Synthetic kinship-style knowledge graphs for desk-scale runs.

Each family has a grandparent couple, two children with married-in
spouses, and two grandchildren per child couple (10 people).  Every
kinship fact derivable inside a family is emitted, then a seeded random
share is held out for valid/test.  Held-out facts stay inferable from
the remaining ones (inverse relations, composition), which is what makes
the graph a useful check for query-conditioned message passing.

Run ``python -m duetgraph.synthetic OUT_DIR`` to write TSV files.
"""
from __future__ import annotations

import argparse
from itertools import permutations

import numpy as np

from .kg_data import DatasetSplit, KnowledgeGraph, Vocab, write_split

RELATIONS = (
    "father_of", "mother_of", "son_of", "daughter_of", "husband_of", "wife_of",
    "brother_of", "sister_of", "grandfather_of", "grandmother_of", "grandson_of",
    "granddaughter_of", "uncle_of", "aunt_of", "nephew_of", "niece_of", "cousin_of",
)
PEOPLE_PER_FAMILY = 10


def _family_facts(base: int, male: np.ndarray):
    """Yield (head, relation, tail) for one family; ids offset by ``base``."""
    gp_m, gp_f = base, base + 1
    kids = [base + 2, base + 3]
    spouses = [base + 4, base + 5]
    grand = {kids[0]: [base + 6, base + 7], kids[1]: [base + 8, base + 9]}

    def is_male(p):
        return bool(male[p - base])

    parents = {}
    for k in kids:
        parents[k] = (gp_m, gp_f)
    for k, s in zip(kids, spouses):
        for g in grand[k]:
            parents[g] = (k, s) if is_male(k) else (s, k)

    couples = [(gp_m, gp_f)] + [(k, s) if is_male(k) else (s, k) for k, s in zip(kids, spouses)]
    for hb, wf in couples:
        yield hb, "husband_of", wf
        yield wf, "wife_of", hb

    for child, (fa, mo) in parents.items():
        yield fa, "father_of", child
        yield mo, "mother_of", child
        rel = "son_of" if is_male(child) else "daughter_of"
        yield child, rel, fa
        yield child, rel, mo

    groups = [kids] + list(grand.values())
    for grp in groups:
        for a, b in permutations(grp, 2):
            yield a, "brother_of" if is_male(a) else "sister_of", b

    for k in kids:
        for g in grand[k]:
            yield gp_m, "grandfather_of", g
            yield gp_f, "grandmother_of", g
            rel = "grandson_of" if is_male(g) else "granddaughter_of"
            yield g, rel, gp_m
            yield g, rel, gp_f

    for k, s in zip(kids, spouses):
        other = kids[1] if k == kids[0] else kids[0]
        for g in grand[other]:
            for elder in (k, s):
                yield elder, "uncle_of" if is_male(elder) else "aunt_of", g
                yield g, "nephew_of" if is_male(g) else "niece_of", elder
        for g in grand[k]:
            for c in grand[other]:
                yield g, "cousin_of", c


def kinship_split(num_entities: int = 200, seed: int = 0, valid_frac: float = 0.05,
                  test_frac: float = 0.10) -> DatasetSplit:
    """Transductive split over ``num_entities // 10`` families."""
    rng = np.random.default_rng(seed)
    families = num_entities // PEOPLE_PER_FAMILY
    n = families * PEOPLE_PER_FAMILY
    rel_index = {r: i for i, r in enumerate(RELATIONS)}
    facts = []
    for f in range(families):
        male = rng.random(PEOPLE_PER_FAMILY) < 0.5
        male[0], male[1] = True, False
        # spouses have the opposite sex of the child they marry
        male[4], male[5] = not male[2], not male[3]
        base = f * PEOPLE_PER_FAMILY
        facts.extend((h, rel_index[r], t) for h, r, t in _family_facts(base, male))
    facts = np.unique(np.asarray(facts, dtype=np.int64), axis=0)
    order = rng.permutation(facts.shape[0])
    n_test = int(round(test_frac * len(order)))
    n_valid = int(round(valid_frac * len(order)))
    test = facts[np.sort(order[:n_test])]
    valid = facts[np.sort(order[n_test:n_test + n_valid])]
    train = facts[np.sort(order[n_test + n_valid:])]
    vocab = Vocab(tuple(f"person{i:04d}" for i in range(n)), RELATIONS)
    graph = KnowledgeGraph(vocab, train)
    return DatasetSplit("transductive", graph, graph.triples.copy(), valid, test, graph)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="write a synthetic kinship dataset")
    parser.add_argument("out_dir")
    parser.add_argument("--entities", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    write_split(args.out_dir, kinship_split(args.entities, args.seed))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
