from __future__ import annotations

import random

import pytest

from evogeo.core import CandidateSet, CitedAnswer, Context, Document, Query, Sentence
from evogeo.data import synthetic_cases
from evogeo.engine import SimulatedEngine, SimulationParams, StrategyEvaluator
from evogeo.genotype import seed_strategies


def make_answer(*sentences: tuple[int, set[int]]) -> CitedAnswer:
    """Build an answer from (word_count, citation set) pairs."""
    built = []
    for wc, cites in sentences:
        text = " ".join(["w"] * wc)
        built.append(Sentence(text=text, word_count=wc, citations=frozenset(cites)))
    return CitedAnswer(sentences=tuple(built))


def random_answer(rng: random.Random, n_candidates: int = 5) -> CitedAnswer:
    length = rng.randint(0, 10)
    sentences = []
    for _ in range(length):
        wc = rng.randint(1, 30)
        n_cites = rng.randint(0, 3)
        cites = set(rng.sample(range(1, n_candidates + 1), min(n_cites, n_candidates)))
        sentences.append((wc, cites))
    return make_answer(*sentences)


@pytest.fixture
def seeds():
    return seed_strategies()


@pytest.fixture
def sim_engine():
    return SimulatedEngine(SimulationParams(seed=13))


@pytest.fixture
def evaluator(sim_engine):
    return StrategyEvaluator(sim_engine)


@pytest.fixture
def cases():
    return synthetic_cases(4, seed=13)


@pytest.fixture
def case(cases):
    return cases[0]


def tied_candidate_set(n_docs: int = 3, words: int = 30) -> tuple[Context, CandidateSet]:
    """Candidate set whose documents all have identical salience."""
    query = Query(id="tq", text="plain filler words only")
    docs = tuple(
        Document(id=f"t{d}", text=" ".join(["alpha beta gamma delta"] * (words // 4)), rank_index=d)
        for d in range(n_docs)
    )
    cands = CandidateSet(docs=docs, target_index=1)
    return Context(query=query, document=cands.target), cands
