"""Deterministic synthetic corpora and a finite strategy universe.

Used for smoke runs without a dataset file, for the regret experiments, and
throughout the test suite.  Documents are plain word sequences with occasional
salience features sprinkled into non-target candidates so rewriting has signal
to move.
"""

from __future__ import annotations

import random

from .core import CandidateSet, Context, Document, Query
from .genotype import (
    CONSTRAINT_CLAUSES,
    Genotype,
    INTENT_INSTRUCTIONS,
    Strategy,
)

Case = tuple[Context, CandidateSet]

_TOPICS = (
    ("solar panel efficiency", ("solar", "panel", "energy", "cells", "power")),
    ("home espresso machines", ("espresso", "coffee", "grind", "machine", "brew")),
    ("marathon training plans", ("marathon", "training", "pace", "endurance", "runs")),
    ("indoor plant care", ("plants", "light", "watering", "soil", "leaves")),
    ("electric vehicle range", ("vehicle", "battery", "charging", "range", "motor")),
    ("sourdough bread baking", ("sourdough", "starter", "flour", "dough", "bake")),
    ("backyard composting", ("compost", "organic", "waste", "garden", "nutrients")),
    ("noise cancelling headphones", ("headphones", "noise", "audio", "drivers", "sound")),
)

_FILLER = (
    "the", "a", "guide", "covers", "common", "options", "and", "explains",
    "what", "matters", "for", "most", "people", "with", "practical", "advice",
    "on", "choosing", "using", "maintaining", "comparing", "results", "over",
    "time", "including", "typical", "costs", "benefits", "tradeoffs", "tips",
)


_DIGIT_TOKENS = ("250", "12", "7,400", "98%", "3.5")


def synthetic_cases(
    n: int, seed: int = 0, n_docs: int = 5, doc_words: int = 60
) -> list[Case]:
    """Deterministic (context, candidate set) cases over a small topic pool.

    Competitor documents carry graded salience (numbers, quotes, attribution
    phrases) while the target stays plain, so rewriting the target shifts its
    share of the answer gradually instead of all at once.
    """
    rng = random.Random(seed)
    cases: list[Case] = []
    for i in range(n):
        topic, keywords = _TOPICS[i % len(_TOPICS)]
        query = Query(id=f"q{i}", text=f"what to know about {topic}")
        target_index = rng.randrange(n_docs)
        docs = []
        for d in range(n_docs):
            words = list(keywords[: rng.randint(1, 3)])
            while len(words) < doc_words:
                words.append(_FILLER[rng.randrange(len(_FILLER))])
            rng.shuffle(words)
            if d != target_index:
                for _ in range(rng.randint(1, 3)):
                    words.insert(
                        rng.randrange(len(words)),
                        _DIGIT_TOKENS[rng.randrange(len(_DIGIT_TOKENS))],
                    )
                if rng.random() < 0.4:
                    pos = rng.randrange(len(words))
                    words[pos:pos] = ["according", "to", "reviewers,"]
                if rng.random() < 0.4:
                    pos = rng.randrange(len(words))
                    words[pos:pos] = ['"solid', 'choice"']
            docs.append(
                Document(id=f"q{i}-d{d}", text=" ".join(words), rank_index=d)
            )
        cands = CandidateSet(docs=tuple(docs), target_index=target_index)
        cases.append((Context(query=query, document=cands.target), cands))
    return cases


def finite_universe(size: int = 64) -> list[Strategy]:
    """A fixed grid of strategies with distinct descriptors, for regret runs."""
    intents = (
        "generic",
        "keyword",
        "cite",
        "quote",
        "statistic",
        "authority",
        "technical",
        "simplify",
    )
    tones = ("neutral", "assertive")
    clause_options = ((), (CONSTRAINT_CLAUSES[0],))
    lengths = ("keep", "shorten")
    universe: list[Strategy] = []
    idx = 0
    for intent in intents:
        for tone in tones:
            for clauses in clause_options:
                for length in lengths:
                    genotype = Genotype(
                        instruction=INTENT_INSTRUCTIONS[intent],
                        intent=intent,
                        constraints=clauses,
                        constraint_strength="normal" if clauses else "soft",
                        tone=tone,
                        length_policy=length,
                    )
                    universe.append(
                        Strategy(id=f"u{idx:03d}", genotype=genotype)
                    )
                    idx += 1
                    if len(universe) == size:
                        return universe
    return universe
