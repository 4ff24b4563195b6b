"""Engine backends: a deterministic simulated engine and a remote chat client.

The simulated engine is a pure function of its seed and inputs.  It scores
candidate documents with a salience model (query-keyword overlap, numeric
tokens, quotation pairs, source-attribution phrases), allocates answer
sentences proportionally to salience, and applies genotype-keyed textual
transforms when rewriting.  The remote engine speaks the OpenAI-compatible
chat-completions protocol with bounded retries.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field

import requests

from .core import (
    CandidateSet,
    CitedAnswer,
    Context,
    Document,
    Query,
    Sentence,
    parse_cited_answer,
)
from .genotype import CONSTRAINT_CLAUSES, Strategy, render_prompt
from .impressions import compute_impressions

API_KEY_ENV = "GEO_API_KEY"

ANSWER_SYNTHESIS_PROMPT = """\
Write an accurate and concise answer for the given user question.
using only the provided summarized web search results.
The answer should be correct, high-quality, and written by an expert
using an unbiased and journalistic tone.
The user's language of choice, such as English, Français, Español, or Deutsch
should be used.
The answer should be informative, interesting, and engaging.
The answer's logic and reasoning should be rigorous and defensible.
Every sentence in the answer should be immediately followed by an in-line
citation to the search result(s).
The cited search result(s) should fully support all the information in the
sentence.
Search results need to be cited using [index].
When citing several search results, use [1][2][3] format rather than [1, 2, 3].
You can use multiple search results to respond comprehensively while avoiding
irrelevant search results."""


class EngineError(RuntimeError):
    """A backend failure that survived the retry policy."""


@dataclass(frozen=True)
class SimulationParams:
    seed: int = 0
    sentences_per_answer: int = 6
    keyword_overlap_w: float = 1.0
    statistic_w: float = 0.5
    quote_w: float = 0.5
    citation_marker_w: float = 0.5

    def __post_init__(self) -> None:
        if self.sentences_per_answer < 1:
            raise ValueError("sentences_per_answer must be >= 1")


@dataclass(frozen=True)
class RemoteParams:
    base_url: str
    model: str
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5


@dataclass(frozen=True)
class RewriteRecord:
    context: Context
    strategy_id: str
    rewritten: Document
    backend_kind: str


def _derive_seed(*parts: object) -> int:
    digest = hashlib.blake2b(
        "\x1f".join(str(p) for p in parts).encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


_SOURCE_MARKERS = ("according to", "source:", "reported by", "as stated by")
_TONE_MARKERS = {
    "assertive": "Decisively:",
    "simple": "Simply:",
    "technical": "Technically:",
    "formal": "Formally:",
}
_LENGTH_CAPS = {"soft": 400, "normal": 240, "strict": 140}


def _clean_token(token: str) -> str:
    return token.strip(".,;:!?\"'()").lower()


def salience_features(query: Query, doc: Document) -> tuple[float, float, float, float]:
    """(query-keyword overlap fraction, digit tokens, quote pairs, source markers)."""
    doc_tokens = doc.text.split()
    doc_vocab = {_clean_token(t) for t in doc_tokens}
    query_tokens = {_clean_token(t) for t in query.text.split()}
    query_tokens.discard("")
    overlap = (
        len(query_tokens & doc_vocab) / len(query_tokens) if query_tokens else 0.0
    )
    digits = sum(1 for t in doc_tokens if any(ch.isdigit() for ch in t))
    quotes = doc.text.count('"') // 2
    lowered = doc.text.lower()
    markers = sum(lowered.count(m) for m in _SOURCE_MARKERS)
    return overlap, float(digits), float(quotes), float(markers)


class SimulatedEngine:
    """Deterministic stand-in for a black-box generative engine."""

    kind = "simulated"

    def __init__(self, params: SimulationParams | None = None):
        self.params = params or SimulationParams()

    def salience(self, query: Query, doc: Document) -> float:
        overlap, digits, quotes, markers = salience_features(query, doc)
        p = self.params
        return (
            p.keyword_overlap_w * overlap
            + p.statistic_w * digits
            + p.quote_w * quotes
            + p.citation_marker_w * markers
        )

    # -- rewriting ---------------------------------------------------------

    def rewrite(self, doc: Document, strategy: Strategy, query: Query) -> Document:
        g = strategy.genotype
        rng = random.Random(_derive_seed(self.params.seed, "rw", doc.id, strategy.id))
        original_len = len(doc.text.split())
        tokens = doc.text.split()

        tokens = self._apply_intent(tokens, g.intent, query, rng)
        for clause in g.constraints:
            tokens = self._apply_clause(tokens, clause)
        if g.tone in _TONE_MARKERS:
            tokens = [_TONE_MARKERS[g.tone]] + tokens
        if g.length_policy == "expand":
            tokens = tokens + ["covering", "the", "broader", "context", "in", "detail"]
        elif g.length_policy == "shorten":
            tokens = tokens[: max(1, (3 * original_len) // 4)]
        if g.constraints:
            tokens = tokens[: _LENGTH_CAPS[g.constraint_strength]]
        return Document(id=doc.id, text=" ".join(tokens), rank_index=doc.rank_index)

    @staticmethod
    def _inject(tokens: list[str], new: list[str], start: int = 1) -> list[str]:
        out = list(tokens)
        for i, t in enumerate(new):
            out.insert(min(start + i, len(out)), t)
        return out

    def _apply_intent(
        self, tokens: list[str], intent: str, query: Query, rng: random.Random
    ) -> list[str]:
        if intent == "keyword":
            vocab = {_clean_token(t) for t in tokens}
            missing = [
                t
                for t in dict.fromkeys(_clean_token(w) for w in query.text.split())
                if t and t not in vocab
            ]
            if len(missing) > 4:
                missing = rng.sample(missing, 4)
            return self._inject(tokens, missing)
        if intent == "statistic":
            return self._inject(tokens, ["73%", "1,200"])
        if intent == "quote":
            return self._inject(tokens, ['"proven', 'results"'])
        if intent == "cite":
            return self._inject(tokens, ["according", "to", "industry", "reports,"])
        if intent == "authority":
            return self._inject(tokens, ["experts", "confirm"])
        if intent == "technical":
            return self._inject(tokens, ["methodologically,"])
        if intent == "simplify":
            return [t if len(t) <= 12 else t[:9] for t in tokens]
        if intent == "unique_words":
            return [
                t + "ic" if i % 6 == 2 and t.isalpha() else t
                for i, t in enumerate(tokens)
            ]
        if intent == "fluency":
            out: list[str] = []
            for t in tokens:
                if not out or out[-1] != t:
                    out.append(t)
            return out
        return tokens

    def _apply_clause(self, tokens: list[str], clause: str) -> list[str]:
        if clause == CONSTRAINT_CLAUSES[0]:  # verifiable statistics
            return self._inject(tokens, ["42%"], start=2)
        if clause == CONSTRAINT_CLAUSES[1]:  # named sources
            return self._inject(tokens, ["according", "to", "published", "sources,"], start=2)
        if clause == CONSTRAINT_CLAUSES[2]:  # supporting quotation
            return self._inject(tokens, ['"measurable', 'impact"'], start=2)
        return tokens

    # -- answer synthesis ----------------------------------------------------

    def synthesize(self, query: Query, cands: CandidateSet) -> CitedAnswer:
        if len(cands.docs) < 1:
            raise ValueError("candidate set must be non-empty")
        saliences = [self.salience(query, d) for d in cands.docs]
        counts = _largest_remainder(saliences, self.params.sentences_per_answer)
        ranks = _dense_ranks(saliences)

        order = sorted(range(len(cands.docs)), key=lambda i: (-saliences[i], i))
        sentences: list[Sentence] = []
        for doc_idx in order:
            doc = cands.docs[doc_idx]
            words_pool = [
                t.translate(_SANITIZE) for t in doc.text.split()
            ]
            words_pool = [t for t in words_pool if t] or ["item"]
            for ordinal in range(counts[doc_idx]):
                wc_rng = random.Random(
                    _derive_seed(
                        self.params.seed, "wc", query.id, ranks[doc_idx], ordinal
                    )
                )
                wc = wc_rng.randint(8, 24)
                words = [words_pool[k % len(words_pool)] for k in range(wc)]
                text = " ".join(words) + "."
                sentences.append(
                    Sentence(
                        text=text,
                        word_count=wc,
                        citations=frozenset({doc_idx + 1}),
                    )
                )
        return CitedAnswer(sentences=tuple(sentences))


_SANITIZE = str.maketrans("", "", r".!?[]")


def _largest_remainder(saliences: list[float], total: int) -> list[int]:
    """Apportion `total` sentences proportionally; ties go to the lower index."""
    mass = sum(saliences)
    if mass <= 0:
        quotas = [total / len(saliences)] * len(saliences)
    else:
        quotas = [total * s / mass for s in saliences]
    counts = [int(q) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    leftover = total - sum(counts)
    for idx in sorted(range(len(quotas)), key=lambda i: (-remainders[i], i))[:leftover]:
        counts[idx] += 1
    return counts


def _dense_ranks(saliences: list[float]) -> list[int]:
    distinct = sorted(set(saliences), reverse=True)
    rank_of = {v: r for r, v in enumerate(distinct)}
    return [rank_of[v] for v in saliences]


class RemoteEngine:
    """OpenAI-compatible chat-completions backend with bounded retries."""

    kind = "remote"

    def __init__(self, params: RemoteParams, session: requests.Session | None = None):
        self.params = params
        self.session = session or requests.Session()

    def chat(self, system: str, user: str) -> str:
        url = self.params.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.params.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: Exception | None = None
        for attempt in range(self.params.max_retries + 1):
            try:
                resp = self.session.post(
                    url, json=payload, headers=headers, timeout=self.params.timeout
                )
                if resp.status_code == 200:
                    body = resp.json()
                    return body["choices"][0]["message"]["content"]
                if resp.status_code in (429,) or resp.status_code >= 500:
                    last_error = EngineError(f"HTTP {resp.status_code}")
                else:
                    raise EngineError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            except EngineError:
                raise
            except (requests.RequestException, KeyError, ValueError, json.JSONDecodeError) as exc:
                last_error = exc
            if attempt < self.params.max_retries:
                time.sleep(self.params.backoff * (2**attempt))
        raise EngineError(f"backend unavailable after retries: {last_error}")

    def rewrite(self, doc: Document, strategy: Strategy, query: Query) -> Document | None:
        user = f"Query: {query.text}\n\nSource content:\n{doc.text}"
        reply = self.chat(render_prompt(strategy.genotype), user).strip()
        if not reply:
            return None
        return Document(id=doc.id, text=reply, rank_index=doc.rank_index)

    def synthesize(self, query: Query, cands: CandidateSet) -> CitedAnswer:
        sources = "\n".join(
            f"[{i + 1}] {doc.text}" for i, doc in enumerate(cands.docs)
        )
        user = f"Question: {query.text}\n\nSearch results:\n{sources}"
        reply = self.chat(ANSWER_SYNTHESIS_PROMPT, user)
        return parse_cited_answer(reply, len(cands.docs))


Engine = SimulatedEngine | RemoteEngine


def make_engine(
    kind: str,
    simulated_params: SimulationParams | None = None,
    remote_params: RemoteParams | None = None,
) -> Engine:
    if kind == "simulated":
        return SimulatedEngine(simulated_params)
    if kind == "remote":
        if remote_params is None:
            raise ValueError("remote backend requires remote_params")
        return RemoteEngine(remote_params)
    raise ValueError(f"unknown backend kind {kind!r}")


class StrategyEvaluator:
    """Computes strategy rewards as overall-impression gains over the baseline.

    The unrewritten baseline answer is synthesized once per (query, candidate
    set) and cached; the cache is safe under concurrent first access.
    """

    def __init__(self, engine: Engine):
        self.engine = engine
        self._baseline_cache: dict[tuple, float] = {}
        self._lock = threading.Lock()
        self.evaluations = 0
        self.baseline_synths = 0

    @staticmethod
    def _cache_key(query: Query, cands: CandidateSet) -> tuple:
        return (
            query.id,
            query.text,
            tuple((d.id, d.text) for d in cands.docs),
            cands.target_index,
        )

    def baseline(self, query: Query, cands: CandidateSet) -> float:
        key = self._cache_key(query, cands)
        with self._lock:
            if key not in self._baseline_cache:
                answer = self.engine.synthesize(query, cands)
                self.baseline_synths += 1
                self._baseline_cache[key] = compute_impressions(
                    answer, cands.target_index + 1
                ).overall
            return self._baseline_cache[key]

    def evaluate(
        self, ctx: Context, strategy: Strategy, cands: CandidateSet
    ) -> float | None:
        """Overall-impression gain of the strategy, or None when the rewrite failed."""
        if ctx.document != cands.target:
            raise ValueError("context document must be the candidate set's target")
        base = self.baseline(ctx.query, cands)
        rewritten = self.engine.rewrite(cands.target, strategy, ctx.query)
        if rewritten is None:
            return None
        answer = self.engine.synthesize(ctx.query, cands.with_target(rewritten))
        self.evaluations += 1
        return compute_impressions(answer, cands.target_index + 1).overall - base
