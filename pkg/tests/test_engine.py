from __future__ import annotations

import json
import threading
from dataclasses import replace
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from evogeo.core import CandidateSet, Context, Document, Query
from evogeo.engine import (
    ANSWER_SYNTHESIS_PROMPT,
    EngineError,
    RemoteEngine,
    RemoteParams,
    SimulatedEngine,
    SimulationParams,
    StrategyEvaluator,
    make_engine,
    salience_features,
)
from evogeo.genotype import (
    CONSTRAINT_CLAUSES,
    Genotype,
    INTENT_INSTRUCTIONS,
    Strategy,
)
from evogeo.impressions import compute_impressions

from conftest import tied_candidate_set


def noop_strategy() -> Strategy:
    return Strategy(id="noop", genotype=Genotype(instruction=INTENT_INSTRUCTIONS["generic"]))


def strategy_with(**genes) -> Strategy:
    g = Genotype(instruction=INTENT_INSTRUCTIONS["generic"], **genes)
    return Strategy(id="s-" + "-".join(f"{k}" for k in genes), genotype=g)


class TestSalience:
    def test_features(self):
        q = Query(id="q", text="solar panel cost")
        d = Document(
            id="d",
            text='solar output rose 40% according to analysts "a sunny outlook" indeed',
        )
        overlap, digits, quotes, markers = salience_features(q, d)
        assert overlap == pytest.approx(1 / 3)
        assert digits == 1
        assert quotes == 1
        assert markers == 1


class TestSimulatedRewrite:
    def test_noop_strategy_leaves_text_unchanged(self, sim_engine):
        doc = Document(id="d", text="some plain words here")
        q = Query(id="q", text="anything")
        out = sim_engine.rewrite(doc, noop_strategy(), q)
        assert out.text == doc.text

    def test_determinism(self, sim_engine):
        doc = Document(id="d", text="alpha beta gamma delta " * 10)
        q = Query(id="q", text="alpha questions")
        s = strategy_with(intent="keyword", tone="assertive")
        assert sim_engine.rewrite(doc, s, q).text == sim_engine.rewrite(doc, s, q).text

    def test_shorten_never_exceeds_input_length(self, sim_engine):
        q = Query(id="q", text="topic words")
        s = strategy_with(intent="statistic", length_policy="shorten")
        for n in (4, 10, 50):
            doc = Document(id=f"d{n}", text=" ".join(["word"] * n))
            out = sim_engine.rewrite(doc, s, q)
            assert len(out.text.split()) <= n

    def test_statistic_intent_injects_digits(self, sim_engine):
        doc = Document(id="d", text="plain words only " * 5)
        out = sim_engine.rewrite(doc, strategy_with(intent="statistic"), Query(id="q", text="x y"))
        assert any(ch.isdigit() for ch in out.text)

    def test_tone_marker_prepended(self, sim_engine):
        doc = Document(id="d", text="plain words only")
        out = sim_engine.rewrite(doc, strategy_with(tone="assertive"), Query(id="q", text="x"))
        assert out.text.startswith("Decisively:")

    def test_salience_clause_injections(self, sim_engine):
        doc = Document(id="d", text="plain words only " * 4)
        s = strategy_with(constraints=(CONSTRAINT_CLAUSES[1],), constraint_strength="normal")
        out = sim_engine.rewrite(doc, s, Query(id="q", text="x"))
        assert "according to" in out.text.lower()


class TestSimulatedSynthesize:
    def test_sentence_count(self, sim_engine, case):
        ctx, cands = case
        answer = sim_engine.synthesize(ctx.query, cands)
        assert len(answer) == sim_engine.params.sentences_per_answer

    def test_identical_docs_get_identical_word_scores(self):
        engine = SimulatedEngine(SimulationParams(seed=3, sentences_per_answer=6))
        q = Query(id="q", text="sample")
        docs = tuple(
            Document(id=f"d{i}", text="same words in every doc here", rank_index=i)
            for i in range(2)
        )
        cands = CandidateSet(docs=docs, target_index=0)
        answer = engine.synthesize(q, cands)
        s1 = compute_impressions(answer, 1)
        s2 = compute_impressions(answer, 2)
        assert s1.word == pytest.approx(s2.word)

    def test_dominant_doc_cited_first(self):
        engine = SimulatedEngine(SimulationParams(seed=5))
        q = Query(id="q", text="solar facts")
        strong = Document(
            id="a",
            text='solar facts 99% according to experts "quote here" more 42 numbers',
            rank_index=0,
        )
        weak = Document(id="b", text="nothing relevant plain words", rank_index=1)
        cands = CandidateSet(docs=(strong, weak), target_index=0)
        answer = engine.synthesize(q, cands)
        assert answer.sentences[0].citations == {1}

    def test_largest_remainder_allocation(self):
        engine = SimulatedEngine(SimulationParams(seed=1, sentences_per_answer=6))
        # Salience profile proportional to (3, 1, 1, 1, 0): digit counts give
        # exact quotas under statistic weight alone.
        q = Query(id="q", text="zzz")
        texts = [
            "1 2 3 4 5 6 filler words",
            "1 2 filler words here now",
            "7 8 filler words here now",
            "9 10 filler words here also",
            "no digits at all here",
        ]
        docs = tuple(
            Document(id=f"d{i}", text=t, rank_index=i) for i, t in enumerate(texts)
        )
        cands = CandidateSet(docs=docs, target_index=0)
        answer = engine.synthesize(q, cands)
        per_doc = {j: 0 for j in range(1, 6)}
        for s in answer.sentences:
            (j,) = s.citations
            per_doc[j] += 1
        assert per_doc == {1: 3, 2: 1, 3: 1, 4: 1, 5: 0}

    def test_pure_function_of_inputs(self, case):
        ctx, cands = case
        a = SimulatedEngine(SimulationParams(seed=9)).synthesize(ctx.query, cands)
        b = SimulatedEngine(SimulationParams(seed=9)).synthesize(ctx.query, cands)
        assert a == b
        c = SimulatedEngine(SimulationParams(seed=10)).synthesize(ctx.query, cands)
        assert a != c  # different seed shifts word counts

    def test_word_counts_in_range(self, sim_engine, cases):
        for ctx, cands in cases:
            answer = sim_engine.synthesize(ctx.query, cands)
            for s in answer.sentences:
                assert 8 <= s.word_count <= 24


class TestEvaluator:
    def test_noop_reward_exactly_zero(self, evaluator):
        ctx, cands = tied_candidate_set()
        assert evaluator.evaluate(ctx, noop_strategy(), cands) == 0.0

    def test_statistic_strategy_positive_on_tied_set(self, evaluator):
        ctx, cands = tied_candidate_set()
        reward = evaluator.evaluate(ctx, strategy_with(intent="statistic"), cands)
        assert reward > 0.0

    def test_baseline_cached(self, evaluator):
        ctx, cands = tied_candidate_set()
        evaluator.evaluate(ctx, noop_strategy(), cands)
        evaluator.evaluate(ctx, strategy_with(intent="statistic"), cands)
        assert evaluator.baseline_synths == 1
        assert evaluator.evaluations == 2

    def test_context_must_match_target(self, evaluator, case):
        ctx, cands = case
        wrong = Context(query=ctx.query, document=cands.docs[(cands.target_index + 1) % len(cands.docs)])
        with pytest.raises(ValueError):
            evaluator.evaluate(wrong, noop_strategy(), cands)


class _StubHandler(BaseHTTPRequestHandler):
    script: list[tuple[int, dict | str]] = []
    requests_seen: list[dict] = []

    def do_POST(self):  # noqa: N802 - http.server API
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).requests_seen.append(body)
        status, payload = self.script.pop(0) if self.script else (500, "exhausted")
        data = json.dumps(payload).encode() if isinstance(payload, dict) else str(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    handler = _StubHandler
    handler.script = []
    handler.requests_seen = []
    server = HTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield handler, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def _reply(text: str) -> dict:
    return {"choices": [{"message": {"content": text}}]}


class TestRemoteEngine:
    def _engine(self, url: str, retries: int = 2) -> RemoteEngine:
        return RemoteEngine(
            RemoteParams(base_url=url, model="test-model", timeout=5.0, max_retries=retries, backoff=0.01)
        )

    def test_rewrite_round_trip(self, stub_server):
        handler, url = stub_server
        handler.script = [(200, _reply("rewritten body text"))]
        engine = self._engine(url)
        doc = Document(id="d", text="original", rank_index=2)
        out = engine.rewrite(doc, noop_strategy(), Query(id="q", text="q text"))
        assert out.text == "rewritten body text"
        assert out.id == "d" and out.rank_index == 2
        sent = handler.requests_seen[0]
        assert sent["model"] == "test-model"
        assert sent["messages"][0]["role"] == "system"
        assert "q text" in sent["messages"][1]["content"]

    def test_empty_rewrite_is_none_not_error(self, stub_server):
        handler, url = stub_server
        handler.script = [(200, _reply("   "))]
        out = self._engine(url).rewrite(
            Document(id="d", text="original"), noop_strategy(), Query(id="q", text="x")
        )
        assert out is None

    def test_retry_then_success(self, stub_server):
        handler, url = stub_server
        handler.script = [(500, "oops"), (200, _reply("It works.[1]"))]
        q = Query(id="q", text="question")
        cands = CandidateSet(docs=(Document(id="d", text="doc"),), target_index=0)
        answer = self._engine(url).synthesize(q, cands)
        assert len(answer) == 1
        assert answer.sentences[0].citations == {1}
        assert len(handler.requests_seen) == 2

    def test_retries_exhausted_raises(self, stub_server):
        handler, url = stub_server
        handler.script = [(500, "a"), (503, "b"), (500, "c")]
        with pytest.raises(EngineError):
            self._engine(url, retries=2).chat("sys", "user")
        assert len(handler.requests_seen) == 3

    def test_client_error_fails_fast(self, stub_server):
        handler, url = stub_server
        handler.script = [(404, "not found")]
        with pytest.raises(EngineError):
            self._engine(url).chat("sys", "user")
        assert len(handler.requests_seen) == 1

    def test_synthesis_prompt_sent_verbatim(self, stub_server):
        handler, url = stub_server
        handler.script = [(200, _reply("Answer.[1]"))]
        q = Query(id="q", text="question")
        cands = CandidateSet(docs=(Document(id="d", text="doc body"),), target_index=0)
        self._engine(url).synthesize(q, cands)
        system = handler.requests_seen[0]["messages"][0]["content"]
        assert system == ANSWER_SYNTHESIS_PROMPT
        user = handler.requests_seen[0]["messages"][1]["content"]
        assert "[1] doc body" in user

    def test_api_key_header(self, stub_server, monkeypatch):
        handler, url = stub_server
        handler.script = [(200, _reply("ok"))]
        monkeypatch.setenv("GEO_API_KEY", "secret-key")

        captured = {}
        original = _StubHandler.do_POST

        def spy(self):
            captured["auth"] = self.headers.get("Authorization")
            original(self)

        monkeypatch.setattr(_StubHandler, "do_POST", spy)
        self._engine(url).chat("sys", "user")
        assert captured["auth"] == "Bearer secret-key"


class TestMakeEngine:
    def test_simulated(self):
        engine = make_engine("simulated", simulated_params=SimulationParams(seed=1))
        assert isinstance(engine, SimulatedEngine)
        assert engine.kind == "simulated"

    def test_remote_requires_params(self):
        with pytest.raises(ValueError):
            make_engine("remote")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_engine("imaginary")
