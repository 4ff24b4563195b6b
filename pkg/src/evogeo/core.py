"""Core domain types and cited-answer parsing.

Everything downstream (impression scoring, engines, the planner) works on the
types defined here: queries, documents, candidate sets, and the structured
cited answer an engine produces.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Query:
    """A user query. `text` must be non-empty after trimming."""

    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("query text must be non-empty")


@dataclass(frozen=True)
class Document:
    """One candidate document; `rank_index` is its position in the candidate set."""

    id: str
    text: str
    rank_index: int = 0

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("document text must be non-empty")
        if self.rank_index < 0:
            raise ValueError("rank_index must be non-negative")


@dataclass(frozen=True)
class Context:
    """The (query, document) pair a rewriting strategy is conditioned on."""

    query: Query
    document: Document

    @property
    def id(self) -> str:
        return f"{self.query.id}::{self.document.id}"


@dataclass(frozen=True)
class CandidateSet:
    """Ordered candidate documents with the index of the content being optimized."""

    docs: tuple[Document, ...]
    target_index: int

    def __post_init__(self) -> None:
        if not 0 <= self.target_index < len(self.docs):
            raise ValueError("target_index out of range")
        ids = [d.id for d in self.docs]
        if len(set(ids)) != len(ids):
            raise ValueError("candidate document ids must be unique")

    @property
    def target(self) -> Document:
        return self.docs[self.target_index]

    def with_target(self, doc: Document) -> "CandidateSet":
        """Return a copy with the target document substituted."""
        docs = list(self.docs)
        docs[self.target_index] = doc
        return CandidateSet(docs=tuple(docs), target_index=self.target_index)


@dataclass(frozen=True)
class Sentence:
    """One answer sentence with its citation set (1-based candidate indices)."""

    text: str
    word_count: int
    citations: frozenset[int]

    def __post_init__(self) -> None:
        if self.word_count != len(self.text.split()):
            raise ValueError("word_count must equal whitespace token count")


@dataclass(frozen=True)
class CitedAnswer:
    """A parsed engine answer: ordered sentences, each with citations.

    `dropped_citations` records out-of-range markers seen during parsing; it is
    diagnostic only and excluded from equality.
    """

    sentences: tuple[Sentence, ...]
    dropped_citations: tuple[int, ...] = field(default=(), compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class ImpressionScores:
    """Visibility of one candidate inside an answer: word, position and overall mass."""

    word: float
    pos: float
    overall: float


# A sentence ends at terminal punctuation, optionally followed by citation
# markers, then whitespace or end of input.  A marker run attached directly to
# text (no space) also terminates a sentence, so rendered answers whose
# sentences lack terminal punctuation still round-trip; a spaced-out "[1]" in
# the middle of a sentence stays prose.
_MARK = r"\[\d+(?:\s*,\s*\d+)*\]"
_SENTENCE_RE = re.compile(
    rf"(.*?(?:[.!?](?:\s*{_MARK})*|\S(?:{_MARK})+))(?:\s+|$)", re.DOTALL
)
_TRAILING_MARKERS_RE = re.compile(rf"((?:\s*{_MARK})+)\s*$")
_INDEX_RE = re.compile(r"\d+")


def parse_cited_answer(raw_text: str, n: int) -> CitedAnswer:
    """Parse engine output into sentences with trailing [k] citation markers.

    Sentences split on '.', '!' or '?'; a trailing run of markers (both
    "[1][2]" and "[1, 2]" forms) attaches to the preceding sentence and is
    stripped before word counting.  Indices outside 1..n are dropped and
    recorded.  Malformed markers are left in place as prose.
    """
    if n < 1:
        raise ValueError("candidate count n must be >= 1")
    text = raw_text.strip()
    if not text:
        return CitedAnswer(sentences=())

    chunks = []
    pos = 0
    for m in _SENTENCE_RE.finditer(text):
        chunk = m.group(1).strip()
        if chunk:
            chunks.append(chunk)
        pos = m.end()
    remainder = text[pos:].strip()
    if remainder:
        chunks.append(remainder)

    sentences: list[Sentence] = []
    dropped: list[int] = []
    for chunk in chunks:
        citations: set[int] = set()
        marker_match = _TRAILING_MARKERS_RE.search(chunk)
        if marker_match:
            for idx_text in _INDEX_RE.findall(marker_match.group(1)):
                idx = int(idx_text)
                if 1 <= idx <= n:
                    citations.add(idx)
                else:
                    dropped.append(idx)
            chunk = chunk[: marker_match.start()].strip()
        if not chunk and not citations:
            continue
        sentences.append(
            Sentence(
                text=chunk,
                word_count=len(chunk.split()),
                citations=frozenset(citations),
            )
        )
    return CitedAnswer(sentences=tuple(sentences), dropped_citations=tuple(dropped))


def render_cited_answer(answer: CitedAnswer) -> str:
    """Render an answer back to text, emitting markers in the "[1][2]" form.

    Inverse of :func:`parse_cited_answer` up to whitespace normalization.
    """
    parts = []
    for sentence in answer.sentences:
        markers = "".join(f"[{k}]" for k in sorted(sentence.citations))
        parts.append(sentence.text + markers)
    return " ".join(parts)
