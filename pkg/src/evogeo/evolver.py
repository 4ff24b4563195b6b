"""Candidate generation and the operator policy trained with sibling-aware AWR.

The policy maps a (context, parent) feature vector to logits over the operator
catalog.  Candidates come from policy-sampled operators plus uniformly random
symbolic perturbations.  After evaluation, each child's advantage is its gain
over the parent, baselined by the mean gain of its same-parent siblings, with
an exploration bonus for non-improving but novel children.
"""

from __future__ import annotations

import json
import random
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Context
from .genotype import (
    DESCRIPTOR_CARDINALITIES,
    Genotype,
    OPERATOR_NAMES,
    Strategy,
    apply_operator,
    descriptor,
    genotype_from_json,
    genotype_to_json,
    make_child,
    render_summary,
)

AWR_WEIGHT_CLIP = 20.0
_ONEHOT_DIM = sum(DESCRIPTOR_CARDINALITIES)
_CX_MASK = np.array([name.startswith("cx_") for name in OPERATOR_NAMES])


class EvolverDivergence(RuntimeError):
    """Policy update produced non-finite parameters."""


@dataclass(frozen=True)
class SiblingGroup:
    """Children created from one parent in one iteration, with their rewards."""

    parent_id: str
    parent_reward: float
    children: tuple[tuple[Strategy, float, float], ...]  # (child, reward, pnd)

    def __post_init__(self) -> None:
        if not self.children:
            raise ValueError("sibling group needs at least one child")


def sibling_advantage(
    group: SiblingGroup, alpha_sib: float = 0.8
) -> list[float]:
    """Per-child advantages: gain over parent, sibling-mean baselined, with a
    PND exploration bonus when the immediate gain is negative."""
    if not 0.0 <= alpha_sib <= 1.0:
        raise ValueError("alpha_sib must be in [0, 1]")
    deltas = [reward - group.parent_reward for _, reward, _ in group.children]
    mean_delta = sum(deltas) / len(deltas)
    out = []
    for (_, _, pnd), delta in zip(group.children, deltas):
        bonus = pnd if delta < 0 else 0.0
        out.append(delta - alpha_sib * mean_delta + bonus)
    return out


@dataclass(frozen=True)
class Experience:
    """One policy decision with its realized advantage."""

    features: np.ndarray
    operator_index: int
    advantage: float
    crossover_allowed: bool


@dataclass(frozen=True)
class RemoteAction:
    operator_id: str
    child_genotype: Genotype


@dataclass(frozen=True)
class RemoteProposal:
    actions: tuple[RemoteAction, ...]
    invalid_lines: int = 0
    rejected_crossovers: int = 0


class EvolverPolicy:
    """Linear softmax policy over the operator catalog."""

    def __init__(
        self, feature_dim: int = 256, temperature: float = 1.0, ngram_n: int = 3
    ):
        if feature_dim <= _ONEHOT_DIM:
            raise ValueError(f"feature_dim must exceed {_ONEHOT_DIM}")
        self.feature_dim = feature_dim
        self.temperature = temperature
        self.ngram_n = ngram_n
        self.weights = np.zeros((len(OPERATOR_NAMES), feature_dim))

    def encode(self, x: Context, parent: Strategy) -> np.ndarray:
        """Parent descriptor one-hots plus hashed query/document n-grams."""
        vec = np.zeros(self.feature_dim)
        offset = 0
        for value, card in zip(
            descriptor(parent.genotype), DESCRIPTOR_CARDINALITIES
        ):
            vec[offset + value] = 1.0
            offset += card
        hash_dim = self.feature_dim - _ONEHOT_DIM
        head = " ".join(x.document.text.split()[:128])
        text = f"{x.query.text}\x1f{head}".lower()
        for i in range(len(text) - self.ngram_n + 1):
            h = zlib.crc32(text[i : i + self.ngram_n].encode())
            sign = 1.0 if (h >> 16) & 1 else -1.0
            vec[_ONEHOT_DIM + h % hash_dim] += sign
        norm = np.linalg.norm(vec[_ONEHOT_DIM:])
        if norm > 0:
            vec[_ONEHOT_DIM:] /= norm
        return vec

    def probabilities(
        self, features: np.ndarray, crossover_allowed: bool = True
    ) -> np.ndarray:
        logits = self.weights @ features / self.temperature
        if not crossover_allowed:
            logits = np.where(_CX_MASK, -np.inf, logits)
        logits = logits - logits.max()
        probs = np.exp(logits)
        return probs / probs.sum()

    def sample_operator(
        self, features: np.ndarray, rng: random.Random, crossover_allowed: bool = True
    ) -> str:
        probs = self.probabilities(features, crossover_allowed)
        r = rng.random()
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if r <= acc:
                return OPERATOR_NAMES[i]
        return OPERATOR_NAMES[len(probs) - 1]

    def awr_update(
        self,
        experiences: list[Experience],
        beta: float = 1.0,
        lr: float = 0.2,
        steps: int = 2,
    ) -> None:
        """Advantage-weighted log-likelihood ascent on recorded decisions."""
        if beta <= 0:
            raise ValueError("beta must be positive")
        if not experiences:
            return
        weights = [
            min(float(np.exp(e.advantage / beta)), AWR_WEIGHT_CLIP)
            for e in experiences
        ]
        for _ in range(steps):
            grad = np.zeros_like(self.weights)
            for e, w in zip(experiences, weights):
                probs = self.probabilities(e.features, e.crossover_allowed)
                direction = -probs
                direction[e.operator_index] += 1.0
                grad += w * np.outer(direction, e.features)
            self.weights += lr * grad / len(experiences)
        if not np.all(np.isfinite(self.weights)):
            raise EvolverDivergence(
                f"non-finite policy weights after update on {len(experiences)} experiences"
            )

    # -- persistence -----------------------------------------------------

    def save(self, directory: str | Path, name: str = "policy") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": 1,
            "feature_dim": self.feature_dim,
            "temperature": self.temperature,
            "ngram_n": self.ngram_n,
        }
        (directory / f"{name}.meta.json").write_text(
            json.dumps(meta, sort_keys=True) + "\n"
        )
        with open(directory / f"{name}.npy", "wb") as fh:
            np.save(fh, self.weights)

    @classmethod
    def load(cls, directory: str | Path, name: str = "policy") -> "EvolverPolicy":
        directory = Path(directory)
        meta = json.loads((directory / f"{name}.meta.json").read_text())
        if meta.get("format_version") != 1:
            raise ValueError("unsupported policy format version")
        policy = cls(
            feature_dim=meta["feature_dim"],
            temperature=meta["temperature"],
            ngram_n=meta["ngram_n"],
        )
        policy.weights = np.load(directory / f"{name}.npy")
        return policy


@dataclass(frozen=True)
class Candidate:
    """A proposed child strategy with the decision that produced it."""

    strategy: Strategy
    parent: Strategy
    operator: str
    features: np.ndarray = field(repr=False)
    crossover_allowed: bool = True


def propose_candidates(
    policy: EvolverPolicy,
    x: Context,
    parents: list[Strategy],
    counts: tuple[int, int],
    rng: random.Random,
) -> list[Candidate]:
    """Hybrid candidate generation: policy-sampled operators plus uniformly
    random symbolic perturbations; de-duplicated by summary within the batch."""
    if not parents:
        raise ValueError("need at least one parent")
    n_evolver, n_ops = counts
    crossover_allowed = len(parents) > 1
    ops_pool = [
        name
        for name in OPERATOR_NAMES
        if crossover_allowed or not name.startswith("cx_")
    ]
    candidates: list[Candidate] = []
    seen: set[str] = set()

    def add(parent: Strategy, op: str, features: np.ndarray) -> None:
        other = None
        if op.startswith("cx_"):
            others = [p for p in parents if p.id != parent.id]
            other = others[rng.randrange(len(others))] if others else None
            if other is None:
                return
        child_genotype = apply_operator(op, parent.genotype, other and other.genotype, rng)
        summary = render_summary(child_genotype)
        if summary in seen:
            return
        seen.add(summary)
        parent_tuple = (parent,) if other is None else (parent, other)
        child = make_child(child_genotype, parent_tuple, op)
        candidates.append(
            Candidate(
                strategy=child,
                parent=parent,
                operator=op,
                features=features,
                crossover_allowed=crossover_allowed,
            )
        )

    for i in range(n_evolver):
        parent = parents[i % len(parents)]
        features = policy.encode(x, parent)
        op = policy.sample_operator(features, rng, crossover_allowed)
        add(parent, op, features)
    for i in range(n_ops):
        parent = parents[(n_evolver + i) % len(parents)]
        features = policy.encode(x, parent)
        op = ops_pool[rng.randrange(len(ops_pool))]
        add(parent, op, features)
    return candidates


def build_experiences(
    candidates: list[Candidate],
    groups: list[SiblingGroup],
    alpha_sib: float,
) -> list[Experience]:
    """Convert evaluated sibling groups into AWR training experiences."""
    by_child: dict[str, Candidate] = {c.strategy.id: c for c in candidates}
    experiences = []
    for group in groups:
        advantages = sibling_advantage(group, alpha_sib)
        for (child, _, _), advantage in zip(group.children, advantages):
            cand = by_child.get(child.id)
            if cand is None:
                continue
            experiences.append(
                Experience(
                    features=cand.features,
                    operator_index=OPERATOR_NAMES.index(cand.operator),
                    advantage=advantage,
                    crossover_allowed=cand.crossover_allowed,
                )
            )
    return experiences


EVOLVER_PROMPT_SYSTEM = """\
You are a prompt evolution agent for GEO. You must evolve a parent strategy (or combine two parents) into a better STRUCTURED GENOTYPE JSON (I/C/R/F/T).

1) Choose an operator_id from the provided catalog.
2) Produce a child_genotype JSON that results from applying that operator.

Important constraints:
- The output MUST be valid JSON (one object per line).
- The child genotype MUST preserve the I/C/R/F/T structure.
- If choosing a Crossover operator (starts with "cx_"): You MUST conceptually combine Parent A and Parent B.
- If Parent B is NOT provided: Do NOT choose any "cx_*" operator.
- Prefer DIVERSITY: Avoid repeating the same operator across candidates."""

EVOLVER_PROMPT_USER = """\
## Query
{query}

## Document Summary
{content_summary}

## Parent Genotype A (JSON)
{parent_genotype_json}

## Parent Genotype B (JSON) [Optional]
{parent_b_genotype_json}

## Operator Catalog
{operator_catalog}

## Task
Generate {num_candidates} candidates. Output exactly {num_candidates} JSON lines."""


def remote_propose(
    engine,
    x: Context,
    parent_a: Strategy,
    parent_b: Strategy | None,
    n: int,
) -> RemoteProposal:
    """Ask a remote model for candidate actions, one strict JSON object per line."""
    user = EVOLVER_PROMPT_USER.format(
        query=x.query.text,
        content_summary=" ".join(x.document.text.split()[:128]),
        parent_genotype_json=json.dumps(
            genotype_to_json(parent_a.genotype), sort_keys=True
        ),
        parent_b_genotype_json=(
            json.dumps(genotype_to_json(parent_b.genotype), sort_keys=True)
            if parent_b is not None
            else "(not provided)"
        ),
        operator_catalog=", ".join(OPERATOR_NAMES),
        num_candidates=n,
    )
    reply = engine.chat(EVOLVER_PROMPT_SYSTEM, user)
    actions: list[RemoteAction] = []
    invalid = 0
    rejected_cx = 0
    lines = [line for line in reply.splitlines() if line.strip()]
    for line in lines[:n]:
        try:
            obj = json.loads(line)
            op = obj["operator_id"]
            child = genotype_from_json(obj["child_genotype"])
        except (ValueError, KeyError, TypeError):
            invalid += 1
            continue
        if op not in OPERATOR_NAMES:
            invalid += 1
            continue
        if op.startswith("cx_") and parent_b is None:
            rejected_cx += 1
            continue
        actions.append(RemoteAction(operator_id=op, child_genotype=child))
    invalid += max(0, len(lines) - n)
    return RemoteProposal(
        actions=tuple(actions),
        invalid_lines=invalid,
        rejected_crossovers=rejected_cx,
    )
