"""Quality-diversity archive of rewriting strategies.

Strategies live in behavioral cells keyed by their 12-dimensional descriptor.
Admission passes a novelty gate (no near-duplicate summaries within the cell)
and a value gate (beat the cell's worst elite once the cell is full).  A
composite PND score (reward + novelty + lineage diversity) drives global
pruning and parent sampling.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .genotype import (
    CATALOG_SIZE,
    Descriptor,
    Lineage,
    Strategy,
    descriptor,
    genotype_from_json,
    genotype_to_json,
)

DEFAULT_CELL_CAPACITY = 3
DEFAULT_GLOBAL_CAPACITY = 35
DEFAULT_PND_WEIGHT = 0.3
DEFAULT_NGRAM_N = 3
SIMILARITY_THRESHOLD = 0.9
_DEPTH_CAP = 5


def ngram_similarity(a: str, b: str, n: int = DEFAULT_NGRAM_N) -> float:
    """Jaccard similarity of the character n-gram sets of two strings."""
    if n < 1:
        raise ValueError("n must be >= 1")
    grams_a = _ngrams(a, n)
    grams_b = _ngrams(b, n)
    if not grams_a and not grams_b:
        return 1.0
    union = len(grams_a | grams_b)
    if union == 0:
        return 1.0
    return len(grams_a & grams_b) / union


def _ngrams(s: str, n: int) -> frozenset[str]:
    return frozenset(s[i : i + n] for i in range(len(s) - n + 1))


@dataclass(frozen=True)
class PNDComponents:
    reward: float
    novelty: float
    diversity: float
    pnd: float


class InsertDecision(Enum):
    INSERTED = "inserted"
    REPLACED = "replaced"
    REJECTED_NOVELTY = "rejected_novelty"
    REJECTED_VALUE = "rejected_value"


@dataclass(frozen=True)
class InsertResult:
    decision: InsertDecision
    replaced_id: str | None = None


@dataclass
class _Elite:
    strategy: Strategy
    seq: int
    pnd: PNDComponents


@dataclass
class ArchiveCell:
    key: Descriptor
    elites: list[_Elite] = field(default_factory=list)

    def worst(self) -> _Elite:
        return self.elites[-1]

    def sort(self) -> None:
        # Reward descending; older first among ties.
        self.elites.sort(key=lambda e: (-_reward(e.strategy), e.seq))


def _reward(s: Strategy) -> float:
    return s.reward if s.reward is not None else 0.0


class Archive:
    """MAP-Elites grid over strategy descriptors."""

    def __init__(
        self,
        cell_capacity: int = DEFAULT_CELL_CAPACITY,
        global_capacity: int = DEFAULT_GLOBAL_CAPACITY,
        pnd_weight: float = DEFAULT_PND_WEIGHT,
        ngram_n: int = DEFAULT_NGRAM_N,
    ):
        if cell_capacity < 1 or global_capacity < 1:
            raise ValueError("capacities must be >= 1")
        self.cell_capacity = cell_capacity
        self.global_capacity = global_capacity
        self.pnd_weight = pnd_weight
        self.ngram_n = ngram_n
        self.cells: dict[Descriptor, ArchiveCell] = {}
        self._next_seq = 0
        self._gram_cache: dict[str, frozenset[str]] = {}
        self._sim_cache: dict[tuple[str, str], float] = {}

    # -- queries ---------------------------------------------------------

    def __len__(self) -> int:
        return sum(len(c.elites) for c in self.cells.values())

    def strategies(self) -> list[Strategy]:
        return [e.strategy for e in self._elites()]

    def _elites(self) -> list[_Elite]:
        out: list[_Elite] = []
        for key in self.cells:
            out.extend(self.cells[key].elites)
        return out

    def get(self, strategy_id: str) -> Strategy | None:
        for e in self._elites():
            if e.strategy.id == strategy_id:
                return e.strategy
        return None

    def _similarity(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        key = (a, b) if a <= b else (b, a)
        cached = self._sim_cache.get(key)
        if cached is None:
            ga = self._grams(a)
            gb = self._grams(b)
            inter = len(ga & gb)
            union = len(ga) + len(gb) - inter
            cached = inter / union if union else 1.0
            self._sim_cache[key] = cached
        return cached

    def _grams(self, s: str) -> frozenset[str]:
        cached = self._gram_cache.get(s)
        if cached is None:
            cached = _ngrams(s, self.ngram_n)
            self._gram_cache[s] = cached
        return cached

    # -- scoring ---------------------------------------------------------

    def novelty(self, s: Strategy) -> float:
        """1 minus the highest summary similarity to any archived elite (self excluded)."""
        best = 0.0
        for e in self._elites():
            if e.strategy.id == s.id:
                continue
            sim = self._similarity(s.summary, e.strategy.summary)
            if sim > best:
                best = sim
                if best >= 1.0:
                    break
        return 1.0 - best

    def diversity(self, s: Strategy) -> float:
        """Lineage richness: depth, operator variety, and active-field fraction."""
        depth_term = min(s.lineage.generation, _DEPTH_CAP) / _DEPTH_CAP
        ops_term = len(set(s.lineage.operators)) / CATALOG_SIZE
        desc = descriptor(s.genotype)
        active_term = sum(1 for v in desc if v != 0) / len(desc)
        return (depth_term + ops_term + active_term) / 3.0

    def pnd_score(self, s: Strategy) -> PNDComponents:
        if s.reward is None:
            raise ValueError(f"strategy {s.id} has no reward")
        nov = self.novelty(s)
        div = self.diversity(s)
        return PNDComponents(
            reward=s.reward,
            novelty=nov,
            diversity=div,
            pnd=s.reward + self.pnd_weight * (nov + div),
        )

    def _refresh_pnd(self) -> None:
        for e in self._elites():
            e.pnd = self.pnd_score(e.strategy)

    # -- mutation --------------------------------------------------------

    def try_insert(self, s: Strategy, reward: float) -> InsertResult:
        """Run the candidate through the novelty and value gates."""
        if s.reward != reward:
            s = replace(s, reward=reward, reward_source=s.reward_source or "critic")
        key = descriptor(s.genotype)
        cell = self.cells.get(key)
        if cell is None:
            cell = ArchiveCell(key=key)
        for e in cell.elites:
            if self._similarity(s.summary, e.strategy.summary) > SIMILARITY_THRESHOLD:
                return InsertResult(InsertDecision.REJECTED_NOVELTY)
        if len(cell.elites) < self.cell_capacity:
            self._admit(cell, s)
            return InsertResult(InsertDecision.INSERTED)
        worst = cell.worst()
        if reward > _reward(worst.strategy):
            cell.elites.remove(worst)
            self._admit(cell, s)
            return InsertResult(InsertDecision.REPLACED, replaced_id=worst.strategy.id)
        return InsertResult(InsertDecision.REJECTED_VALUE)

    def _admit(self, cell: ArchiveCell, s: Strategy) -> None:
        pnd = self.pnd_score(s)
        cell.elites.append(_Elite(strategy=s, seq=self._next_seq, pnd=pnd))
        self._next_seq += 1
        cell.sort()
        self.cells.setdefault(cell.key, cell)

    def prune(self) -> list[str]:
        """Drop lowest-PND strategies until within global capacity.

        Sole cell occupants are spared while another removal candidate exists;
        when every remaining strategy is its cell's sole elite, the lowest-PND
        one goes anyway so capacity is always enforced.
        """
        removed: list[str] = []
        while len(self) > self.global_capacity:
            self._refresh_pnd()
            elites = sorted(self._elites(), key=lambda e: (e.pnd.pnd, e.seq))
            victim = None
            for e in elites:
                if len(self.cells[descriptor(e.strategy.genotype)].elites) > 1:
                    victim = e
                    break
            if victim is None:
                victim = elites[0]
            key = descriptor(victim.strategy.genotype)
            self.cells[key].elites.remove(victim)
            if not self.cells[key].elites:
                del self.cells[key]
            removed.append(victim.strategy.id)
        return removed

    # -- selection -------------------------------------------------------

    def sample_parents(self, n: int, rng: random.Random) -> list[Strategy]:
        """Sample up to n distinct parents: cells uniformly, elites by PND weight."""
        if len(self) == 0:
            raise ValueError("archive is empty")
        self._refresh_pnd()
        # Sorted cell keys: dict insertion order depends on archive history
        # and would make a reloaded archive sample differently.
        remaining: dict[Descriptor, list[_Elite]] = {
            key: list(self.cells[key].elites) for key in sorted(self.cells)
        }
        picked: list[Strategy] = []
        while len(picked) < n and remaining:
            keys = list(remaining)
            key = keys[rng.randrange(len(keys))]
            elites = remaining[key]
            floor = min(e.pnd.pnd for e in elites)
            weights = [e.pnd.pnd - floor + 1e-6 for e in elites]
            chosen = rng.choices(range(len(elites)), weights=weights, k=1)[0]
            picked.append(elites.pop(chosen).strategy)
            if not elites:
                del remaining[key]
        return picked

    def top_k_by_pnd(self, k: int) -> list[Strategy]:
        """Global top-k strategies by PND, newer first among ties."""
        if k < 1:
            raise ValueError("k must be >= 1")
        self._refresh_pnd()
        ranked = sorted(self._elites(), key=lambda e: (-e.pnd.pnd, -e.seq))
        return [e.strategy for e in ranked[:k]]

    # -- persistence -----------------------------------------------------

    def to_jsonl(self) -> str:
        header = {
            "format_version": 1,
            "cell_capacity": self.cell_capacity,
            "global_capacity": self.global_capacity,
            "pnd_weight": self.pnd_weight,
            "ngram_n": self.ngram_n,
            "next_seq": self._next_seq,
        }
        lines = [json.dumps(header, sort_keys=True)]
        elites = sorted(self._elites(), key=lambda e: e.seq)
        for e in elites:
            s = e.strategy
            record = {
                "id": s.id,
                "genotype": genotype_to_json(s.genotype),
                "descriptor": list(descriptor(s.genotype)),
                "summary": s.summary,
                "lineage": {
                    "parent_ids": list(s.lineage.parent_ids),
                    "generation": s.lineage.generation,
                    "operators": list(s.lineage.operators),
                },
                "reward": s.reward,
                "reward_source": s.reward_source,
                "pnd": {
                    "reward": e.pnd.reward,
                    "novelty": e.pnd.novelty,
                    "diversity": e.pnd.diversity,
                    "pnd": e.pnd.pnd,
                },
                "seq": e.seq,
            }
            lines.append(json.dumps(record, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "Archive":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise ValueError("empty archive file")
        header = json.loads(lines[0])
        if header.get("format_version") != 1:
            raise ValueError("unsupported archive format version")
        archive = cls(
            cell_capacity=header["cell_capacity"],
            global_capacity=header["global_capacity"],
            pnd_weight=header["pnd_weight"],
            ngram_n=header["ngram_n"],
        )
        for line in lines[1:]:
            record = json.loads(line)
            s = Strategy(
                id=record["id"],
                genotype=genotype_from_json(record["genotype"]),
                summary=record["summary"],
                lineage=Lineage(
                    parent_ids=tuple(record["lineage"]["parent_ids"]),
                    generation=record["lineage"]["generation"],
                    operators=tuple(record["lineage"]["operators"]),
                ),
                reward=record["reward"],
                reward_source=record["reward_source"],
            )
            key = descriptor(s.genotype)
            cell = archive.cells.setdefault(key, ArchiveCell(key=key))
            pnd = record["pnd"]
            cell.elites.append(
                _Elite(
                    strategy=s,
                    seq=record["seq"],
                    pnd=PNDComponents(
                        reward=pnd["reward"],
                        novelty=pnd["novelty"],
                        diversity=pnd["diversity"],
                        pnd=pnd["pnd"],
                    ),
                )
            )
        for cell in archive.cells.values():
            cell.sort()
        archive._next_seq = header["next_seq"]
        return archive

    @classmethod
    def load(cls, path: str | Path) -> "Archive":
        return cls.from_jsonl(Path(path).read_text())


def seed_archive(
    seeds: tuple[Strategy, ...],
    cell_capacity: int = DEFAULT_CELL_CAPACITY,
    global_capacity: int = DEFAULT_GLOBAL_CAPACITY,
    pnd_weight: float = DEFAULT_PND_WEIGHT,
) -> Archive:
    """Archive initialized with the given strategies at reward 0."""
    archive = Archive(
        cell_capacity=cell_capacity,
        global_capacity=global_capacity,
        pnd_weight=pnd_weight,
    )
    for s in seeds:
        archive.try_insert(s.with_reward(0.0, "critic"), 0.0)
    return archive
