"""Inference-time multi-turn rewriting guided by the critic.

The planner greedily applies the strategy the critic scores highest for the
current document, never reuses a strategy (tabu constraint), and stops when
the best remaining predicted score no longer improves, the step cap is hit,
or the pool runs out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .archive import Archive
from .core import Context, Document, Query
from .critic import CriticModel
from .engine import Engine, EngineError
from .genotype import Strategy

DEFAULT_POOL_SIZE = 25
DEFAULT_MAX_STEPS = 3

STOP_MARGINAL_GAIN = "marginal_gain"
STOP_MAX_STEPS = "max_steps"
STOP_POOL_EXHAUSTED = "pool_exhausted"
STOP_REWRITE_FAILED = "rewrite_failed"


@dataclass
class PlannerState:
    step: int
    document: Document
    tabu: tuple[str, ...]
    pool: tuple[Strategy, ...]
    best_remaining: float

    def remaining(self) -> list[Strategy]:
        return [s for s in self.pool if s.id not in self.tabu]


@dataclass(frozen=True)
class PlanStep:
    strategy_id: str
    critic_score: float
    document_text: str


@dataclass(frozen=True)
class PlanTrace:
    steps: tuple[PlanStep, ...]
    stop_reason: str

    def to_json(self) -> dict:
        return {
            "steps": [
                {
                    "strategy_id": s.strategy_id,
                    "critic_score": s.critic_score,
                    "document": s.document_text,
                }
                for s in self.steps
            ],
            "stop_reason": self.stop_reason,
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def select_strategy(
    critic: CriticModel,
    query: Query,
    document: Document,
    pool: list[Strategy],
    tabu: set[str] | tuple[str, ...],
) -> tuple[Strategy, float]:
    """Highest critic score over the non-tabu pool; ties go to the smaller id."""
    tabu_set = set(tabu)
    available = [s for s in pool if s.id not in tabu_set]
    if not available:
        raise ValueError("pool exhausted")
    ctx = Context(query=query, document=document)
    scored = [(critic.score(ctx, s), s) for s in available]
    best_score, best = min(scored, key=lambda t: (-t[0], t[1].id))
    return best, best_score


def _best_remaining(
    critic: CriticModel, query: Query, document: Document, remaining: list[Strategy]
) -> float:
    ctx = Context(query=query, document=document)
    return max(critic.score(ctx, s) for s in remaining)


def plan_step(
    state: PlannerState,
    query: Query,
    critic: CriticModel,
    engine: Engine,
) -> tuple[PlannerState, PlanStep | None]:
    """Apply the selected strategy via the rewrite backend; None on failure."""
    strategy, score = select_strategy(
        critic, query, state.document, list(state.pool), state.tabu
    )
    try:
        rewritten = engine.rewrite(state.document, strategy, query)
    except EngineError:
        rewritten = None
    if rewritten is None or not rewritten.text.strip():
        return state, None
    next_state = PlannerState(
        step=state.step + 1,
        document=rewritten,
        tabu=state.tabu + (strategy.id,),
        pool=state.pool,
        best_remaining=state.best_remaining,
    )
    return next_state, PlanStep(
        strategy_id=strategy.id, critic_score=score, document_text=rewritten.text
    )


def should_stop(
    before: PlannerState,
    after: PlannerState,
    query: Query,
    critic: CriticModel,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> tuple[bool, str | None]:
    """Stop when the best remaining predicted score fails to improve, the step
    cap is reached, or no strategies remain."""
    if after.step >= max_steps:
        return True, STOP_MAX_STEPS
    remaining_after = after.remaining()
    if not remaining_after:
        return True, STOP_POOL_EXHAUSTED
    best_before = _best_remaining(critic, query, before.document, before.remaining())
    best_after = _best_remaining(critic, query, after.document, remaining_after)
    if best_after <= best_before:
        return True, STOP_MARGINAL_GAIN
    return False, None


def optimize(
    query: Query,
    document: Document,
    archive: Archive,
    critic: CriticModel,
    engine: Engine,
    pool_size: int = DEFAULT_POOL_SIZE,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> tuple[Document, PlanTrace]:
    """Plan and apply up to `max_steps` rewrites; returns the final document
    and the per-step trace."""
    if len(archive) == 0:
        raise ValueError("archive is empty")
    pool = tuple(archive.top_k_by_pnd(pool_size))
    state = PlannerState(
        step=0, document=document, tabu=(), pool=pool, best_remaining=0.0
    )
    steps: list[PlanStep] = []
    if max_steps <= 0:
        return document, PlanTrace(steps=(), stop_reason=STOP_MAX_STEPS)
    stop_reason = STOP_POOL_EXHAUSTED
    while True:
        if not state.remaining():
            stop_reason = STOP_POOL_EXHAUSTED
            break
        next_state, step = plan_step(state, query, critic, engine)
        if step is None:
            stop_reason = STOP_REWRITE_FAILED
            break
        steps.append(step)
        stop, reason = should_stop(state, next_state, query, critic, max_steps)
        state = next_state
        if stop:
            stop_reason = reason or STOP_MAX_STEPS
            break
    return state.document, PlanTrace(steps=tuple(steps), stop_reason=stop_reason)


def format_trace_table(trace: PlanTrace) -> str:
    """Human-readable step table for CLI output."""
    lines = [f"{'step':>4}  {'strategy':<28} {'critic score':>12}"]
    for i, step in enumerate(trace.steps, start=1):
        lines.append(f"{i:>4}  {step.strategy_id:<28} {step.critic_score:>12.6f}")
    lines.append(f"stop reason: {trace.stop_reason}")
    return "\n".join(lines)
