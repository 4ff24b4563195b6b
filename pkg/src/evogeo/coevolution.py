"""The online co-evolution loop joining archive, critic, evolver, and engine.

Each iteration proposes candidates from archive parents, screens them with the
critic under a fixed engine-call budget, evaluates the selected few against
the engine, merges engine and critic rewards into the archive through the
value-novelty gates, and updates both learners from replay buffers.  All state
persists to a run directory and a run can resume from it.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .archive import Archive, InsertDecision, seed_archive
from .config import RunConfig, dump_config, parse_config
from .core import CandidateSet, Context
from .critic import CriticConfig, CriticModel
from .engine import (
    Engine,
    EngineError,
    RemoteParams,
    SimulationParams,
    StrategyEvaluator,
    make_engine,
)
from .evolver import (
    Candidate,
    EvolverPolicy,
    Experience,
    SiblingGroup,
    build_experiences,
    propose_candidates,
)
from .genotype import (
    Lineage,
    Strategy,
    genotype_from_json,
    genotype_to_json,
    seed_strategies,
)

Case = tuple[Context, CandidateSet]


@dataclass(frozen=True)
class ReplayRecord:
    """One labeled (context, strategy) experience."""

    context: Context
    strategy: Strategy
    reward: float
    source: str  # "ge" or "critic"
    iteration: int

    def to_json(self) -> dict:
        return {
            "context_id": self.context.id,
            "strategy_id": self.strategy.id,
            "reward": self.reward,
            "source": self.source,
            "iteration": self.iteration,
        }


class ReplayBuffer:
    """Append-only experience stream restricted to a single reward source."""

    def __init__(self, source: str):
        if source not in ("ge", "critic"):
            raise ValueError("source must be 'ge' or 'critic'")
        self.source = source
        self.records: list[ReplayRecord] = []

    def append(self, record: ReplayRecord) -> None:
        if record.source != self.source:
            raise ValueError(
                f"buffer accepts source={self.source!r}, got {record.source!r}"
            )
        self.records.append(record)

    def sample(self, n: int, rng: random.Random) -> list[ReplayRecord]:
        if n >= len(self.records):
            return list(self.records)
        return rng.sample(self.records, n)

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class IterationReport:
    iteration: int
    n_candidates: int
    n_eval: int
    ge_calls: int
    inserted: int = 0
    replaced: int = 0
    rejected_novelty: int = 0
    rejected_value: int = 0
    pruned: int = 0
    unevaluated: int = 0
    degraded: bool = False
    best_reward: float | None = None
    critic_loss: float | None = None
    evolver_loss: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


def screen_candidates(
    critic: CriticModel,
    x: Context,
    candidates: list[Candidate],
    k_top: int,
    k_rand: int,
    rng: random.Random,
) -> tuple[list[Candidate], dict[str, float]]:
    """Critic-scored budgeted selection: top-k exploit plus random explore."""
    if k_top < 0 or k_rand < 0:
        raise ValueError("k_top and k_rand must be >= 0")
    scores = {c.strategy.id: critic.score(x, c.strategy) for c in candidates}
    ranked = sorted(candidates, key=lambda c: (-scores[c.strategy.id], c.strategy.id))
    selected = ranked[:k_top]
    remainder = ranked[k_top:]
    n_extra = min(k_rand, len(remainder))
    if n_extra:
        selected = selected + rng.sample(remainder, n_extra)
    return selected, scores


@dataclass
class CoevolutionState:
    config: RunConfig
    archive: Archive
    critic: CriticModel
    policy: EvolverPolicy
    evaluator: StrategyEvaluator
    rng: random.Random
    buffer_true: ReplayBuffer = field(default_factory=lambda: ReplayBuffer("ge"))
    buffer_pred: ReplayBuffer = field(default_factory=lambda: ReplayBuffer("critic"))
    experiences: list[Experience] = field(default_factory=list)
    iteration: int = 0
    best_reward: float | None = None
    reports: list[IterationReport] = field(default_factory=list)
    registry: dict[str, Strategy] = field(default_factory=dict)


def build_state(config: RunConfig, engine: Engine | None = None) -> CoevolutionState:
    if engine is None:
        engine = engine_from_config(config)
    seeds = seed_strategies()
    archive = seed_archive(
        seeds,
        cell_capacity=config.cell_capacity,
        global_capacity=config.archive_capacity,
        pnd_weight=config.pnd_weight,
    )
    critic = CriticModel(
        CriticConfig(
            feature_dim=config.feature_dim,
            hidden_dim=config.hidden_dim,
            lr=config.critic_lr,
            epochs=config.critic_epochs,
            reg_weight=config.reg_weight,
            seed=config.seed,
        )
    )
    policy = EvolverPolicy(feature_dim=config.policy_feature_dim)
    state = CoevolutionState(
        config=config,
        archive=archive,
        critic=critic,
        policy=policy,
        evaluator=StrategyEvaluator(engine),
        rng=random.Random(config.seed),
    )
    for s in archive.strategies():
        state.registry[s.id] = s
    return state


def engine_from_config(config: RunConfig) -> Engine:
    if config.backend == "simulated":
        return make_engine(
            "simulated", simulated_params=SimulationParams(seed=config.seed)
        )
    return make_engine(
        "remote",
        remote_params=RemoteParams(
            base_url=config.remote_base_url,
            model=config.remote_model,
            timeout=config.remote_timeout,
            max_retries=config.remote_max_retries,
        ),
    )


def _evaluate_selected(
    state: CoevolutionState,
    ctx: Context,
    cands_set: CandidateSet,
    selected: list[Candidate],
) -> tuple[dict[str, float], int, bool]:
    """GE-evaluate the screened candidates; returns gains, failures, degraded flag."""
    gains: dict[str, float] = {}
    failures = 0
    degraded = False

    def one(cand: Candidate):
        try:
            return state.evaluator.evaluate(ctx, cand.strategy, cands_set)
        except EngineError:
            return EngineError

    if state.config.max_in_flight > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=state.config.max_in_flight) as pool:
            results = list(pool.map(one, selected))
    else:
        results = [one(c) for c in selected]
    for cand, result in zip(selected, results):
        if result is EngineError:
            degraded = True
            failures += 1
        elif result is None:
            failures += 1
        else:
            gains[cand.strategy.id] = result
    return gains, failures, degraded


def run_iteration(state: CoevolutionState, case: Case) -> IterationReport:
    """One co-evolution iteration over a single (context, candidate set) case."""
    ctx, cands_set = case
    config = state.config
    state.iteration += 1
    report = IterationReport(
        iteration=state.iteration, n_candidates=0, n_eval=0, ge_calls=0
    )

    # Phase 1: hybrid candidate generation from archive parents.
    parents = state.archive.sample_parents(config.n_parents, state.rng)
    candidates = propose_candidates(
        state.policy, ctx, parents, (config.n_evolver, config.n_ops), state.rng
    )
    report.n_candidates = len(candidates)
    if not candidates:
        report.best_reward = state.best_reward
        state.reports.append(report)
        return report

    # Phase 2: critic scoring and budgeted selection.
    selected, critic_scores = screen_candidates(
        state.critic, ctx, candidates, config.k_top, config.k_rand, state.rng
    )
    selected_ids = {c.strategy.id for c in selected}
    report.n_eval = len(selected)
    report.ge_calls = len(selected)
    assert report.ge_calls <= config.k_top + config.k_rand

    # Phase 3: GE evaluation and joint reward aggregation.
    true_gains, failures, degraded = _evaluate_selected(
        state, ctx, cands_set, selected
    )
    report.unevaluated = failures
    report.degraded = degraded

    rewards: dict[str, tuple[float, str]] = {}
    for cand in candidates:
        sid = cand.strategy.id
        if sid in true_gains:
            rewards[sid] = (true_gains[sid], "ge")
        elif sid in selected_ids:
            continue  # evaluation failed: the archive never sees this candidate
        else:
            rewards[sid] = (critic_scores[sid], "critic")

    labeled: dict[str, Strategy] = {}
    for cand in candidates:
        sid = cand.strategy.id
        if sid not in rewards:
            continue
        reward, source = rewards[sid]
        strategy = cand.strategy.with_reward(reward, source)
        labeled[sid] = strategy
        state.registry[sid] = strategy
        result = state.archive.try_insert(strategy, reward)
        if result.decision is InsertDecision.INSERTED:
            report.inserted += 1
        elif result.decision is InsertDecision.REPLACED:
            report.replaced += 1
        elif result.decision is InsertDecision.REJECTED_NOVELTY:
            report.rejected_novelty += 1
        else:
            report.rejected_value += 1
        record = ReplayRecord(
            context=ctx,
            strategy=strategy,
            reward=reward,
            source=source,
            iteration=state.iteration,
        )
        if source == "ge":
            state.buffer_true.append(record)
            if state.best_reward is None or reward > state.best_reward:
                state.best_reward = reward
        else:
            state.buffer_pred.append(record)
    report.pruned = len(state.archive.prune())
    report.best_reward = state.best_reward

    # Phase 4: online updates from this iteration's sibling groups plus replay.
    groups = _sibling_groups(state, candidates, rewards, labeled)
    new_experiences = build_experiences(candidates, groups, config.alpha_sib)
    past_experiences = state.experiences[:]
    state.experiences.extend(new_experiences)
    if state.iteration % config.update_cadence == 0:
        if new_experiences or past_experiences:
            replay = (
                state.rng.sample(
                    past_experiences,
                    min(config.replay_sample, len(past_experiences)),
                )
                if past_experiences
                else []
            )
            report.evolver_loss = _awr_with_loss(
                state.policy,
                new_experiences + replay,
                beta=config.beta,
                lr=config.policy_lr,
            )
        new_true = [r for r in state.buffer_true.records if r.iteration == state.iteration]
        if new_true:
            past = [
                r for r in state.buffer_true.records if r.iteration < state.iteration
            ]
            sample = (
                state.rng.sample(past, min(config.replay_sample, len(past)))
                if past
                else []
            )
            state.critic.calibrate_online(new_true + sample)
            log = getattr(state.critic, "last_online_report", None)
            if log:
                report.critic_loss = log[-1]["loss"]
    state.reports.append(report)
    return report


def _sibling_groups(
    state: CoevolutionState,
    candidates: list[Candidate],
    rewards: dict[str, tuple[float, str]],
    labeled: dict[str, Strategy],
) -> list[SiblingGroup]:
    by_parent: dict[str, list[tuple[Strategy, float, float]]] = {}
    parent_rewards: dict[str, float] = {}
    for cand in candidates:
        sid = cand.strategy.id
        if sid not in rewards:
            continue
        reward, _ = rewards[sid]
        strategy = labeled[sid]
        pnd = state.archive.pnd_score(strategy).pnd
        by_parent.setdefault(cand.parent.id, []).append((strategy, reward, pnd))
        parent_rewards[cand.parent.id] = (
            cand.parent.reward if cand.parent.reward is not None else 0.0
        )
    return [
        SiblingGroup(
            parent_id=pid,
            parent_reward=parent_rewards[pid],
            children=tuple(children),
        )
        for pid, children in by_parent.items()
    ]


def _awr_with_loss(
    policy: EvolverPolicy, experiences: list[Experience], beta: float, lr: float
) -> float:
    loss = 0.0
    for e in experiences:
        probs = policy.probabilities(e.features, e.crossover_allowed)
        w = min(float(np.exp(e.advantage / beta)), 20.0)
        loss -= w * float(np.log(max(probs[e.operator_index], 1e-12)))
    loss /= max(len(experiences), 1)
    policy.awr_update(experiences, beta=beta, lr=lr)
    return loss


@dataclass
class RunResult:
    state: CoevolutionState
    reports: list[IterationReport]
    best_reward: float | None


def run(
    config: RunConfig,
    cases: list[Case],
    out_dir: str | Path | None = None,
    engine: Engine | None = None,
    state: CoevolutionState | None = None,
    max_iterations: int | None = None,
    snapshot_every: int = 10,
) -> RunResult:
    """Run the co-evolution loop for config.iterations over round-robin cases."""
    if not cases:
        raise ValueError("dataset of cases must be non-empty")
    if state is None:
        state = build_state(config, engine)
    target = config.iterations
    if max_iterations is not None:
        target = min(target, max_iterations)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.cfg").write_text(dump_config(config))
        save_cases(cases, out / "cases.jsonl")
    while state.iteration < target:
        case = cases[state.iteration % len(cases)]
        run_iteration(state, case)
        if out is not None and (
            state.iteration % snapshot_every == 0 or state.iteration == target
        ):
            save_state(state, out)
    if out is not None:
        save_state(state, out)
    return RunResult(state=state, reports=state.reports, best_reward=state.best_reward)


# -- persistence -----------------------------------------------------------


def case_to_json(case: Case) -> dict:
    ctx, cands = case
    return {
        "query": {"id": ctx.query.id, "text": ctx.query.text},
        "docs": [
            {"id": d.id, "text": d.text, "rank_index": d.rank_index}
            for d in cands.docs
        ],
        "target_index": cands.target_index,
    }


def case_from_json(data: dict) -> Case:
    from .core import Document, Query

    query = Query(id=data["query"]["id"], text=data["query"]["text"])
    docs = tuple(
        Document(id=d["id"], text=d["text"], rank_index=d.get("rank_index", i))
        for i, d in enumerate(data["docs"])
    )
    cands = CandidateSet(docs=docs, target_index=data["target_index"])
    return Context(query=query, document=cands.target), cands


def save_cases(cases: list[Case], path: str | Path) -> None:
    lines = [json.dumps(case_to_json(c), sort_keys=True) for c in cases]
    Path(path).write_text("\n".join(lines) + "\n")


def load_cases(path: str | Path) -> list[Case]:
    cases = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            cases.append(case_from_json(json.loads(line)))
    return cases


def strategy_to_json(s: Strategy) -> dict:
    return {
        "id": s.id,
        "genotype": genotype_to_json(s.genotype),
        "summary": s.summary,
        "lineage": {
            "parent_ids": list(s.lineage.parent_ids),
            "generation": s.lineage.generation,
            "operators": list(s.lineage.operators),
        },
        "reward": s.reward,
        "reward_source": s.reward_source,
    }


def strategy_from_json(data: dict) -> Strategy:
    return Strategy(
        id=data["id"],
        genotype=genotype_from_json(data["genotype"]),
        summary=data["summary"],
        lineage=Lineage(
            parent_ids=tuple(data["lineage"]["parent_ids"]),
            generation=data["lineage"]["generation"],
            operators=tuple(data["lineage"]["operators"]),
        ),
        reward=data["reward"],
        reward_source=data["reward_source"],
    )


def save_state(state: CoevolutionState, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    state.archive.save(out / "archive.jsonl")
    state.critic.save(out / "models", "critic")
    state.policy.save(out / "models", "policy")
    for name, buffer in (("true", state.buffer_true), ("pred", state.buffer_pred)):
        lines = [json.dumps(r.to_json(), sort_keys=True) for r in buffer.records]
        (out / f"buffer_{name}.jsonl").write_text(
            "\n".join(lines) + ("\n" if lines else "")
        )
    lines = [
        json.dumps(strategy_to_json(s), sort_keys=True)
        for s in state.registry.values()
    ]
    (out / "strategies.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    lines = [json.dumps(r.to_json(), sort_keys=True) for r in state.reports]
    (out / "reports.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    rng_state = state.rng.getstate()
    meta = {
        "format_version": 1,
        "iteration": state.iteration,
        "best_reward": state.best_reward,
        "rng_state": [rng_state[0], list(rng_state[1]), rng_state[2]],
        "experiences": [
            {
                "operator_index": e.operator_index,
                "advantage": e.advantage,
                "crossover_allowed": e.crossover_allowed,
                "features": [float(v) for v in e.features],
            }
            for e in state.experiences
        ],
    }
    (out / "state.json").write_text(json.dumps(meta, sort_keys=True))


def load_state(out: str | Path, engine: Engine | None = None) -> CoevolutionState:
    out = Path(out)
    config = parse_config((out / "config.cfg").read_text())
    if engine is None:
        engine = engine_from_config(config)
    cases = load_cases(out / "cases.jsonl")
    contexts = {ctx.id: ctx for ctx, _ in cases}
    meta = json.loads((out / "state.json").read_text())

    registry: dict[str, Strategy] = {}
    for line in (out / "strategies.jsonl").read_text().splitlines():
        if line.strip():
            s = strategy_from_json(json.loads(line))
            registry[s.id] = s

    state = CoevolutionState(
        config=config,
        archive=Archive.load(out / "archive.jsonl"),
        critic=CriticModel.load(out / "models", "critic"),
        policy=EvolverPolicy.load(out / "models", "policy"),
        evaluator=StrategyEvaluator(engine),
        rng=random.Random(),
        registry=registry,
    )
    state.rng.setstate(
        (meta["rng_state"][0], tuple(meta["rng_state"][1]), meta["rng_state"][2])
    )
    state.iteration = meta["iteration"]
    state.best_reward = meta["best_reward"]
    for name, buffer in (("true", state.buffer_true), ("pred", state.buffer_pred)):
        path = out / f"buffer_{name}.jsonl"
        if path.exists():
            for line in path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                buffer.append(
                    ReplayRecord(
                        context=contexts[rec["context_id"]],
                        strategy=registry[rec["strategy_id"]],
                        reward=rec["reward"],
                        source=rec["source"],
                        iteration=rec["iteration"],
                    )
                )
    state.experiences = [
        Experience(
            features=np.array(e["features"]),
            operator_index=e["operator_index"],
            advantage=e["advantage"],
            crossover_allowed=e["crossover_allowed"],
        )
        for e in meta["experiences"]
    ]
    reports_path = out / "reports.jsonl"
    if reports_path.exists():
        for line in reports_path.read_text().splitlines():
            if line.strip():
                state.reports.append(IterationReport(**json.loads(line)))
    return state


def resume_run(
    out_dir: str | Path,
    engine: Engine | None = None,
    snapshot_every: int = 10,
) -> RunResult:
    """Continue a persisted run to its configured iteration count."""
    state = load_state(out_dir, engine)
    cases = load_cases(Path(out_dir) / "cases.jsonl")
    return run(
        state.config,
        cases,
        out_dir=out_dir,
        state=state,
        snapshot_every=snapshot_every,
    )


# -- finite-universe regret harness ----------------------------------------


@dataclass
class RegretResult:
    """Cumulative regret trace of the critic-guided selection loop."""

    cumulative: list[float]
    ge_calls: int

    def cumulative_at(self, t: int) -> float:
        return self.cumulative[t - 1]

    def average_at(self, t: int) -> float:
        return self.cumulative[t - 1] / t


def regret_experiment(
    engine: Engine,
    cases: list[Case],
    universe: list[Strategy],
    iterations: int,
    critic_config: CriticConfig | None = None,
    k_top: int = 4,
    k_rand: int = 4,
    candidates_per_iteration: int = 16,
    replay_sample: int = 64,
    seed: int = 0,
) -> RegretResult:
    """Critic-screened selection over a fixed finite strategy universe.

    The engine is deterministic, so every (case, strategy) gain is brute
    forced once and cached; per-iteration regret compares the true gain of
    the critic's current argmax against the true optimum for that case.
    """
    if not cases or not universe:
        raise ValueError("cases and universe must be non-empty")
    evaluator = StrategyEvaluator(engine)
    critic = CriticModel(critic_config or CriticConfig())
    rng = random.Random(seed)

    gain_cache: dict[tuple[int, str], float] = {}
    feats_cache: dict[tuple[int, str], np.ndarray] = {}

    def true_gain(case_idx: int, s: Strategy) -> float:
        key = (case_idx, s.id)
        if key not in gain_cache:
            ctx, cands = cases[case_idx]
            gain = evaluator.evaluate(ctx, s, cands)
            gain_cache[key] = gain if gain is not None else 0.0
        return gain_cache[key]

    def features(case_idx: int, s: Strategy) -> np.ndarray:
        key = (case_idx, s.id)
        if key not in feats_cache:
            ctx, _ = cases[case_idx]
            feats_cache[key] = critic.encoder.encode(ctx, s)
        return feats_cache[key]

    best_true = [
        max(true_gain(i, s) for s in universe) for i in range(len(cases))
    ]

    buffer: list[ReplayRecord] = []
    cumulative: list[float] = []
    total = 0.0
    universe_sorted = sorted(universe, key=lambda s: s.id)
    for t in range(iterations):
        case_idx = t % len(cases)
        ctx, _ = cases[case_idx]
        pool = rng.sample(universe, min(candidates_per_iteration, len(universe)))
        pool_feats = np.stack([features(case_idx, s) for s in pool])
        scores = critic.score_features(pool_feats)
        order = sorted(
            range(len(pool)), key=lambda i: (-scores[i], pool[i].id)
        )
        chosen = [pool[i] for i in order[:k_top]]
        rest = [pool[i] for i in order[k_top:]]
        if rest and k_rand:
            chosen += rng.sample(rest, min(k_rand, len(rest)))
        new_records = [
            ReplayRecord(
                context=ctx,
                strategy=s,
                reward=true_gain(case_idx, s),
                source="ge",
                iteration=t + 1,
            )
            for s in chosen
        ]
        buffer.extend(new_records)
        replay = (
            rng.sample(buffer, min(replay_sample, len(buffer)))
            if len(buffer) > len(new_records)
            else []
        )
        critic.calibrate_online(new_records + replay)

        all_feats = np.stack([features(case_idx, s) for s in universe_sorted])
        all_scores = critic.score_features(all_feats)
        incumbent = universe_sorted[int(np.argmax(all_scores))]
        total += best_true[case_idx] - true_gain(case_idx, incumbent)
        cumulative.append(total)
    return RegretResult(cumulative=cumulative, ge_calls=evaluator.evaluations)
