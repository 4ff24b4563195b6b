"""evogeo: evolving rewrite strategies for visibility in cited generative answers."""

from .archive import Archive, InsertDecision, ngram_similarity, seed_archive
from .config import RunConfig, load_config
from .coevolution import (
    IterationReport,
    ReplayBuffer,
    ReplayRecord,
    build_state,
    load_cases,
    regret_experiment,
    resume_run,
    run,
    run_iteration,
    save_cases,
    screen_candidates,
)
from .core import (
    CandidateSet,
    CitedAnswer,
    Context,
    Document,
    ImpressionScores,
    Query,
    Sentence,
    parse_cited_answer,
    render_cited_answer,
)
from .critic import CriticConfig, CriticModel, build_offline_labels, ndcg_at_k
from .data import finite_universe, synthetic_cases
from .engine import (
    EngineError,
    RemoteEngine,
    RemoteParams,
    SimulatedEngine,
    SimulationParams,
    StrategyEvaluator,
    make_engine,
)
from .estimator import GeoVisibilityOptimizer
from .evolver import (
    EvolverPolicy,
    RemoteAction,
    SiblingGroup,
    propose_candidates,
    remote_propose,
    sibling_advantage,
)
from .genotype import (
    Genotype,
    OPERATORS,
    Strategy,
    apply_operator,
    descriptor,
    render_prompt,
    render_summary,
    seed_strategies,
)
from .impressions import compute_impressions, position_weight, sensitivity_profile
from .planner import PlanTrace, optimize

__version__ = "0.1.0"

__all__ = [
    "Archive",
    "CandidateSet",
    "CitedAnswer",
    "Context",
    "CriticConfig",
    "CriticModel",
    "Document",
    "EngineError",
    "EvolverPolicy",
    "Genotype",
    "GeoVisibilityOptimizer",
    "ImpressionScores",
    "InsertDecision",
    "IterationReport",
    "OPERATORS",
    "PlanTrace",
    "Query",
    "RemoteAction",
    "RemoteEngine",
    "RemoteParams",
    "ReplayBuffer",
    "ReplayRecord",
    "RunConfig",
    "Sentence",
    "SiblingGroup",
    "SimulatedEngine",
    "SimulationParams",
    "Strategy",
    "StrategyEvaluator",
    "apply_operator",
    "build_offline_labels",
    "build_state",
    "compute_impressions",
    "descriptor",
    "finite_universe",
    "load_cases",
    "load_config",
    "make_engine",
    "ndcg_at_k",
    "ngram_similarity",
    "optimize",
    "parse_cited_answer",
    "position_weight",
    "propose_candidates",
    "regret_experiment",
    "remote_propose",
    "render_cited_answer",
    "render_prompt",
    "render_summary",
    "resume_run",
    "run",
    "run_iteration",
    "save_cases",
    "screen_candidates",
    "seed_archive",
    "seed_strategies",
    "sensitivity_profile",
    "sibling_advantage",
    "synthetic_cases",
]
