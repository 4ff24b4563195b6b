"""Scikit-learn-style facade over the full pipeline.

``fit`` warm-starts the critic on offline labels and runs online co-evolution
over the training cases; ``transform`` plans multi-turn rewrites for new
(query, document) pairs; ``predict`` returns the critic's best predicted gain.
Hyperparameters live in ``__init__`` so ``get_params``/``set_params``/``clone``
work as usual.
"""

from __future__ import annotations

import random

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .coevolution import build_state, case_from_json, run
from .config import RunConfig
from .core import CandidateSet, Context, Document, Query
from .critic import build_offline_labels
from .genotype import seed_strategies
from .planner import optimize


def _coerce_case(item, index: int):
    """Accept a (Context, CandidateSet) tuple or a case dict."""
    if isinstance(item, tuple) and len(item) == 2:
        ctx, cands = item
        if isinstance(ctx, Context) and isinstance(cands, CandidateSet):
            return item
    if isinstance(item, dict):
        try:
            return case_from_json(item)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"sample {index}: malformed case dict: {exc}") from exc
    raise ValueError(
        f"sample {index}: expected (Context, CandidateSet) or a case dict, "
        f"got {type(item).__name__}"
    )


def _coerce_pair(item, index: int) -> tuple[Query, Document]:
    """Accept {'query': ..., 'doc': ...} dicts, (query, doc) string tuples,
    or full cases (the target document is used)."""
    if isinstance(item, dict) and "query" in item and "doc" in item:
        q, d = item["query"], item["doc"]
        query = q if isinstance(q, Query) else Query(id=f"x{index}", text=str(q))
        doc = d if isinstance(d, Document) else Document(id=f"x{index}-d", text=str(d))
        return query, doc
    if isinstance(item, tuple) and len(item) == 2:
        q, d = item
        if isinstance(q, Query) and isinstance(d, Document):
            return q, d
        if isinstance(q, str) and isinstance(d, str):
            return Query(id=f"x{index}", text=q), Document(id=f"x{index}-d", text=d)
        if isinstance(q, Context) and isinstance(d, CandidateSet):
            return q.query, q.document
    if isinstance(item, dict):
        ctx, _ = _coerce_case(item, index)
        return ctx.query, ctx.document
    raise ValueError(
        f"sample {index}: expected a query/doc pair, got {type(item).__name__}"
    )


class GeoVisibilityOptimizer(TransformerMixin, BaseEstimator):
    """Evolves rewriting strategies on training cases, then rewrites new docs.

    Parameters mirror the run configuration; see ``RunConfig`` for semantics.
    """

    def __init__(
        self,
        iterations: int = 100,
        k_top: int = 4,
        k_rand: int = 4,
        n_parents: int = 4,
        n_evolver: int = 8,
        n_ops: int = 8,
        alpha_sib: float = 0.8,
        beta: float = 1.0,
        reg_weight: float = 0.2,
        pnd_weight: float = 0.3,
        cell_capacity: int = 3,
        archive_capacity: int = 35,
        feature_dim: int = 4096,
        hidden_dim: int = 64,
        pool_size: int = 25,
        max_steps: int = 3,
        offline_alignment: bool = True,
        seed: int = 0,
    ):
        self.iterations = iterations
        self.k_top = k_top
        self.k_rand = k_rand
        self.n_parents = n_parents
        self.n_evolver = n_evolver
        self.n_ops = n_ops
        self.alpha_sib = alpha_sib
        self.beta = beta
        self.reg_weight = reg_weight
        self.pnd_weight = pnd_weight
        self.cell_capacity = cell_capacity
        self.archive_capacity = archive_capacity
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.pool_size = pool_size
        self.max_steps = max_steps
        self.offline_alignment = offline_alignment
        self.seed = seed

    def _run_config(self) -> RunConfig:
        return RunConfig(
            iterations=self.iterations,
            k_top=self.k_top,
            k_rand=self.k_rand,
            n_parents=self.n_parents,
            n_evolver=self.n_evolver,
            n_ops=self.n_ops,
            alpha_sib=self.alpha_sib,
            beta=self.beta,
            reg_weight=self.reg_weight,
            pnd_weight=self.pnd_weight,
            cell_capacity=self.cell_capacity,
            archive_capacity=self.archive_capacity,
            feature_dim=self.feature_dim,
            hidden_dim=self.hidden_dim,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        """Offline critic alignment plus online co-evolution over cases in X."""
        cases = [_coerce_case(item, i) for i, item in enumerate(X)]
        if not cases:
            raise ValueError("fit requires at least one case")
        config = self._run_config()
        state = build_state(config)
        if self.offline_alignment:
            data = build_offline_labels(
                state.evaluator,
                cases,
                list(seed_strategies()),
                random.Random(config.seed),
            )
            state.critic.train_offline(data)
        result = run(config, cases, state=state)
        self.state_ = result.state
        self.archive_ = result.state.archive
        self.critic_ = result.state.critic
        self.policy_ = result.state.policy
        self.reports_ = result.reports
        self.best_reward_ = result.best_reward
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "archive_"):
            raise NotFittedError("call fit before transform/predict")

    def transform(self, X) -> list[str]:
        """Planner-rewritten document text for each (query, doc) in X."""
        self._check_fitted()
        out = []
        for i, item in enumerate(X):
            query, doc = _coerce_pair(item, i)
            final_doc, _ = optimize(
                query,
                doc,
                self.archive_,
                self.critic_,
                self.state_.evaluator.engine,
                pool_size=self.pool_size,
                max_steps=self.max_steps,
            )
            out.append(final_doc.text)
        return out

    def predict(self, X) -> list[float]:
        """Critic's best predicted gain over the strategy pool for each item."""
        self._check_fitted()
        pool = self.archive_.top_k_by_pnd(self.pool_size)
        out = []
        for i, item in enumerate(X):
            query, doc = _coerce_pair(item, i)
            ctx = Context(query=query, document=doc)
            out.append(max(self.critic_.score(ctx, s) for s in pool))
        return out
