"""Command-line surface.

Subcommands: eval (impressions/sensitivity), train-critic, evolve, optimize,
simulate, ndcg.  Exit codes: 0 success, 1 usage, 2 validation, 3 backend
failure.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from .archive import Archive
from .config import ConfigError, RunConfig, load_config, with_seed
from .coevolution import (
    engine_from_config,
    load_cases,
    run,
    strategy_from_json,
)
from .core import Document, Query, parse_cited_answer
from .critic import (
    CriticConfig,
    CriticModel,
    OfflineDataset,
    build_context_pairs,
    build_offline_labels,
    ndcg_at_k,
)
from .data import synthetic_cases
from .engine import EngineError, StrategyEvaluator
from .genotype import seed_strategies
from .impressions import compute_impressions, sensitivity_profile
from .planner import format_trace_table, optimize as plan_optimize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_BACKEND = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _global_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="run config file (key = value lines)")
    parser.add_argument("--seed", type=int, help="RNG seed override")
    parser.add_argument(
        "--backend", choices=("simulated", "remote"), help="engine backend override"
    )
    parser.add_argument("--out", type=Path, help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="evogeo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="score a cited answer or a score profile")
    _global_flags(p)
    p.add_argument("--answer", type=Path, help="file with cited answer text")
    p.add_argument("--target", type=int, help="1-based candidate index to score")
    p.add_argument("--n", type=int, help="number of candidates")
    p.add_argument("--normalize", action="store_true", help="share-of-total scores")
    p.add_argument(
        "--scores", type=Path, help="JSON array of per-strategy overall scores"
    )

    p = sub.add_parser("train-critic", help="offline critic alignment")
    _global_flags(p)
    p.add_argument("--labels", type=Path, help="prebuilt labels JSONL")
    p.add_argument("--cases", type=Path, help="cases JSONL to label via the backend")
    p.add_argument("--demo-cases", type=int, help="generate N synthetic cases")

    p = sub.add_parser("evolve", help="run online co-evolution")
    _global_flags(p)
    p.add_argument("--cases", type=Path, help="cases JSONL")
    p.add_argument("--demo-cases", type=int, help="generate N synthetic cases")

    p = sub.add_parser("optimize", help="multi-turn rewrite of one document")
    _global_flags(p)
    p.add_argument("--query", type=Path, required=True, help="file with query text")
    p.add_argument("--doc", type=Path, required=True, help="file with document text")
    p.add_argument("--archive", type=Path, required=True, help="archive JSONL")
    p.add_argument(
        "--critic", type=Path, help="critic model directory (default: models/ next to archive)"
    )
    p.add_argument("--pool-size", type=int, default=25)
    p.add_argument("--max-steps", type=int, default=3)

    p = sub.add_parser("simulate", help="emit simulated-engine answers")
    _global_flags(p)
    p.add_argument("--cases", type=Path, help="cases JSONL")
    p.add_argument("--demo-cases", type=int, help="generate N synthetic cases")
    p.add_argument("--index", type=int, help="only this case index")

    p = sub.add_parser("ndcg", help="critic ranking quality report")
    _global_flags(p)
    p.add_argument("--labels", type=Path, required=True, help="labels JSONL")
    p.add_argument("--critic", type=Path, required=True, help="critic model directory")
    p.add_argument("--k", default="1,3,5", help="comma-separated cutoffs")

    return parser


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = with_seed(config, args.seed)
    if args.backend is not None:
        from dataclasses import replace

        config = replace(config, backend=args.backend)
    return config


def _resolve_cases(args, config: RunConfig):
    if args.cases:
        return load_cases(args.cases)
    if getattr(args, "demo_cases", None):
        return synthetic_cases(args.demo_cases, seed=config.seed)
    raise ConfigError("provide --cases FILE or --demo-cases N")


def _cmd_eval(args) -> int:
    if args.scores is not None:
        scores = json.loads(args.scores.read_text())
        best, sensitivity = sensitivity_profile(scores)
        print(f"max_gain {best}")
        print(f"sensitivity {sensitivity}")
        return EXIT_OK
    if args.answer is None or args.target is None or args.n is None:
        raise UsageError("eval requires --answer/--target/--n or --scores")
    answer = parse_cited_answer(args.answer.read_text(), args.n)
    scores = compute_impressions(answer, args.target, normalize=args.normalize)
    print(f"word {scores.word}")
    print(f"pos {scores.pos}")
    print(f"overall {scores.overall}")
    return EXIT_OK


def _labels_from_file(path: Path, critic_config: CriticConfig) -> OfflineDataset:
    from .core import Context

    data = OfflineDataset()
    by_context: dict[str, list] = {}
    contexts: dict[str, Context] = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        query = Query(id=rec["query"]["id"], text=rec["query"]["text"])
        doc = Document(
            id=rec["doc"]["id"],
            text=rec["doc"]["text"],
            rank_index=rec["doc"].get("rank_index", 0),
        )
        ctx = Context(query=query, document=doc)
        contexts[ctx.id] = ctx
        by_context.setdefault(ctx.id, []).append(
            (strategy_from_json(rec["strategy"]), float(rec["gain"]))
        )
    for ctx_id, scored in by_context.items():
        scored.sort(key=lambda t: (-t[1], t[0].id))
        base = len(data.entries)
        ranked = []
        for offset, (s, gain) in enumerate(scored):
            data.entries.append((contexts[ctx_id], s, gain))
            ranked.append((base + offset, gain))
        data.pairs.extend(build_context_pairs(ctx_id, ranked))
    if not data.entries:
        raise ConfigError(f"no labels in {path}")
    return data


def _cmd_train_critic(args) -> int:
    config = _load_run_config(args)
    if args.out is None:
        raise UsageError("train-critic requires --out DIR")
    critic_config = CriticConfig(
        feature_dim=config.feature_dim,
        hidden_dim=config.hidden_dim,
        lr=config.critic_lr,
        epochs=config.critic_epochs,
        reg_weight=config.reg_weight,
        seed=config.seed,
    )
    if args.labels:
        data = _labels_from_file(args.labels, critic_config)
    else:
        cases = _resolve_cases(args, config)
        engine = engine_from_config(config)
        evaluator = StrategyEvaluator(engine)
        data = build_offline_labels(
            evaluator, cases, list(seed_strategies()), random.Random(config.seed)
        )
    model = CriticModel(critic_config)
    report = model.train_offline(data)
    args.out.mkdir(parents=True, exist_ok=True)
    model.save(args.out, "critic")
    report_lines = [json.dumps(e, sort_keys=True) for e in report["epochs"]]
    (args.out / "train_report.jsonl").write_text("\n".join(report_lines) + "\n")
    print(
        f"trained on {len(data.entries)} labels / {len(data.pairs)} pairs "
        f"({data.excluded} excluded)"
    )
    print(f"loss {report['initial_loss']:.6f} -> {report['final_loss']:.6f}")
    print(f"saved critic to {args.out}")
    return EXIT_OK


def _cmd_evolve(args) -> int:
    config = _load_run_config(args)
    if args.out is None:
        raise UsageError("evolve requires --out DIR")
    cases = _resolve_cases(args, config)
    result = run(config, cases, out_dir=args.out)
    best = result.best_reward
    print(f"iterations {result.state.iteration}")
    print(f"archive size {len(result.state.archive)}")
    print(f"best_ge_reward {best if best is not None else 'n/a'}")
    print(f"artifacts in {args.out}")
    return EXIT_OK


def _cmd_optimize(args) -> int:
    config = _load_run_config(args)
    archive = Archive.load(args.archive)
    critic_dir = args.critic if args.critic else args.archive.parent / "models"
    critic = CriticModel.load(critic_dir, "critic")
    engine = engine_from_config(config)
    query = Query(id=args.query.stem, text=args.query.read_text().strip())
    document = Document(id=args.doc.stem, text=args.doc.read_text().strip())
    final_doc, trace = plan_optimize(
        query,
        document,
        archive,
        critic,
        engine,
        pool_size=args.pool_size,
        max_steps=args.max_steps,
    )
    print(format_trace_table(trace))
    print()
    print(final_doc.text)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "trace.json").write_text(trace.to_json_text() + "\n")
        (args.out / "optimized.txt").write_text(final_doc.text + "\n")
    else:
        print()
        print(trace.to_json_text())
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = _load_run_config(args)
    cases = _resolve_cases(args, config)
    if args.index is not None:
        cases = [cases[args.index]]
    engine = engine_from_config(config)
    from .core import render_cited_answer

    for ctx, cands in cases:
        answer = engine.synthesize(ctx.query, cands)
        print(f"# query {ctx.query.id}: {ctx.query.text}")
        print(render_cited_answer(answer))
        for j in range(1, len(cands.docs) + 1):
            scores = compute_impressions(answer, j)
            marker = "*" if j - 1 == cands.target_index else " "
            print(
                f"  [{j}]{marker} word={scores.word:.3f} pos={scores.pos:.4f} "
                f"overall={scores.overall:.3f}"
            )
    return EXIT_OK


def _cmd_ndcg(args) -> int:
    critic = CriticModel.load(args.critic, "critic")
    data = _labels_from_file(args.labels, critic.config)
    cutoffs = [int(k) for k in str(args.k).split(",") if k.strip()]
    by_context: dict[str, list[int]] = {}
    for i, (ctx, _, _) in enumerate(data.entries):
        by_context.setdefault(ctx.id, []).append(i)
    sums = {k: 0.0 for k in cutoffs}
    for idxs in by_context.values():
        gains = [data.entries[i][2] for i in idxs]
        floor = min(gains)
        relevances = [g - floor for g in gains]  # NDCG needs non-negative gains
        scores = [critic.score(data.entries[i][0], data.entries[i][1]) for i in idxs]
        order = sorted(range(len(idxs)), key=lambda i: (-scores[i], i))
        for k in cutoffs:
            sums[k] += ndcg_at_k(order, relevances, k)
    n = len(by_context)
    for k in cutoffs:
        print(f"ndcg@{k} {sums[k] / n:.4f}")
    return EXIT_OK


_COMMANDS = {
    "eval": _cmd_eval,
    "train-critic": _cmd_train_critic,
    "evolve": _cmd_evolve,
    "optimize": _cmd_optimize,
    "simulate": _cmd_simulate,
    "ndcg": _cmd_ndcg,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EngineError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
