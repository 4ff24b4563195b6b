from __future__ import annotations

import json
import math
import random

import numpy as np
import pytest

from evogeo.core import Context, Document, Query
from evogeo.evolver import (
    AWR_WEIGHT_CLIP,
    Candidate,
    EvolverDivergence,
    EvolverPolicy,
    Experience,
    RemoteProposal,
    SiblingGroup,
    build_experiences,
    propose_candidates,
    remote_propose,
    sibling_advantage,
)
from evogeo.genotype import (
    OPERATOR_NAMES,
    Strategy,
    genotype_to_json,
    seed_strategies,
)


def ctx() -> Context:
    return Context(
        query=Query(id="q", text="how to choose a bicycle"),
        document=Document(id="d", text="bicycles come in many sizes and styles"),
    )


def group(parent_reward, children_rewards, pnds=None) -> SiblingGroup:
    seeds = seed_strategies()
    pnds = pnds or [0.0] * len(children_rewards)
    children = tuple(
        (seeds[i % len(seeds)], r, p)
        for i, (r, p) in enumerate(zip(children_rewards, pnds))
    )
    return SiblingGroup(parent_id="p", parent_reward=parent_reward, children=children)


class TestSiblingAdvantage:
    def test_worked_example(self):
        g = group(0.5, [0.7, 0.6, 0.4], pnds=[0.9, 0.9, 0.3])
        adv = sibling_advantage(g, alpha_sib=0.8)
        assert adv[0] == pytest.approx(0.14666666666, abs=1e-9)
        assert adv[1] == pytest.approx(0.04666666666, abs=1e-9)
        assert adv[2] == pytest.approx(0.14666666666, abs=1e-9)

    def test_single_child_zero_delta(self):
        g = group(0.5, [0.5], pnds=[0.7])
        assert sibling_advantage(g, alpha_sib=0.8) == [0.0]

    def test_alpha_zero_nonnegative_deltas(self):
        g = group(0.1, [0.4, 0.2, 0.15])
        adv = sibling_advantage(g, alpha_sib=0.0)
        assert adv == pytest.approx([0.3, 0.1, 0.05])

    def test_identity_sum(self):
        rng = random.Random(3)
        for _ in range(200):
            n = rng.randint(1, 7)
            rewards = [rng.uniform(-2, 2) for _ in range(n)]
            pnds = [rng.uniform(0, 1) for _ in range(n)]
            parent = rng.uniform(-1, 1)
            alpha = rng.random()
            g = group(parent, rewards, pnds)
            adv = sibling_advantage(g, alpha_sib=alpha)
            deltas = [r - parent for r in rewards]
            bonuses = [p if d < 0 else 0.0 for d, p in zip(deltas, pnds)]
            lhs = sum(a - b for a, b in zip(adv, bonuses))
            rhs = (1 - alpha) * sum(deltas)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            sibling_advantage(group(0.0, [1.0]), alpha_sib=1.5)

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            SiblingGroup(parent_id="p", parent_reward=0.0, children=())


class TestPolicy:
    def test_zero_weights_uniform_over_catalog(self):
        policy = EvolverPolicy(feature_dim=64)
        feats = policy.encode(ctx(), seed_strategies()[0])
        probs = policy.probabilities(feats)
        assert probs == pytest.approx(np.full(len(OPERATOR_NAMES), 1 / len(OPERATOR_NAMES)))

    def test_crossover_masked(self):
        policy = EvolverPolicy(feature_dim=64)
        feats = policy.encode(ctx(), seed_strategies()[0])
        probs = policy.probabilities(feats, crossover_allowed=False)
        for name, p in zip(OPERATOR_NAMES, probs):
            if name.startswith("cx_"):
                assert p == 0.0
        assert probs.sum() == pytest.approx(1.0)

    def test_uniform_sampling_frequencies(self):
        policy = EvolverPolicy(feature_dim=64)
        feats = policy.encode(ctx(), seed_strategies()[0])
        rng = random.Random(5)
        counts = {name: 0 for name in OPERATOR_NAMES}
        draws = 10_000
        for _ in range(draws):
            counts[policy.sample_operator(feats, rng)] += 1
        p = 1 / len(OPERATOR_NAMES)
        sigma = math.sqrt(draws * p * (1 - p))
        for name, count in counts.items():
            assert abs(count - draws * p) < 3.5 * sigma, name

    def test_awr_weights_positive_monotone_clipped(self):
        advantages = [-2.0, 0.0, 1.0, 2.0, 10.0]
        weights = [min(math.exp(a / 1.0), AWR_WEIGHT_CLIP) for a in advantages]
        assert all(w > 0 for w in weights)
        assert weights == sorted(weights)
        assert weights[-1] == AWR_WEIGHT_CLIP
        assert weights[2] == pytest.approx(math.e)
        assert weights[1] == 1.0

    def test_awr_beta_validation(self):
        policy = EvolverPolicy(feature_dim=64)
        with pytest.raises(ValueError):
            policy.awr_update([], beta=0.0)

    def test_update_keeps_distribution_valid(self):
        policy = EvolverPolicy(feature_dim=64)
        rng = random.Random(9)
        seeds = seed_strategies()
        for _ in range(30):
            feats = policy.encode(ctx(), seeds[rng.randrange(len(seeds))])
            exp = [
                Experience(
                    features=feats,
                    operator_index=rng.randrange(len(OPERATOR_NAMES)),
                    advantage=rng.uniform(-2, 2),
                    crossover_allowed=bool(rng.getrandbits(1)),
                )
                for _ in range(4)
            ]
            policy.awr_update(exp, beta=1.0, lr=0.3)
            probs = policy.probabilities(feats)
            assert probs.sum() == pytest.approx(1.0)
            assert np.all(probs >= 0)

    def test_dominant_operator_probability_increases(self):
        policy = EvolverPolicy(feature_dim=64)
        seeds = seed_strategies()
        target = OPERATOR_NAMES.index("mut_C_strengthen")
        other = OPERATOR_NAMES.index("mut_T_toggle_tone")
        contexts = [
            Context(
                query=Query(id=f"q{i}", text=f"query about topic {i}"),
                document=Document(id=f"d{i}", text=f"document body {i} with words"),
            )
            for i in range(3)
        ]
        batch = []
        for i, c in enumerate(contexts):
            feats = policy.encode(c, seeds[i])
            batch.append(Experience(feats, target, 1.5, True))
            batch.append(Experience(feats, other, 0.1, True))
        before = [
            policy.probabilities(e.features)[target] for e in batch[::2]
        ]
        policy.awr_update(batch, beta=1.0, lr=0.2, steps=1)
        after = [policy.probabilities(e.features)[target] for e in batch[::2]]
        assert all(a > b for a, b in zip(after, before))

    def test_nan_aborts(self):
        policy = EvolverPolicy(feature_dim=64)
        feats = policy.encode(ctx(), seed_strategies()[0])
        bad = Experience(feats, 0, float("nan"), True)
        with pytest.raises(EvolverDivergence):
            policy.awr_update([bad], beta=1.0)

    def test_save_load(self, tmp_path):
        policy = EvolverPolicy(feature_dim=64)
        policy.weights[:] = np.random.default_rng(0).normal(size=policy.weights.shape)
        policy.save(tmp_path)
        loaded = EvolverPolicy.load(tmp_path)
        assert np.array_equal(loaded.weights, policy.weights)
        assert loaded.feature_dim == 64


class TestProposeCandidates:
    def test_pure_symbolic_batch(self, seeds):
        policy = EvolverPolicy(feature_dim=64)
        out = propose_candidates(
            policy, ctx(), list(seeds[:2]), (0, 5), random.Random(0)
        )
        assert 0 < len(out) <= 5

    def test_single_parent_masks_crossover(self, seeds):
        policy = EvolverPolicy(feature_dim=64)
        rng = random.Random(1)
        out = propose_candidates(policy, ctx(), [seeds[0]], (10, 10), rng)
        assert all(not c.operator.startswith("cx_") for c in out)

    def test_candidates_carry_lineage(self, seeds):
        policy = EvolverPolicy(feature_dim=64)
        out = propose_candidates(policy, ctx(), list(seeds[:3]), (4, 4), random.Random(2))
        for cand in out:
            assert cand.parent.id in cand.strategy.lineage.parent_ids
            assert cand.strategy.lineage.operators[-1] == cand.operator
            assert cand.strategy.lineage.generation == 1

    def test_deduplicated_by_summary(self, seeds):
        policy = EvolverPolicy(feature_dim=64)
        out = propose_candidates(policy, ctx(), list(seeds), (8, 8), random.Random(3))
        summaries = [c.strategy.summary for c in out]
        assert len(summaries) == len(set(summaries))

    def test_requires_parents(self):
        policy = EvolverPolicy(feature_dim=64)
        with pytest.raises(ValueError):
            propose_candidates(policy, ctx(), [], (1, 1), random.Random(0))


class TestBuildExperiences:
    def test_experiences_match_advantages(self, seeds):
        policy = EvolverPolicy(feature_dim=64)
        parent = seeds[0].with_reward(0.5, "ge")
        cands = propose_candidates(policy, ctx(), [parent], (3, 0), random.Random(4))
        children = tuple((c.strategy, 0.7 + 0.1 * i, 0.2) for i, c in enumerate(cands))
        g = SiblingGroup(parent_id=parent.id, parent_reward=0.5, children=children)
        exps = build_experiences(cands, [g], alpha_sib=0.8)
        assert len(exps) == len(cands)
        expected = sibling_advantage(g, alpha_sib=0.8)
        assert [e.advantage for e in exps] == pytest.approx(expected)
        for e, c in zip(exps, cands):
            assert OPERATOR_NAMES[e.operator_index] == c.operator


class FakeChat:
    def __init__(self, reply: str):
        self.reply = reply
        self.calls: list[tuple[str, str]] = []

    def chat(self, system: str, user: str) -> str:
        self.calls.append((system, user))
        return self.reply


class TestRemotePropose:
    def _line(self, op: str, genotype) -> str:
        return json.dumps(
            {"operator_id": op, "child_genotype": genotype_to_json(genotype)}
        )

    def test_well_formed_three_lines(self, seeds):
        g = seeds[0].genotype
        reply = "\n".join(
            self._line(op, g)
            for op in ("mut_T_toggle_tone", "mut_C_strengthen", "mut_L_length_policy")
        )
        engine = FakeChat(reply)
        proposal = remote_propose(engine, ctx(), seeds[0], seeds[1], 3)
        assert len(proposal.actions) == 3
        assert proposal.invalid_lines == 0
        system, user = engine.calls[0]
        assert "Do NOT choose any" in system
        assert "Generate 3 candidates" in user

    def test_unknown_operator_dropped(self, seeds):
        g = seeds[0].genotype
        reply = "\n".join(
            [self._line("mut_nonsense", g), self._line("mut_T_toggle_tone", g)]
        )
        proposal = remote_propose(FakeChat(reply), ctx(), seeds[0], None, 2)
        assert len(proposal.actions) == 1
        assert proposal.invalid_lines == 1

    def test_crossover_without_parent_b_rejected(self, seeds):
        g = seeds[0].genotype
        reply = self._line("cx_swap_gene", g)
        proposal = remote_propose(FakeChat(reply), ctx(), seeds[0], None, 1)
        assert proposal.actions == ()
        assert proposal.rejected_crossovers == 1

    def test_invalid_json_dropped(self, seeds):
        reply = "not json at all\n" + self._line("mut_T_toggle_tone", seeds[0].genotype)
        proposal = remote_propose(FakeChat(reply), ctx(), seeds[0], None, 2)
        assert len(proposal.actions) == 1
        assert proposal.invalid_lines == 1

    def test_zero_valid_actions_is_explicit_empty(self, seeds):
        proposal = remote_propose(FakeChat("garbage"), ctx(), seeds[0], None, 1)
        assert isinstance(proposal, RemoteProposal)
        assert proposal.actions == ()
