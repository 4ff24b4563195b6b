"""Structured rewriting strategies: genotype, renderings, descriptor, operators.

A genotype has five gene blocks (instruction, constraints, reasoning, format,
tone) plus a length policy.  All categorical fields draw from closed
vocabularies; only the instruction text is free-form.  Two renderings exist:
a compact categorical summary used for similarity/critic features, and the
full rewriting prompt sent to an engine.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace

INTENTS = (
    "generic",
    "keyword",
    "unique_words",
    "simplify",
    "authority",
    "technical",
    "fluency",
    "cite",
    "quote",
    "statistic",
)
TONES = ("neutral", "assertive", "simple", "technical", "formal")
TECHNICALITY = ("low", "mid", "high")
SCHEMAS = ("prose", "bullets", "sections", "qa")
STRENGTHS = ("soft", "normal", "strict")
LENGTH_POLICIES = ("keep", "shorten", "expand")

MAX_REASONING_STEPS = 8
MAX_CONSTRAINT_CLAUSES = 6

DESCRIPTOR_CARDINALITIES = (
    len(INTENTS),      # strategy_type
    len(SCHEMAS),      # output_schema
    2,                 # has_self_check
    2,                 # has_reasoning
    2,                 # has_conflict_res
    2,                 # use_code_block
    2,                 # has_prelude
    2,                 # has_post_check
    len(TONES),        # tone_bucket
    len(STRENGTHS),    # constraint_strength
    len(LENGTH_POLICIES),  # length_policy
    4,                 # reasoning_steps_bucket
)

# Clause library used by constraint mutations.  Seeds carry their own clauses
# in addition to these.
CONSTRAINT_CLAUSES = (
    "Support key claims with verifiable statistics.",
    "Attribute claims to named, credible sources.",
    "Include at least one short supporting quotation.",
    "Do not introduce information that is not supported by the source.",
    "Preserve the original meaning of every claim.",
    "Keep the original paragraph structure intact.",
    "Avoid promotional or exaggerated language.",
    "State limitations explicitly where relevant.",
)

REASONING_STEPS = (
    "Identify the core claims of the source.",
    "Check each claim against the query intent.",
    "Resolve conflicts between overlapping statements.",
    "Run a final self-check for unsupported statements.",
    "Verify the rewritten text against all constraints.",
    "Plan the rewrite before editing.",
)
# Steps that flip a reasoning flag when added.
_STEP_FLAGS = {
    REASONING_STEPS[2]: "conflict_resolution",
    REASONING_STEPS[3]: "self_check",
    REASONING_STEPS[4]: "post_check",
}

INTENT_INSTRUCTIONS = {
    "generic": "Improve the source content so it is more likely to be included in synthesized answers.",
    "keyword": "Improve the source by inserting up to 10 NEW, relevant SEO keywords that are NOT already present in the text.",
    "unique_words": "Revise the source by using more unique and precise vocabulary.",
    "simplify": "Rewrite the source in simple, easy-to-understand language.",
    "authority": "Make the source sound confident, authoritative, and expert.",
    "technical": "Rewrite the source in a more technical style using domain-appropriate terminology.",
    "fluency": "Rewrite the source to improve fluency and coherence.",
    "cite": "Strengthen credibility by adding a small number of natural-language citations to credible sources (e.g., industry reports, standards, official docs).",
    "quote": "Increase perceived authority by adding a few short, relevant quotations from reputable entities (e.g., well-known organizations or experts).",
    "statistic": "Add a few concise, relevant statistics or numerical facts to improve concreteness.",
}


@dataclass(frozen=True)
class Genotype:
    instruction: str
    intent: str = "generic"
    constraints: tuple[str, ...] = ()
    constraint_strength: str = "soft"
    reasoning_steps: tuple[str, ...] = ()
    self_check: bool = False
    conflict_resolution: bool = False
    post_check: bool = False
    output_schema: str = "prose"
    use_code_block: bool = False
    has_prelude: bool = False
    tone: str = "neutral"
    technicality: str = "low"
    length_policy: str = "keep"

    def __post_init__(self) -> None:
        if not self.instruction.strip():
            raise ValueError("instruction must be non-empty")
        for value, vocab, name in (
            (self.intent, INTENTS, "intent"),
            (self.constraint_strength, STRENGTHS, "constraint_strength"),
            (self.output_schema, SCHEMAS, "output_schema"),
            (self.tone, TONES, "tone"),
            (self.technicality, TECHNICALITY, "technicality"),
            (self.length_policy, LENGTH_POLICIES, "length_policy"),
        ):
            if value not in vocab:
                raise ValueError(f"{name} {value!r} not in vocabulary {vocab}")
        if len(self.reasoning_steps) > MAX_REASONING_STEPS:
            raise ValueError(f"at most {MAX_REASONING_STEPS} reasoning steps")


Descriptor = tuple[int, int, int, int, int, int, int, int, int, int, int, int]


def descriptor(g: Genotype) -> Descriptor:
    """Map a genotype to its 12-dimensional behavioral cell key."""
    steps = len(g.reasoning_steps)
    if steps == 0:
        steps_bucket = 0
    elif steps <= 2:
        steps_bucket = 1
    elif steps <= 5:
        steps_bucket = 2
    else:
        steps_bucket = 3
    return (
        INTENTS.index(g.intent),
        SCHEMAS.index(g.output_schema),
        int(g.self_check),
        int(bool(g.reasoning_steps)),
        int(g.conflict_resolution),
        int(g.use_code_block),
        int(g.has_prelude),
        int(g.post_check),
        TONES.index(g.tone),
        STRENGTHS.index(g.constraint_strength),
        LENGTH_POLICIES.index(g.length_policy),
        steps_bucket,
    )


_STEP_BUCKET_NAMES = ("None", "Brief", "Moderate", "Deep")


def render_summary(g: Genotype) -> str:
    """Compact '|'-joined Name:Value summary of non-default categorical fields."""
    parts: list[str] = []
    if g.intent != "generic":
        parts.append(f"Intent:{_title(g.intent)}")
    if g.tone != "neutral":
        parts.append(f"Tone:{_title(g.tone)}")
    if g.technicality != "low":
        parts.append(f"Tech:{_title(g.technicality)}")
    if g.output_schema != "prose":
        parts.append(f"Format:{_title(g.output_schema)}")
    if g.use_code_block:
        parts.append("Code:Yes")
    if g.has_prelude:
        parts.append("Prelude:Yes")
    if g.constraint_strength != "soft":
        parts.append(f"Constraint:{_title(g.constraint_strength)}")
    if g.reasoning_steps:
        parts.append(f"Reasoning:{_STEP_BUCKET_NAMES[descriptor(g)[11]]}")
    if g.self_check:
        parts.append("SelfCheck:Yes")
    if g.conflict_resolution:
        parts.append("ConflictRes:Yes")
    if g.post_check:
        parts.append("PostCheck:Yes")
    if g.length_policy != "keep":
        parts.append(f"Length:{_title(g.length_policy)}")
    return "|".join(parts) if parts else "Default"


def _title(label: str) -> str:
    return "".join(w.capitalize() for w in label.split("_"))


_SCHEMA_DIRECTIVES = {
    "prose": "Write the output as continuous prose.",
    "bullets": "Present the output as a bulleted list.",
    "sections": "Organize the output into titled sections.",
    "qa": "Structure the output as question-and-answer pairs.",
}
_TONE_DIRECTIVES = {
    "neutral": "Keep a neutral, balanced register.",
    "assertive": "Use a confident, assertive register.",
    "simple": "Use plain, simple language throughout.",
    "technical": "Use precise technical language.",
    "formal": "Keep a formal register throughout.",
}
_TECH_DIRECTIVES = {
    "low": "Keep terminology accessible to a general audience.",
    "mid": "Use moderately specialized terminology where it adds precision.",
    "high": "Use specialist terminology freely.",
}
_STRENGTH_PHRASES = {
    "soft": "Treat the following as guidance:",
    "normal": "Adhere to the following constraints:",
    "strict": "Strictly enforce every one of the following constraints:",
}
_LENGTH_DIRECTIVES = {
    "shorten": "Make the result noticeably shorter than the source.",
    "expand": "Expand the result beyond the source where it adds substance.",
}


def render_prompt(g: Genotype) -> str:
    """Full rewriting prompt for an engine: fixed section templates around the genes."""
    lines = [
        "You are an expert content editor optimizing source material for "
        "visibility in synthesized answers.",
        f"Task: {g.instruction}",
    ]
    if g.intent != "generic":
        lines.append(f"Optimization focus: {_title(g.intent)}.")
    if g.constraints:
        lines.append(_STRENGTH_PHRASES[g.constraint_strength])
        lines.extend(f"- {clause}" for clause in g.constraints)
    elif g.constraint_strength != "soft":
        lines.append(_STRENGTH_PHRASES[g.constraint_strength])
    if g.reasoning_steps:
        lines.append("Reasoning steps to follow:")
        lines.extend(
            f"{i}. {step}" for i, step in enumerate(g.reasoning_steps, start=1)
        )
    if g.self_check:
        lines.append("Before answering, self-check the rewrite for errors.")
    if g.conflict_resolution:
        lines.append("Resolve any conflicting statements before finalizing.")
    if g.post_check:
        lines.append("After rewriting, verify the result against the task.")
    lines.append(_SCHEMA_DIRECTIVES[g.output_schema])
    if g.use_code_block:
        lines.append("Wrap any structured data in a code block.")
    if g.has_prelude:
        lines.append("Open with a one-sentence prelude framing the content.")
    lines.append(_TONE_DIRECTIVES[g.tone])
    lines.append(_TECH_DIRECTIVES[g.technicality])
    if g.length_policy != "keep":
        lines.append(_LENGTH_DIRECTIVES[g.length_policy])
    lines.append("Return only the rewritten content.")
    return "\n".join(lines)


@dataclass(frozen=True)
class Lineage:
    parent_ids: tuple[str, ...] = ()
    generation: int = 0
    operators: tuple[str, ...] = ()


@dataclass(frozen=True)
class Strategy:
    """A genotype with identity, lineage, cached summary, and last known reward."""

    id: str
    genotype: Genotype
    summary: str = field(default="")
    lineage: Lineage = field(default_factory=Lineage)
    reward: float | None = None
    reward_source: str | None = None  # "ge" or "critic"

    def __post_init__(self) -> None:
        if not self.summary:
            object.__setattr__(self, "summary", render_summary(self.genotype))
        if self.reward_source not in (None, "ge", "critic"):
            raise ValueError("reward source must be 'ge' or 'critic'")

    def with_reward(self, reward: float, source: str) -> "Strategy":
        return replace(self, reward=reward, reward_source=source)


@dataclass(frozen=True)
class OperatorId:
    name: str
    arity: int

    def __post_init__(self) -> None:
        if self.arity == 2 and not self.name.startswith("cx_"):
            raise ValueError("crossover operators must be prefixed cx_")
        if self.arity == 1 and not self.name.startswith("mut_"):
            raise ValueError("mutation operators must be prefixed mut_")


MUTATION_OPERATORS = tuple(
    OperatorId(name, 1)
    for name in (
        "mut_C_strengthen",
        "mut_C_relax",
        "mut_T_toggle_tone",
        "mut_T_technicality",
        "mut_F_schema_swap",
        "mut_F_toggle_code_block",
        "mut_F_toggle_prelude",
        "mut_R_add_step",
        "mut_R_remove_step",
        "mut_R_toggle_self_check",
        "mut_I_refocus",
        "mut_L_length_policy",
    )
)
CROSSOVER_OPERATORS = (
    OperatorId("cx_swap_gene", 2),
    OperatorId("cx_conflict_synthesis", 2),
)
OPERATORS = MUTATION_OPERATORS + CROSSOVER_OPERATORS
OPERATOR_NAMES = tuple(op.name for op in OPERATORS)
CATALOG_SIZE = len(OPERATORS)


def _cycle(vocab: tuple[str, ...], value: str) -> str:
    return vocab[(vocab.index(value) + 1) % len(vocab)]


def _bump(vocab: tuple[str, ...], value: str, step: int) -> str:
    idx = min(max(vocab.index(value) + step, 0), len(vocab) - 1)
    return vocab[idx]


def apply_operator(
    op: OperatorId | str,
    a: Genotype,
    b: Genotype | None = None,
    rng: random.Random | None = None,
) -> Genotype:
    """Apply one catalog operator; crossover (cx_*) requires a second parent."""
    name = op.name if isinstance(op, OperatorId) else op
    if name not in OPERATOR_NAMES:
        raise ValueError(f"unknown operator {name!r}")
    if name.startswith("cx_") and b is None:
        raise ValueError(f"{name} requires a second parent")
    rng = rng or random.Random(0)

    if name == "mut_C_strengthen":
        absent = [c for c in CONSTRAINT_CLAUSES if c not in a.constraints]
        clauses = a.constraints
        if absent and len(clauses) < MAX_CONSTRAINT_CLAUSES:
            clauses = clauses + (rng.choice(absent),)
        return replace(
            a,
            constraints=clauses,
            constraint_strength=_bump(STRENGTHS, a.constraint_strength, +1),
        )
    if name == "mut_C_relax":
        clauses = a.constraints
        if clauses:
            drop = rng.randrange(len(clauses))
            clauses = clauses[:drop] + clauses[drop + 1 :]
        return replace(
            a,
            constraints=clauses,
            constraint_strength=_bump(STRENGTHS, a.constraint_strength, -1),
        )
    if name == "mut_T_toggle_tone":
        return replace(a, tone=_cycle(TONES, a.tone))
    if name == "mut_T_technicality":
        return replace(a, technicality=_cycle(TECHNICALITY, a.technicality))
    if name == "mut_F_schema_swap":
        return replace(a, output_schema=_cycle(SCHEMAS, a.output_schema))
    if name == "mut_F_toggle_code_block":
        return replace(a, use_code_block=not a.use_code_block)
    if name == "mut_F_toggle_prelude":
        return replace(a, has_prelude=not a.has_prelude)
    if name == "mut_R_add_step":
        absent = [s for s in REASONING_STEPS if s not in a.reasoning_steps]
        if not absent or len(a.reasoning_steps) >= MAX_REASONING_STEPS:
            return a
        step = rng.choice(absent)
        updated = replace(a, reasoning_steps=a.reasoning_steps + (step,))
        flag = _STEP_FLAGS.get(step)
        if flag:
            updated = replace(updated, **{flag: True})
        return updated
    if name == "mut_R_remove_step":
        if not a.reasoning_steps:
            return a
        drop = rng.randrange(len(a.reasoning_steps))
        steps = a.reasoning_steps[:drop] + a.reasoning_steps[drop + 1 :]
        return replace(a, reasoning_steps=steps)
    if name == "mut_R_toggle_self_check":
        return replace(a, self_check=not a.self_check)
    if name == "mut_I_refocus":
        choices = [i for i in INTENTS if i != a.intent]
        intent = rng.choice(choices)
        return replace(a, intent=intent, instruction=INTENT_INSTRUCTIONS[intent])
    if name == "mut_L_length_policy":
        return replace(a, length_policy=_cycle(LENGTH_POLICIES, a.length_policy))
    if name == "cx_swap_gene":
        assert b is not None
        take_a = {block: rng.random() < 0.5 for block in "ICRFT"}
        merged = a if take_a["I"] else replace(
            a, instruction=b.instruction, intent=b.intent
        )
        src_c = a if take_a["C"] else b
        src_r = a if take_a["R"] else b
        src_f = a if take_a["F"] else b
        src_t = a if take_a["T"] else b
        return replace(
            merged,
            constraints=src_c.constraints,
            constraint_strength=src_c.constraint_strength,
            length_policy=src_c.length_policy,
            reasoning_steps=src_r.reasoning_steps,
            self_check=src_r.self_check,
            conflict_resolution=src_r.conflict_resolution,
            post_check=src_r.post_check,
            output_schema=src_f.output_schema,
            use_code_block=src_f.use_code_block,
            has_prelude=src_f.has_prelude,
            tone=src_t.tone,
            technicality=src_t.technicality,
        )
    if name == "cx_conflict_synthesis":
        assert b is not None
        clauses = a.constraints + tuple(
            c for c in b.constraints if c not in a.constraints
        )
        steps = a.reasoning_steps + tuple(
            s for s in b.reasoning_steps if s not in a.reasoning_steps
        )
        return replace(
            a,
            constraints=clauses[:MAX_CONSTRAINT_CLAUSES],
            reasoning_steps=steps[:MAX_REASONING_STEPS],
        )
    raise AssertionError(f"unhandled operator {name}")


def strategy_id(genotype: Genotype, parent_ids: tuple[str, ...], op: str) -> str:
    """Deterministic child id from provenance and genotype content."""
    digest = hashlib.sha1(
        json.dumps(
            [genotype_to_json(genotype), list(parent_ids), op], sort_keys=True
        ).encode()
    ).hexdigest()
    return f"g{digest[:10]}"


def make_child(
    genotype: Genotype, parents: tuple[Strategy, ...], op: str
) -> Strategy:
    parent_ids = tuple(p.id for p in parents)
    return Strategy(
        id=strategy_id(genotype, parent_ids, op),
        genotype=genotype,
        lineage=Lineage(
            parent_ids=parent_ids,
            generation=max(p.lineage.generation for p in parents) + 1,
            operators=parents[0].lineage.operators + (op,),
        ),
    )


# Seed strategies: one per classic rewriting heuristic.  Constraint clauses
# mirror the heuristic's usual guardrails.
_SEED_SPECS: tuple[tuple[str, str, dict], ...] = (
    (
        "seed-keyword-stuffing",
        "keyword",
        dict(
            constraints=(
                "Do not change, add, or remove any core information.",
                "Keep the original structure (paragraphing, bullet points, line breaks).",
                "Insert keywords naturally inline (no keyword list at the end).",
            ),
            constraint_strength="normal",
        ),
    ),
    (
        "seed-unique-words",
        "unique_words",
        dict(
            constraints=(
                "Preserve the original meaning and all core information.",
                "Do not add new claims or remove any content.",
                "Keep the length and structure roughly the same.",
            ),
            constraint_strength="normal",
        ),
    ),
    (
        "seed-easy-to-understand",
        "simplify",
        dict(
            constraints=(
                "Do not omit, add, or alter any core information.",
                "Keep the original structure and roughly the same length.",
                "Only rephrase sentences for clarity and readability.",
            ),
            constraint_strength="normal",
            tone="simple",
        ),
    ),
    (
        "seed-authoritative",
        "authority",
        dict(
            constraints=(
                "Do not add new facts or remove any information.",
                "Keep the original structure (formatting, bullets, spacing).",
                "Strengthen tone via wording choices, not by exaggerating or making unverifiable claims.",
            ),
            constraint_strength="normal",
            tone="assertive",
        ),
    ),
    (
        "seed-technical-words",
        "technical",
        dict(
            constraints=(
                "Preserve all core information; do not introduce new claims.",
                "Keep the structure and length roughly unchanged.",
                "Rephrase sentences to sound more technical and precise.",
            ),
            constraint_strength="normal",
            tone="technical",
            technicality="high",
        ),
    ),
    (
        "seed-fluency",
        "fluency",
        dict(
            constraints=(
                "Do not alter the core content.",
                "Improve sentence transitions and readability.",
                "Keep the structure and length roughly the same.",
            ),
            constraint_strength="normal",
        ),
    ),
    (
        "seed-cite-sources",
        "cite",
        dict(
            constraints=(
                "Citations must be plausible and verifiable; do not fabricate sources.",
                "Do not change the core information or add new claims.",
                "Keep structure and length roughly the same (about 5-6 citations total).",
            ),
            constraint_strength="normal",
        ),
    ),
    (
        "seed-quotation-addition",
        "quote",
        dict(
            constraints=(
                "Quotes must be accurate and attributable; do not invent quotes.",
                "Do not change core content; keep structure and length similar.",
                "Integrate quotes inline without adding long new paragraphs.",
            ),
            constraint_strength="normal",
        ),
    ),
    (
        "seed-statistics-addition",
        "statistic",
        dict(
            constraints=(
                "Statistics must be verifiable; do not invent numbers.",
                "Do not modify core content beyond inserting stats inline.",
                "Keep the original structure and stop at the end of the original source.",
            ),
            constraint_strength="normal",
        ),
    ),
)


def seed_strategies() -> tuple[Strategy, ...]:
    """The nine classic rewriting heuristics encoded as genotypes."""
    seeds = []
    for sid, intent, kwargs in _SEED_SPECS:
        genotype = Genotype(
            instruction=INTENT_INSTRUCTIONS[intent], intent=intent, **kwargs
        )
        seeds.append(Strategy(id=sid, genotype=genotype))
    return tuple(seeds)


def genotype_to_json(g: Genotype) -> dict:
    """Serialize as the five named gene blocks plus length policy."""
    return {
        "instruction": {"text": g.instruction, "intent": g.intent},
        "constraints": {
            "clauses": list(g.constraints),
            "strength": g.constraint_strength,
        },
        "reasoning": {
            "steps": list(g.reasoning_steps),
            "self_check": g.self_check,
            "conflict_resolution": g.conflict_resolution,
            "post_check": g.post_check,
        },
        "format": {
            "output_schema": g.output_schema,
            "use_code_block": g.use_code_block,
            "has_prelude": g.has_prelude,
        },
        "tone": {"label": g.tone, "technicality": g.technicality},
        "length_policy": g.length_policy,
    }


def genotype_from_json(data: dict) -> Genotype:
    try:
        return Genotype(
            instruction=str(data["instruction"]["text"]),
            intent=str(data["instruction"]["intent"]),
            constraints=tuple(str(c) for c in data["constraints"]["clauses"]),
            constraint_strength=str(data["constraints"]["strength"]),
            reasoning_steps=tuple(str(s) for s in data["reasoning"]["steps"]),
            self_check=bool(data["reasoning"]["self_check"]),
            conflict_resolution=bool(data["reasoning"]["conflict_resolution"]),
            post_check=bool(data["reasoning"]["post_check"]),
            output_schema=str(data["format"]["output_schema"]),
            use_code_block=bool(data["format"]["use_code_block"]),
            has_prelude=bool(data["format"]["has_prelude"]),
            tone=str(data["tone"]["label"]),
            technicality=str(data["tone"]["technicality"]),
            length_policy=str(data["length_policy"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed genotype JSON: {exc}") from exc
