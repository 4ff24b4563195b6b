"""Impression metrics: how visible a candidate is inside a cited answer.

Three scores are computed per candidate: attributed word mass (`word`),
position-decayed citation mass (`pos`), and their combination (`overall`).
A sentence citing several candidates splits its contribution evenly.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

from .core import CitedAnswer, ImpressionScores

NEAR_OPTIMAL_FRACTION = 0.55


def position_weight(i: int, length: int) -> float:
    """Attention decay for the sentence at index ``i`` of an answer of ``length``.

    exp(-i / (length - 1)) for multi-sentence answers, 1.0 for a single
    sentence.
    """
    if length < 1:
        raise ValueError("answer length must be >= 1")
    if not 0 <= i < length:
        raise ValueError(f"sentence index {i} out of range for length {length}")
    if length == 1:
        return 1.0
    return math.exp(-i / (length - 1))


def compute_impressions(
    answer: CitedAnswer, j: int, normalize: bool = False
) -> ImpressionScores:
    """Impression scores of candidate ``j`` (1-based) in ``answer``.

    With ``normalize=True`` each score is returned as a percentage of the
    total attributed to all candidates (0 when nothing is cited).  Raw scores
    are the default; the share normalization is a convenience and not part of
    the metric definition.
    """
    if j < 1:
        raise ValueError("candidate index j must be >= 1")
    length = len(answer.sentences)
    word = pos = overall = 0.0
    total_word = total_pos = total_overall = 0.0
    for i, sentence in enumerate(answer.sentences):
        if not sentence.citations:
            continue
        share = 1.0 / len(sentence.citations)
        weight = position_weight(i, length)
        total_word += sentence.word_count
        total_pos += weight
        total_overall += sentence.word_count * weight
        if j in sentence.citations:
            word += sentence.word_count * share
            pos += weight * share
            overall += sentence.word_count * weight * share
    if not normalize:
        return ImpressionScores(word=word, pos=pos, overall=overall)
    return ImpressionScores(
        word=100.0 * word / total_word if total_word > 0 else 0.0,
        pos=100.0 * pos / total_pos if total_pos > 0 else 0.0,
        overall=100.0 * overall / total_overall if total_overall > 0 else 0.0,
    )


def sensitivity_profile(overall_scores: Sequence[float]) -> tuple[float, float]:
    """Best score and strategy sensitivity of a per-strategy score profile.

    Sensitivity is the fraction of strategies falling short of 55% of the
    best score; it is 0 when every strategy is near-optimal and, by
    convention, 0 when the best score itself is 0.
    """
    if len(overall_scores) == 0:
        raise ValueError("need at least one score")
    if any(s < 0 for s in overall_scores):
        raise ValueError("scores must be non-negative")
    best = max(overall_scores)
    if best == 0:
        return 0.0, 0.0
    threshold = NEAR_OPTIMAL_FRACTION * best
    near_optimal = sum(1 for s in overall_scores if s >= threshold)
    return best, 1.0 - near_optimal / len(overall_scores)
