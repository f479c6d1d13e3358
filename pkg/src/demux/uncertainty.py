"""Per-example uncertainty scores for all three task kinds.

Every scorer returns a value under one polarity convention: higher means
more uncertain. Raw quantities where lower means more uncertain (top-two
margin, mean log-probability, summed span log-probability) are negated on
output, so selection logic can always take the top-b scores.
"""

from __future__ import annotations

import enum

import numpy as np

from ._parallel import map_indexed
from .core import Dataset, SeqProbs, SpanLogProbs, TaskKind, TokenProbs
from .errors import EmptyInputError, InvariantViolation, ScorerTaskMismatchError


class Scorer(enum.Enum):
    MARGIN = "margin"
    MARGIN_MIN = "margin-min"
    MNLP = "mnlp"
    SUM_PROB = "sum-prob"


SCORERS_BY_TASK: dict[TaskKind, tuple[Scorer, ...]] = {
    TaskKind.SEQUENCE_LEVEL: (Scorer.MARGIN,),
    TaskKind.TOKEN_LEVEL: (Scorer.MARGIN_MIN, Scorer.MNLP),
    TaskKind.SPAN_QA: (Scorer.SUM_PROB,),
}


def default_scorer(task: TaskKind) -> Scorer:
    """Preferred scorer per task; the margin family won out for token tasks."""
    return SCORERS_BY_TASK[task][0]


def _top_two(row: np.ndarray) -> tuple[float, float]:
    # Partitioning leaves the maximum at -1 and the runner-up at -2. Ties in
    # class identity resolve to the lower index; the margin value is the same.
    part = np.partition(row, row.shape[0] - 2)
    return float(part[-1]), float(part[-2])


def margin_sequence(p: SeqProbs) -> float:
    """Negated gap between the two most probable classes. Raw gap in [0, 1]."""
    if p.n_classes < 2:
        raise InvariantViolation("min-classes", "margin needs at least two classes")
    top, second = _top_two(p.probs)
    return -(top - second)


def margin_min_token(p: TokenProbs) -> float:
    """Negated minimum per-token top-two gap across the sequence."""
    rows = p.rows
    if rows.shape[0] < 1:
        raise EmptyInputError("token sequence is empty")
    if rows.shape[1] < 2:
        raise InvariantViolation("min-classes", "margin needs at least two classes")
    part = np.partition(rows, rows.shape[1] - 2, axis=1)
    margins = part[:, -1] - part[:, -2]
    return -float(margins.min())


def sum_prob_qa(p: SpanLogProbs) -> float:
    """Negated sum of the best start and best end log-probabilities."""
    if p.start_logp.shape[0] < 1:
        raise EmptyInputError("span log-probability vectors are empty")
    return -(float(p.start_logp.max()) + float(p.end_logp.max()))


def mnlp_token(top_class_probs: np.ndarray) -> float:
    """Negated mean log-probability of the per-token best class.

    Alternative token-level scorer; margin_min_token is the default.
    """
    probs = np.asarray(top_class_probs, dtype=np.float64)
    if probs.ndim != 1 or probs.shape[0] < 1:
        raise EmptyInputError("need at least one per-token probability")
    if not np.all(np.isfinite(probs)):
        raise InvariantViolation("probability-finite", "non-finite value")
    if np.any(probs <= 0.0):
        raise InvariantViolation("probability-positive", "top-class probability must be > 0")
    if np.any(probs > 1.0):
        raise InvariantViolation("probability-range", "probability above 1")
    return -float(np.log(probs).mean())


def score_example(payload, scorer: Scorer) -> float:
    if scorer is Scorer.MARGIN:
        return margin_sequence(payload)
    if scorer is Scorer.MARGIN_MIN:
        return margin_min_token(payload)
    if scorer is Scorer.MNLP:
        return mnlp_token(payload.rows.max(axis=1))
    if scorer is Scorer.SUM_PROB:
        return sum_prob_qa(payload)
    raise ValueError(f"unknown scorer {scorer!r}")


def score_dataset(ds: Dataset, scorer: Scorer) -> np.ndarray:
    """Uncertainty score for each example, aligned with ds.examples."""
    if scorer not in SCORERS_BY_TASK[ds.task]:
        raise ScorerTaskMismatchError(
            f"scorer {scorer.value!r} is not valid for {ds.task.value!r} datasets"
        )
    scores = map_indexed(lambda i: score_example(ds.examples[i].payload, scorer), len(ds))
    return np.asarray(scores, dtype=np.float64)
