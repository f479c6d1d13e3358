"""Shared domain model: tasks, payloads, examples, datasets, pooling, distance.

All numeric work is done in float64 regardless of storage precision, so
results are reproducible across platforms and thread schedules.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    InvariantViolation,
)

# Softmax outputs from 32-bit inference rarely sum to exactly 1.
PROB_SUM_TOL = 1e-4


class TaskKind(enum.Enum):
    SEQUENCE_LEVEL = "sequence-level"
    TOKEN_LEVEL = "token-level"
    SPAN_QA = "span-qa"


class Role(enum.Enum):
    SOURCE = "source"
    TARGET = "target"


def _as_float64(values, rule: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvariantViolation(rule, "non-finite value")
    return arr


@dataclass(frozen=True, eq=False)
class SeqProbs:
    """Class-probability vector for a sequence-level prediction."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _as_float64(self.probs, "probability-finite")
        if probs.ndim != 1 or probs.shape[0] < 2:
            raise InvariantViolation("min-classes", "need at least two class probabilities")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise InvariantViolation("probability-range", "probability outside [0, 1]")
        total = float(probs.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise InvariantViolation("probability-sum", f"probabilities sum to {total:.6f}")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def n_classes(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True, eq=False)
class TokenProbs:
    """Per-token class-probability rows for a token-level prediction."""

    rows: np.ndarray

    def __post_init__(self):
        rows = _as_float64(self.rows, "probability-finite")
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise InvariantViolation("token-rows", "need a T x C matrix with T >= 1")
        sums = rows.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise InvariantViolation("probability-sum", f"row {bad} sums to {sums[bad]:.6f}")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def n_tokens(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True, eq=False)
class SpanLogProbs:
    """Start/end log-probability vectors for an extractive span prediction."""

    start_logp: np.ndarray
    end_logp: np.ndarray

    def __post_init__(self):
        start = _as_float64(self.start_logp, "logprob-finite")
        end = _as_float64(self.end_logp, "logprob-finite")
        if start.ndim != 1 or end.ndim != 1 or start.shape != end.shape or start.shape[0] < 1:
            raise InvariantViolation("span-length", "start/end vectors must share a length T >= 1")
        if np.any(start > 0.0) or np.any(end > 0.0):
            raise InvariantViolation("logprob-positive", "log-probability above 0")
        start.flags.writeable = False
        end.flags.writeable = False
        object.__setattr__(self, "start_logp", start)
        object.__setattr__(self, "end_logp", end)


UncertaintyPayload = SeqProbs | TokenProbs | SpanLogProbs

PAYLOAD_BY_TASK: dict[TaskKind, type] = {
    TaskKind.SEQUENCE_LEVEL: SeqProbs,
    TaskKind.TOKEN_LEVEL: TokenProbs,
    TaskKind.SPAN_QA: SpanLogProbs,
}


@dataclass(frozen=True, eq=False)
class WordAlignment:
    """First-subword token index for each word, strictly increasing."""

    first_subword_index: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.first_subword_index)
        if not idx:
            raise InvariantViolation("alignment-empty", "alignment has no words")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise InvariantViolation("alignment-order", "indices must be strictly increasing")
        if idx[0] < 0:
            raise InvariantViolation("alignment-range", "negative token index")
        object.__setattr__(self, "first_subword_index", idx)

    def __len__(self) -> int:
        return len(self.first_subword_index)


@dataclass(eq=False)
class Example:
    """One unlabeled pool item: pooled representation plus model outputs."""

    id: str
    language: str
    text_hash: int
    representation: np.ndarray
    payload: UncertaintyPayload

    def __post_init__(self):
        rep = _as_float64(self.representation, "representation-finite")
        if rep.ndim != 1 or rep.shape[0] < 1:
            raise InvariantViolation("representation-dim", "representation must be a non-empty vector",
                                     example_id=self.id)
        rep.flags.writeable = False
        self.representation = rep


@dataclass(eq=False)
class Dataset:
    """A validated pool of examples sharing one task kind and dimension."""

    task: TaskKind
    dim: int
    examples: list[Example]
    role: Role
    _matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        want = PAYLOAD_BY_TASK[self.task]
        seen: set[str] = set()
        for ex in self.examples:
            if not isinstance(ex.payload, want):
                raise InvariantViolation(
                    "payload-task",
                    f"{type(ex.payload).__name__} payload under {self.task.value} task",
                    example_id=ex.id,
                )
            if ex.representation.shape[0] != self.dim:
                raise InvariantViolation(
                    "representation-dim",
                    f"length {ex.representation.shape[0]} != dataset dim {self.dim}",
                    example_id=ex.id,
                )
            if ex.id in seen:
                raise InvariantViolation("id-unique", "duplicate example id", example_id=ex.id)
            seen.add(ex.id)

    def __len__(self) -> int:
        return len(self.examples)

    def matrix(self) -> np.ndarray:
        """Representations stacked as an (n, dim) float64 matrix (cached)."""
        if self._matrix is None:
            if not self.examples:
                m = np.zeros((0, self.dim), dtype=np.float64)
            else:
                m = np.stack([ex.representation for ex in self.examples])
            m.flags.writeable = False
            self._matrix = m
        return self._matrix

    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]


def pool_representation(
    raw_token_embs: np.ndarray,
    task: TaskKind,
    align: WordAlignment | None = None,
) -> np.ndarray:
    """Collapse per-token embeddings to the single vector the classifier sees.

    Sequence-level and span tasks use the embedding at position 0 (the
    classifier-input token). Token-level tasks average the first-subword
    embedding of every word, so the vector matches the inputs of the
    word-tag classifier.
    """
    raw = np.asarray(raw_token_embs, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise EmptyInputError("raw token embeddings must be a non-empty T x d matrix")
    if task in (TaskKind.SEQUENCE_LEVEL, TaskKind.SPAN_QA):
        return raw[0].copy()
    if align is None:
        raise InvariantViolation("alignment-missing", "token-level pooling requires a word alignment")
    idx = np.asarray(align.first_subword_index, dtype=np.int64)
    if idx[-1] >= raw.shape[0]:
        raise InvariantViolation("alignment-range",
                                 f"token index {int(idx[-1])} >= sequence length {raw.shape[0]}")
    return raw[idx].mean(axis=0)


def target_distance(x: np.ndarray, targets: Dataset) -> float:
    """Mean Euclidean distance from x to every target representation."""
    if targets.role is not Role.TARGET:
        raise ValueError("targets dataset must have the target role")
    if not targets.examples:
        raise EmptyInputError("target pool is empty")
    q = np.asarray(x, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != targets.dim:
        raise DimensionMismatchError(f"point has dim {q.shape}, targets have dim {targets.dim}")
    diffs = targets.matrix() - q
    return float(np.sqrt(np.einsum("ij,ij->i", diffs, diffs)).mean())


def dedup(ds: Dataset) -> Dataset:
    """Drop later repeats of each content hash, keeping first occurrences in order."""
    seen: set[int] = set()
    kept: list[Example] = []
    for ex in ds.examples:
        if ex.text_hash in seen:
            continue
        seen.add(ex.text_hash)
        kept.append(ex)
    if len(kept) == len(ds.examples):
        return ds
    return replace(ds, examples=kept, _matrix=None)
