"""Shared builders for engine tests."""

from __future__ import annotations

import numpy as np
import pytest

from demux.core import (
    Dataset,
    Example,
    Role,
    SeqProbs,
    SpanLogProbs,
    TaskKind,
    TokenProbs,
)
from demux.dataset_io import fnv1a64


def seq_example(ex_id: str, rep, probs, language: str = "de") -> Example:
    return Example(ex_id, language, fnv1a64(ex_id), np.asarray(rep, float),
                   SeqProbs(np.asarray(probs, float)))


def seq_dataset(reps, probs=None, role: Role = Role.SOURCE, languages=None,
                ids=None) -> Dataset:
    reps = np.asarray(reps, float)
    n = reps.shape[0]
    if probs is None:
        probs = [[0.5, 0.3, 0.2]] * n
    if languages is None:
        languages = ["de"] * n
    if ids is None:
        ids = [f"e{i:03d}" for i in range(n)]
    examples = [seq_example(ids[i], reps[i], probs[i], languages[i]) for i in range(n)]
    return Dataset(TaskKind.SEQUENCE_LEVEL, reps.shape[1], examples, role)


def token_example(ex_id: str, rep, rows, language: str = "de") -> Example:
    return Example(ex_id, language, fnv1a64(ex_id), np.asarray(rep, float),
                   TokenProbs(np.asarray(rows, float)))


def qa_example(ex_id: str, rep, start, end, language: str = "de") -> Example:
    return Example(ex_id, language, fnv1a64(ex_id), np.asarray(rep, float),
                   SpanLogProbs(np.asarray(start, float), np.asarray(end, float)))


def random_simplex(rng: np.random.Generator, n_classes: int) -> np.ndarray:
    raw = rng.random(n_classes) + 1e-3
    return raw / raw.sum()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
