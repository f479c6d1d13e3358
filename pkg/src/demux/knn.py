"""Exact k-nearest-neighbor search from target points into a source pool.

Brute-force scan over an immutable matrix is the v1 algorithm: the pools
this engine deals with are small enough that exactness is cheaper than the
bookkeeping of an approximate index. Ties are broken by ascending source
index so neighbor lists are reproducible byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import map_indexed
from .core import Dataset
from .errors import DimensionMismatchError, EmptyInputError, InvariantViolation


@dataclass(frozen=True, eq=False)
class BruteForceIndex:
    """Immutable (n, d) float64 matrix answering exact L2 queries."""

    matrix: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(eq=False)
class NeighborList:
    """Ascending-distance (source_index, distance) pairs for one query."""

    target_index: int | None
    neighbors: list[tuple[int, float]]

    def indices(self) -> list[int]:
        return [i for i, _ in self.neighbors]


@dataclass(eq=False)
class NeighborUnion:
    """Union of per-target neighbor sets, with which targets picked each source."""

    members: set[int]
    provenance: dict[int, list[int]]


def build_index(source: Dataset) -> BruteForceIndex:
    if not source.examples:
        raise EmptyInputError("cannot index an empty source pool")
    return index_from_matrix(source.matrix())


def index_from_matrix(matrix: np.ndarray) -> BruteForceIndex:
    m = np.ascontiguousarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise EmptyInputError("cannot index an empty source pool")
    if not np.all(np.isfinite(m)):
        raise InvariantViolation("representation-finite", "non-finite value in index input")
    m.flags.writeable = False
    return BruteForceIndex(m)


def query_topk(
    index: BruteForceIndex,
    q: np.ndarray,
    k: int,
    target_index: int | None = None,
) -> NeighborList:
    """Exact k nearest source points by L2 distance (64-bit accumulation)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query = np.asarray(q, dtype=np.float64)
    if query.ndim != 1 or query.shape[0] != index.dim:
        raise DimensionMismatchError(
            f"query has shape {query.shape}, index dimension is {index.dim}"
        )
    diffs = index.matrix - query
    dist = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    # Stable sort keeps ascending source index among exact distance ties.
    order = np.argsort(dist, kind="stable")[: min(k, index.size)]
    return NeighborList(target_index, [(int(i), float(dist[i])) for i in order])


def neighbor_union(index: BruteForceIndex, targets: Dataset, k: int) -> NeighborUnion:
    """Union of every target point's k nearest source indices, with provenance."""
    if not targets.examples:
        raise EmptyInputError("target pool is empty")
    tm = targets.matrix()
    lists = map_indexed(lambda j: query_topk(index, tm[j], k, target_index=j), len(targets))
    members: set[int] = set()
    provenance: dict[int, list[int]] = {}
    for nl in lists:
        for src, _ in nl.neighbors:
            members.add(src)
            provenance.setdefault(src, []).append(nl.target_index)
    return NeighborUnion(members, provenance)
