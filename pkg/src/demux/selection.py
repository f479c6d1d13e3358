"""Selection strategies: distance, uncertainty, the hybrid k-NN strategy,
and the random / egalitarian / gold / same-ratio baselines.

Every strategy reduces to picking a b-sized subset of the eligible pool.
For the additive objectives (summed distance, summed uncertainty) the
subset optimum is exactly the b best per-point scores, so no subset search
is ever performed. All sampling uses the counter-based Philox generator and
a partial Fisher-Yates shuffle so plans are byte-identical across
platforms; the generator name is pinned in every plan.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ._parallel import map_indexed
from .core import Dataset, Example
from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    InsufficientLanguagePoolError,
    UnknownLanguageError,
)
from .knn import index_from_matrix, neighbor_union
from .uncertainty import Scorer, score_dataset

RNG_NAME = "philox4x32-10"
SCORE_DIGITS = 9


class Strategy(enum.Enum):
    RANDOM = "random"
    EGALITARIAN = "egalitarian"
    GOLD = "gold"
    AVERAGE_DIST = "average-dist"
    UNCERTAINTY = "uncertainty"
    KNN_UNCERTAINTY = "knn-uncertainty"
    SAME_RATIO = "same-ratio"


@dataclass(frozen=True)
class Exclusions:
    """Ids already sent for annotation in earlier rounds."""

    ids: frozenset[str] = frozenset()

    def __contains__(self, example_id: str) -> bool:
        return example_id in self.ids

    def union(self, more: list[str]) -> "Exclusions":
        return Exclusions(self.ids | frozenset(more))


def _round_score(x: float) -> float:
    return float(f"{x:.{SCORE_DIGITS}g}")


@dataclass(eq=True)
class SelectionPlan:
    """The ordered outcome of one selection round.

    Scores are normalized to 9 significant digits at construction, so a
    plan compares equal to itself after a serialization round trip.
    """

    strategy: str
    seed: int
    chosen: list[str]
    scores: dict[str, float]
    lang_counts: dict[str, int]
    round: int = 1
    k: int | None = None
    shortfall: bool = False
    rng: str = RNG_NAME

    def __post_init__(self):
        self.scores = {i: _round_score(s) for i, s in self.scores.items()}


def _eligible(source: Dataset, excl: Exclusions | None) -> list[Example]:
    if excl is None or not excl.ids:
        return list(source.examples)
    return [ex for ex in source.examples if ex.id not in excl.ids]


def _make_plan(
    strategy: Strategy,
    picked: list[Example],
    scores: dict[str, float],
    seed: int,
    b: int,
    k: int | None = None,
) -> SelectionPlan:
    return SelectionPlan(
        strategy=strategy.value,
        seed=seed,
        chosen=[ex.id for ex in picked],
        scores=scores,
        lang_counts=dict(Counter(ex.language for ex in picked)),
        k=k,
        shortfall=len(picked) < b,
    )


def _require_pool(eligible: list[Example]) -> None:
    if not eligible:
        raise EmptyInputError("eligible source pool is empty")


def _check_b(b: int) -> None:
    if b < 1:
        raise ValueError(f"b must be >= 1, got {b}")


def _top_by(
    eligible: list[Example], values: np.ndarray, b: int, descending: bool
) -> tuple[list[Example], dict[str, float]]:
    """Best-b examples by value, ties by ascending id, ordered best first."""
    sign = -1.0 if descending else 1.0
    order = sorted(range(len(eligible)), key=lambda i: (sign * values[i], eligible[i].id))
    picked = [eligible[i] for i in order[: min(b, len(eligible))]]
    scores = {eligible[i].id: float(values[i]) for i in order[: min(b, len(eligible))]}
    return picked, scores


def average_dist_scores(eligible: list[Example], targets: Dataset) -> np.ndarray:
    """Mean L2 distance from each eligible point to the whole target pool."""
    if not targets.examples:
        raise EmptyInputError("target pool is empty")
    if eligible and eligible[0].representation.shape[0] != targets.dim:
        raise DimensionMismatchError(
            f"source dim {eligible[0].representation.shape[0]} != target dim {targets.dim}"
        )
    tm = targets.matrix()

    def one(i: int) -> float:
        diffs = tm - eligible[i].representation
        return float(np.sqrt(np.einsum("ij,ij->i", diffs, diffs)).mean())

    return np.asarray(map_indexed(one, len(eligible)), dtype=np.float64)


def select_average_dist(
    source: Dataset,
    targets: Dataset,
    b: int,
    excl: Exclusions | None = None,
) -> SelectionPlan:
    """The b eligible points with the smallest mean distance to the target pool.

    The subset objective is a sum of per-point distances, so the argmin over
    all b-sized subsets is exactly the b smallest scores.
    """
    _check_b(b)
    eligible = _eligible(source, excl)
    _require_pool(eligible)
    d_t = average_dist_scores(eligible, targets)
    picked, scores = _top_by(eligible, d_t, b, descending=False)
    return _make_plan(Strategy.AVERAGE_DIST, picked, scores, seed=0, b=b)


def select_uncertainty(
    source: Dataset,
    b: int,
    scorer: Scorer,
    excl: Exclusions | None = None,
) -> SelectionPlan:
    """The b eligible points the current model is least sure about."""
    _check_b(b)
    all_scores = score_dataset(source, scorer)
    eligible_idx = [i for i, ex in enumerate(source.examples)
                    if excl is None or ex.id not in excl.ids]
    eligible = [source.examples[i] for i in eligible_idx]
    _require_pool(eligible)
    values = all_scores[eligible_idx]
    picked, scores = _top_by(eligible, values, b, descending=True)
    return _make_plan(Strategy.UNCERTAINTY, picked, scores, seed=0, b=b)


def select_knn_uncertainty(
    source: Dataset,
    targets: Dataset,
    b: int,
    k: int,
    scorer: Scorer,
    excl: Exclusions | None = None,
) -> SelectionPlan:
    """Most uncertain points inside the union of target neighborhoods.

    When the union holds fewer than b points, k doubles (capped at the pool
    size) and the union is recomputed; the k actually used is recorded in
    the plan.
    """
    _check_b(b)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not targets.examples:
        raise EmptyInputError("target pool is empty")
    all_scores = score_dataset(source, scorer)
    eligible_idx = [i for i, ex in enumerate(source.examples)
                    if excl is None or ex.id not in excl.ids]
    eligible = [source.examples[i] for i in eligible_idx]
    _require_pool(eligible)
    values = all_scores[eligible_idx]

    index = index_from_matrix(np.stack([ex.representation for ex in eligible]))
    n = len(eligible)
    k_eff = min(k, n)
    while True:
        union = neighbor_union(index, targets, k_eff)
        if len(union.members) >= b or k_eff >= n:
            break
        k_eff = min(2 * k_eff, n)
    member_idx = sorted(union.members)
    members = [eligible[i] for i in member_idx]
    picked, scores = _top_by(members, values[member_idx], b, descending=True)
    return _make_plan(Strategy.KNN_UNCERTAINTY, picked, scores, seed=0, b=b, k=k_eff)


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _sample_without_replacement(
    items: list[Example], n: int, rng: np.random.Generator
) -> list[Example]:
    """Partial Fisher-Yates shuffle; consumes exactly n draws from rng."""
    pool = list(items)
    n = min(n, len(pool))
    for i in range(n):
        j = i + int(rng.integers(0, len(pool) - i))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:n]


def select_random(
    source: Dataset,
    b: int,
    seed: int,
    excl: Exclusions | None = None,
    _strategy: Strategy = Strategy.RANDOM,
) -> SelectionPlan:
    """Uniform sample without replacement from the eligible pool."""
    _check_b(b)
    eligible = _eligible(source, excl)
    _require_pool(eligible)
    picked = _sample_without_replacement(eligible, b, _generator(seed))
    return _make_plan(_strategy, picked, {}, seed=seed, b=b)


def select_gold(
    target_labeled_pool: Dataset,
    b: int,
    seed: int,
    excl: Exclusions | None = None,
) -> SelectionPlan:
    """Uniform sample from a caller-supplied target-language pool.

    Identical mechanics to select_random; exists as the upper-bound arm, so
    plans carry their own strategy tag.
    """
    return select_random(target_labeled_pool, b, seed, excl, _strategy=Strategy.GOLD)


def egalitarian_allocation(capacities: dict[str, int], b: int) -> dict[str, int]:
    """Split a budget as evenly as possible across languages.

    Equal integer shares first; leftover units go one each to the languages
    with the most remaining eligible examples (ties by name); shares a
    language cannot absorb are redistributed the same way.
    """
    alloc = {lang: 0 for lang in capacities}
    budget = b
    while budget > 0:
        active = [l for l in alloc if alloc[l] < capacities[l]]
        if not active:
            break
        share = budget // len(active)
        if share == 0:
            order = sorted(active, key=lambda l: (-(capacities[l] - alloc[l]), l))
            for lang in order[:budget]:
                alloc[lang] += 1
            budget = 0
        else:
            for lang in active:
                take = min(share, capacities[lang] - alloc[lang])
                alloc[lang] += take
                budget -= take
    return alloc


def select_egalitarian(
    source: Dataset,
    b: int,
    seed: int,
    excl: Exclusions | None = None,
) -> SelectionPlan:
    """An equal per-language share of the budget, sampled uniformly within
    each language."""
    _check_b(b)
    eligible = _eligible(source, excl)
    _require_pool(eligible)
    if any(ex.language == "unknown" for ex in eligible):
        raise UnknownLanguageError("egalitarian selection needs a language tag on every example")
    by_lang: dict[str, list[Example]] = {}
    for ex in eligible:
        by_lang.setdefault(ex.language, []).append(ex)
    alloc = egalitarian_allocation({l: len(v) for l, v in by_lang.items()}, b)
    rng = _generator(seed)
    picked: list[Example] = []
    for lang in sorted(by_lang):
        if alloc[lang]:
            picked.extend(_sample_without_replacement(by_lang[lang], alloc[lang], rng))
    return _make_plan(Strategy.EGALITARIAN, picked, {}, seed=seed, b=b)


def same_ratio_random(
    reference: SelectionPlan,
    source: Dataset,
    seed: int,
    excl: Exclusions | None = None,
) -> SelectionPlan:
    """Random sample reproducing a reference plan's per-language counts exactly."""
    eligible = _eligible(source, excl)
    by_lang: dict[str, list[Example]] = {}
    for ex in eligible:
        by_lang.setdefault(ex.language, []).append(ex)
    rng = _generator(seed)
    picked: list[Example] = []
    for lang in sorted(reference.lang_counts):
        need = reference.lang_counts[lang]
        pool = by_lang.get(lang, [])
        if len(pool) < need:
            raise InsufficientLanguagePoolError(
                f"language {lang!r} has {len(pool)} eligible examples, reference needs {need}"
            )
        picked.extend(_sample_without_replacement(pool, need, rng))
    b = sum(reference.lang_counts.values())
    return _make_plan(Strategy.SAME_RATIO, picked, {}, seed=seed, b=b)


def empty_plan(strategy: Strategy, seed: int, round_no: int = 1) -> SelectionPlan:
    """A zero-selection shortfall plan, used when a pool is exhausted mid-loop."""
    return SelectionPlan(
        strategy=strategy.value,
        seed=seed,
        chosen=[],
        scores={},
        lang_counts={},
        round=round_no,
        shortfall=True,
    )
