"""The K-round acquisition loop: per-round budgets, exclusion bookkeeping,
strategy dispatch, and the directory handshake with a model provider.

The engine never fine-tunes anything itself. Between rounds a provider
(a real training pipeline, or the in-process simulator) re-scores both
pools with its current model and hands them back; example ids must stay
stable across rounds because exclusions are id-based.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

from .core import Dataset, Role, TaskKind, dedup
from .dataset_io import read_dataset, write_plan
from .errors import BudgetExhaustedError, ProviderError
from .selection import (
    Exclusions,
    SelectionPlan,
    Strategy,
    empty_plan,
    same_ratio_random,
    select_average_dist,
    select_egalitarian,
    select_gold,
    select_knn_uncertainty,
    select_random,
    select_uncertainty,
)
from .uncertainty import Scorer, default_scorer


@dataclass(frozen=True)
class ALConfig:
    """Budget, round count, strategy and knobs for one acquisition run."""

    budget: int
    rounds: int
    strategy: Strategy
    task: TaskKind
    seed: int = 0
    k: int | None = None
    scorer: Scorer | None = None
    reference_plans: tuple[SelectionPlan, ...] | None = None

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.strategy is Strategy.KNN_UNCERTAINTY and self.k is None:
            raise ValueError("knn-uncertainty needs k")
        if self.strategy is Strategy.SAME_RATIO and self.reference_plans is None:
            raise ValueError("same-ratio needs one reference plan per round")


def round_sizes(cfg: ALConfig) -> list[int]:
    """Per-round budgets: floor(B/K), the first B mod K rounds get one extra."""
    b, extra = divmod(cfg.budget, cfg.rounds)
    return [b + 1 if r < extra else b for r in range(cfg.rounds)]


@dataclass
class RoundState:
    """Progress through the loop; exclusions are the union of prior plans."""

    round_index: int = 0
    exclusions: Exclusions = field(default_factory=Exclusions)
    plan_history: list[SelectionPlan] = field(default_factory=list)

    def selected_total(self) -> int:
        return sum(len(p.chosen) for p in self.plan_history)


def _dispatch(
    cfg: ALConfig,
    source: Dataset,
    targets: Dataset | None,
    b: int,
    seed: int,
    excl: Exclusions,
) -> SelectionPlan:
    strategy = cfg.strategy
    if strategy in (Strategy.AVERAGE_DIST, Strategy.KNN_UNCERTAINTY) and targets is None:
        raise ValueError(f"{strategy.value} needs a target pool")
    scorer = cfg.scorer or default_scorer(cfg.task)
    if strategy is Strategy.RANDOM:
        return select_random(source, b, seed, excl)
    if strategy is Strategy.EGALITARIAN:
        return select_egalitarian(source, b, seed, excl)
    if strategy is Strategy.GOLD:
        return select_gold(source, b, seed, excl)
    if strategy is Strategy.AVERAGE_DIST:
        return select_average_dist(source, targets, b, excl)
    if strategy is Strategy.UNCERTAINTY:
        return select_uncertainty(source, b, scorer, excl)
    if strategy is Strategy.KNN_UNCERTAINTY:
        return select_knn_uncertainty(source, targets, b, cfg.k, scorer, excl)
    raise ValueError(f"unknown strategy {strategy!r}")


def run_round(
    cfg: ALConfig,
    source: Dataset,
    targets: Dataset | None,
    state: RoundState,
) -> tuple[SelectionPlan, RoundState]:
    """Select this round's batch and fold it into the exclusion set."""
    if state.round_index >= cfg.rounds:
        raise BudgetExhaustedError(f"all {cfg.rounds} rounds already run")
    if state.selected_total() >= cfg.budget:
        raise BudgetExhaustedError(f"budget of {cfg.budget} already spent")

    source = dedup(source)
    if targets is not None:
        targets = dedup(targets)
    round_no = state.round_index + 1
    b = min(round_sizes(cfg)[state.round_index], cfg.budget - state.selected_total())
    seed = cfg.seed + state.round_index

    eligible_n = sum(1 for ex in source.examples if ex.id not in state.exclusions.ids)
    if eligible_n == 0:
        plan = empty_plan(cfg.strategy, seed, round_no)
    else:
        if cfg.strategy is Strategy.SAME_RATIO:
            plan = same_ratio_random(
                cfg.reference_plans[state.round_index], source, seed, state.exclusions
            )
        else:
            plan = _dispatch(cfg, source, targets, b, seed, state.exclusions)
        plan = replace(plan, round=round_no)

    new_state = RoundState(
        round_index=round_no,
        exclusions=state.exclusions.union(plan.chosen),
        plan_history=state.plan_history + [plan],
    )
    return plan, new_state


class ModelProvider(Protocol):
    """Supplies freshly scored pools per round and receives the plan back."""

    def round_datasets(self, round_no: int) -> tuple[Dataset, Dataset | None]: ...

    def publish_plan(self, round_no: int, plan: SelectionPlan) -> None: ...


def run_loop(cfg: ALConfig, provider: ModelProvider) -> list[SelectionPlan]:
    """Run all K rounds against a provider; returns one plan per round."""
    state = RoundState()
    for round_no in range(1, cfg.rounds + 1):
        try:
            source, targets = provider.round_datasets(round_no)
        except ProviderError:
            raise
        except Exception as exc:  # noqa: BLE001 - provider contract boundary
            raise ProviderError(f"provider failed for round {round_no}: {exc}") from exc
        missing = state.exclusions.ids - {ex.id for ex in source.examples}
        if missing:
            raise ProviderError(
                f"round {round_no} source pool lost previously selected ids: "
                f"{sorted(missing)[:5]}"
            )
        if targets is None and cfg.strategy in (Strategy.AVERAGE_DIST,
                                                Strategy.KNN_UNCERTAINTY):
            raise ProviderError(
                f"round {round_no} supplied no target pool, required by "
                f"{cfg.strategy.value}"
            )
        plan, state = run_round(cfg, source, targets, state)
        provider.publish_plan(round_no, plan)
    return state.plan_history


READY_SENTINEL = "READY"
DONE_SENTINEL = "DONE"


@dataclass
class DirectoryProvider:
    """Round handshake over a directory tree.

    For round r the provider process stages `round_r/source/`,
    `round_r/target/` and touches `round_r/READY`; the engine answers with
    `round_r/plan.json` and `round_r/DONE`.
    """

    root: Path
    timeout: float = 60.0
    poll_interval: float = 0.05

    def round_dir(self, round_no: int) -> Path:
        return Path(self.root) / f"round_{round_no}"

    def round_datasets(self, round_no: int) -> tuple[Dataset, Dataset | None]:
        rdir = self.round_dir(round_no)
        ready = rdir / READY_SENTINEL
        deadline = time.monotonic() + self.timeout
        while not ready.exists():
            if time.monotonic() >= deadline:
                raise ProviderError(f"timed out waiting for {ready}")
            time.sleep(self.poll_interval)
        source = read_dataset(rdir / "source", role=Role.SOURCE)
        target_dir = rdir / "target"
        targets = read_dataset(target_dir, role=Role.TARGET) if target_dir.exists() else None
        return source, targets

    def publish_plan(self, round_no: int, plan: SelectionPlan) -> None:
        rdir = self.round_dir(round_no)
        write_plan(plan, rdir / "plan.json")
        (rdir / DONE_SENTINEL).touch()
