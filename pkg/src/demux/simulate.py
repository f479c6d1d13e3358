"""Desk-scale verification world: synthetic multilingual pools, a trainable
softmax probe standing in for the big multilingual model, strategy-vs-baseline
experiments, and the neighborhood-uncertainty correlation analysis.

Geometry of a synthetic world: class structure lives in the first half of
the feature dimensions, language structure in the second half. Every
language gets a position on a signed axis of the language subspace plus a
small random shift inside the class subspace (the part that actually moves
decision boundaries). The overlap knob scales all of it: at overlap 1 the
source and target marginals coincide; at overlap 0 every target cluster
mean is at least the configured separation away from every source cluster
mean. Each target language is additionally pulled toward one randomly
chosen "sibling" source language, so at intermediate overlap a few source
languages genuinely cover the target while the rest are distractors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Dataset, Example, Role, SeqProbs, TaskKind
from .dataset_io import canonical_json, fnv1a64
from .errors import (
    ConstantVectorError,
    DegenerateCovarianceError,
    EmptyInputError,
)
from .knn import build_index, query_topk
from .orchestrator import ALConfig, run_loop
from .selection import SelectionPlan, Strategy
from .uncertainty import Scorer, score_dataset

LANG_CODES = (
    "de", "fr", "es", "ru", "tr", "ar", "hi", "zh",
    "ja", "ko", "fi", "he", "ta", "vi", "th", "id",
)


@dataclass(frozen=True)
class SimTask:
    """Configuration of one synthetic multilingual world."""

    n_source_languages: int = 8
    n_target_languages: int = 2
    n_classes: int = 4
    dim: int = 16
    overlap: float = 0.5
    seed: int = 0
    examples_per_source_language: int = 150
    target_pool_per_language: int = 60
    test_per_language: int = 200
    bootstrap_size: int = 32
    noise_sigma: float = 1.2
    class_separation: float = 4.0
    language_separation: float = 16.0
    class_shift: float = 8.0
    sibling_curve: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError(f"overlap must lie in [0, 1], got {self.overlap}")
        if self.noise_sigma <= 0.0:
            raise DegenerateCovarianceError(f"noise sigma must be > 0, got {self.noise_sigma}")
        if self.dim < 4:
            raise ValueError("need at least 4 dimensions")
        half = self.dim // 2
        if self.n_classes > 2 * half:
            raise ValueError("too many classes for the class subspace")
        if self.n_source_languages + self.n_target_languages > 2 * (self.dim - half):
            raise ValueError("too many languages for the language subspace")


def _axis_positions(n: int, lo: int, width: int, scale: float, dim: int) -> np.ndarray:
    """n points on distinct signed axes of a subspace; min pairwise distance
    is scale * sqrt(2)."""
    pos = np.zeros((n, dim))
    for i in range(n):
        pos[i, lo + i % width] = scale if i < width else -scale
    return pos


def _lang_code(i: int) -> str:
    return LANG_CODES[i] if i < len(LANG_CODES) else f"x{i:02d}"


@dataclass(eq=False)
class SyntheticWorld:
    """Generated pools plus the hidden annotation oracle."""

    spec: SimTask
    source: Dataset
    target: Dataset
    test_features: np.ndarray
    test_labels: np.ndarray
    bootstrap_features: np.ndarray
    bootstrap_labels: np.ndarray
    labels: dict[str, int]
    cluster_means: dict[tuple[str, int], np.ndarray] = field(default_factory=dict,
                                                             repr=False)
    _feature_by_id: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def feature_of(self, example_id: str) -> np.ndarray:
        return self._feature_by_id[example_id]

    def label_of(self, example_id: str) -> int:
        return self.labels[example_id]


def _uniform_payload(n_classes: int) -> SeqProbs:
    return SeqProbs(np.full(n_classes, 1.0 / n_classes))


def make_synthetic_task(spec: SimTask) -> SyntheticWorld:
    """Deterministically generate source/target/test pools from the seed."""
    rng = np.random.Generator(np.random.Philox(spec.seed))
    d = spec.dim
    half = d // 2
    c_scale = spec.class_separation / np.sqrt(2.0)
    l_scale = spec.language_separation / np.sqrt(2.0)

    anchors = _axis_positions(spec.n_classes, 0, half, c_scale, d)
    n_langs = spec.n_source_languages + spec.n_target_languages
    positions = _axis_positions(n_langs, half, d - half, l_scale, d)
    # Per-language shift inside the span of the class anchors: the component
    # that actually moves decision boundaries, so training on languages with
    # the wrong shift misleads the classifier.
    anchor_axes = sorted({i % half for i in range(spec.n_classes)})
    shifts = np.zeros((n_langs, d))
    for i in range(n_langs):
        direction = rng.standard_normal(len(anchor_axes))
        direction /= np.linalg.norm(direction)
        shifts[i, anchor_axes] = spec.class_shift * direction

    ov = spec.overlap
    offsets = np.zeros((n_langs, d))
    siblings = rng.integers(0, spec.n_source_languages, size=spec.n_target_languages)
    for i in range(spec.n_source_languages):
        offsets[i] = (1.0 - ov) * (positions[i] + shifts[i])
    # Each target language is pulled toward one sibling source language; the
    # pull saturates quickly with overlap (w = ov^curve), so at moderate
    # overlap part of the source pool genuinely covers the target while the
    # rest stays a distractor. At zero overlap the pull vanishes and every
    # target cluster keeps the full configured separation.
    w = ov ** spec.sibling_curve if ov > 0.0 else 0.0
    for j in range(spec.n_target_languages):
        t = spec.n_source_languages + j
        sib = siblings[j]
        own = positions[t] + shifts[t]
        near = positions[sib] + shifts[sib]
        offsets[t] = (1.0 - ov) * ((1.0 - w) * own + w * near)

    labels: dict[str, int] = {}
    features: dict[str, np.ndarray] = {}
    cluster_means = {
        (_lang_code(i), c): anchors[c] + offsets[i]
        for i in range(n_langs)
        for c in range(spec.n_classes)
    }

    def draw_pool(lang_idx: int, count: int, prefix: str) -> list[Example]:
        code = _lang_code(lang_idx)
        exs = []
        for i in range(count):
            cls = i % spec.n_classes
            x = anchors[cls] + offsets[lang_idx] + spec.noise_sigma * rng.standard_normal(d)
            ex_id = f"{prefix}_{code}_{i:04d}"
            labels[ex_id] = cls
            features[ex_id] = x
            exs.append(Example(ex_id, code, fnv1a64(ex_id), x,
                               _uniform_payload(spec.n_classes)))
        return exs

    source_examples: list[Example] = []
    for i in range(spec.n_source_languages):
        source_examples.extend(draw_pool(i, spec.examples_per_source_language, "s"))
    target_examples: list[Example] = []
    for j in range(spec.n_target_languages):
        target_examples.extend(
            draw_pool(spec.n_source_languages + j, spec.target_pool_per_language, "t")
        )

    test_x, test_y = [], []
    for j in range(spec.n_target_languages):
        t = spec.n_source_languages + j
        for i in range(spec.test_per_language):
            cls = i % spec.n_classes
            test_x.append(anchors[cls] + offsets[t] + spec.noise_sigma * rng.standard_normal(d))
            test_y.append(cls)

    boot_x, boot_y = [], []
    for i in range(spec.bootstrap_size):
        cls = i % spec.n_classes
        boot_x.append(anchors[cls] + offsets[0] + spec.noise_sigma * rng.standard_normal(d))
        boot_y.append(cls)

    return SyntheticWorld(
        spec=spec,
        source=Dataset(TaskKind.SEQUENCE_LEVEL, d, source_examples, Role.SOURCE),
        target=Dataset(TaskKind.SEQUENCE_LEVEL, d, target_examples, Role.TARGET),
        test_features=np.asarray(test_x),
        test_labels=np.asarray(test_y, dtype=np.int64),
        bootstrap_features=np.asarray(boot_x),
        bootstrap_labels=np.asarray(boot_y, dtype=np.int64),
        labels=labels,
        cluster_means=cluster_means,
        _feature_by_id=features,
    )


# ---------------------------------------------------------------------------
# Probe classifier


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class ProbeModel:
    """Multinomial linear classifier trained by full-batch gradient descent."""

    weights: np.ndarray
    bias: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    @classmethod
    def init(cls, n_classes: int, dim: int) -> "ProbeModel":
        return cls(np.zeros((n_classes, dim)), np.zeros(n_classes))

    def copy(self) -> "ProbeModel":
        return ProbeModel(self.weights.copy(), self.bias.copy(), list(self.loss_history))

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights.T + self.bias

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.logits(features))

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float((self.logits(features).argmax(axis=1) == labels).mean())


def cross_entropy(model: ProbeModel, features: np.ndarray, labels: np.ndarray) -> float:
    probs = model.predict_proba(features)
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, 1e-300)).mean())


def probe_gradients(
    model: ProbeModel, features: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic cross-entropy gradients w.r.t. weights and bias."""
    n = len(labels)
    probs = model.predict_proba(features)
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    return delta.T @ features / n, delta.mean(axis=0)


def train_probe(
    model: ProbeModel,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    lr: float,
) -> ProbeModel:
    """Gradient-descent training; records the loss before every step plus the
    final loss, so callers can check descent actually happened."""
    if len(labels) == 0:
        raise EmptyInputError("training set is empty")
    out = model.copy()
    out.loss_history = []
    for _ in range(epochs):
        out.loss_history.append(cross_entropy(out, features, labels))
        g_w, g_b = probe_gradients(out, features, labels)
        out.weights -= lr * g_w
        out.bias -= lr * g_b
    out.loss_history.append(cross_entropy(out, features, labels))
    return out


# ---------------------------------------------------------------------------
# Experiment runner


def with_payloads(ds: Dataset, probs: np.ndarray) -> Dataset:
    """Same examples, payloads replaced by fresh class-probability rows."""
    examples = [
        Example(ex.id, ex.language, ex.text_hash, ex.representation, SeqProbs(probs[i]))
        for i, ex in enumerate(ds.examples)
    ]
    return Dataset(ds.task, ds.dim, examples, ds.role)


@dataclass(eq=False)
class SimulatorProvider:
    """In-process round provider: re-scores pools with the current probe and
    retrains it on everything annotated so far after each plan."""

    world: SyntheticWorld
    cfg: ALConfig
    probe: ProbeModel
    train_epochs: int = 300
    train_lr: float = 0.05
    annotated: list[str] = field(default_factory=list)
    accuracy_history: list[float] = field(default_factory=list)

    def _pool(self) -> Dataset:
        if self.cfg.strategy is Strategy.GOLD:
            return self.world.target
        return self.world.source

    def round_datasets(self, round_no: int) -> tuple[Dataset, Dataset]:
        pool = self._pool()
        return (
            with_payloads(pool, self.probe.predict_proba(pool.matrix())),
            with_payloads(self.world.target,
                          self.probe.predict_proba(self.world.target.matrix())),
        )

    def publish_plan(self, round_no: int, plan: SelectionPlan) -> None:
        self.annotated.extend(plan.chosen)
        ordered = sorted(self.annotated)
        feats = np.vstack(
            [self.world.bootstrap_features]
            + [self.world.feature_of(i)[None, :] for i in ordered]
        )
        labels = np.concatenate(
            [self.world.bootstrap_labels,
             np.asarray([self.world.label_of(i) for i in ordered], dtype=np.int64)]
        )
        self.probe = train_probe(
            ProbeModel.init(self.world.spec.n_classes, self.world.spec.dim),
            feats, labels, self.train_epochs, self.train_lr,
        )
        self.accuracy_history.append(
            self.probe.accuracy(self.world.test_features, self.world.test_labels)
        )


@dataclass(frozen=True)
class ResultRow:
    arm: str
    seed: int
    budget: int
    round: int
    accuracy: float


@dataclass(eq=False)
class ResultTable:
    rows: list[ResultRow]

    def final_accuracy(self, arm: str) -> dict[int, float]:
        """Last-round accuracy per seed for one arm."""
        per_seed: dict[int, tuple[int, float]] = {}
        for row in self.rows:
            if row.arm != arm:
                continue
            if row.seed not in per_seed or row.round > per_seed[row.seed][0]:
                per_seed[row.seed] = (row.round, row.accuracy)
        return {seed: acc for seed, (_, acc) in per_seed.items()}

    def arms(self) -> list[str]:
        seen = dict.fromkeys(row.arm for row in self.rows)
        return list(seen)

    def paired_diffs(self, arm: str, baseline: str) -> np.ndarray:
        a, b = self.final_accuracy(arm), self.final_accuracy(baseline)
        seeds = sorted(set(a) & set(b))
        return np.asarray([a[s] - b[s] for s in seeds])

    def summary(self, baseline: str = "random", n_permutations: int = 10000) -> dict:
        out: dict = {"arms": {}, "n_rows": len(self.rows)}
        for arm in self.arms():
            accs = np.asarray(list(self.final_accuracy(arm).values()))
            out["arms"][arm] = {
                "mean_accuracy": float(accs.mean()),
                "std_accuracy": float(accs.std(ddof=1)) if accs.size > 1 else 0.0,
                "n_seeds": int(accs.size),
            }
        if baseline in out["arms"]:
            pvals = {}
            for arm in self.arms():
                if arm == baseline:
                    continue
                diffs = self.paired_diffs(arm, baseline)
                pvals[arm] = paired_permutation_pvalue(diffs, n_permutations)
            out[f"pvalues_vs_{baseline}"] = pvals
        return out


def paired_permutation_pvalue(
    diffs: np.ndarray,
    n_permutations: int = 10000,
    seed: int = 0,
    alternative: str = "greater",
) -> float:
    """Sign-flip permutation test on paired differences.

    No distributional assumptions; suitable for the small seed counts the
    simulator runs with.
    """
    diffs = np.asarray(diffs, dtype=np.float64)
    if diffs.size == 0:
        raise EmptyInputError("no paired differences")
    rng = np.random.Generator(np.random.Philox(seed))
    observed = diffs.mean()
    signs = rng.integers(0, 2, size=(n_permutations, diffs.size)) * 2 - 1
    permuted = (signs * diffs).mean(axis=1)
    if alternative == "greater":
        extreme = permuted >= observed
    elif alternative == "two-sided":
        extreme = np.abs(permuted) >= abs(observed)
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    return float((np.count_nonzero(extreme) + 1) / (n_permutations + 1))


def run_experiment(
    sim: SimTask,
    cfg: ALConfig,
    arms: list[Strategy],
    n_seeds: int,
    probe_epochs: int = 300,
    probe_lr: float = 0.05,
) -> ResultTable:
    """Run every arm on n_seeds freshly generated worlds.

    All arms within one seed share the same world and the same
    bootstrap-trained probe, so per-seed differences are paired.
    """
    rows: list[ResultRow] = []
    for s in range(n_seeds):
        world = make_synthetic_task(replace(sim, seed=sim.seed + s))
        probe0 = train_probe(
            ProbeModel.init(sim.n_classes, sim.dim),
            world.bootstrap_features, world.bootstrap_labels,
            probe_epochs, probe_lr,
        )
        ref_plans: tuple[SelectionPlan, ...] | None = None
        for arm in arms:
            if arm is Strategy.SAME_RATIO:
                if ref_plans is None:
                    ref_plans = _reference_plans(world, cfg, probe0, s,
                                                 probe_epochs, probe_lr)
                arm_cfg = replace(cfg, strategy=arm, seed=cfg.seed + s,
                                  reference_plans=ref_plans)
            else:
                arm_cfg = replace(cfg, strategy=arm, seed=cfg.seed + s)
            provider = SimulatorProvider(world, arm_cfg, probe0.copy(),
                                         probe_epochs, probe_lr)
            run_loop(arm_cfg, provider)
            for r, acc in enumerate(provider.accuracy_history, start=1):
                rows.append(ResultRow(arm.value, s, cfg.budget, r, acc))
    return ResultTable(rows)


def _reference_plans(
    world: SyntheticWorld,
    cfg: ALConfig,
    probe0: ProbeModel,
    seed_offset: int,
    probe_epochs: int,
    probe_lr: float,
) -> tuple[SelectionPlan, ...]:
    """The hybrid strategy's plans for this world; the distribution the
    same-ratio arm reproduces."""
    k = cfg.k if cfg.k is not None else 10
    ref_cfg = replace(cfg, strategy=Strategy.KNN_UNCERTAINTY, k=k, seed=cfg.seed + seed_offset)
    provider = SimulatorProvider(world, ref_cfg, probe0.copy(), probe_epochs, probe_lr)
    return tuple(run_loop(ref_cfg, provider))


def write_results(table: ResultTable, out_dir: Path, baseline: str = "random") -> None:
    """Emit results.csv and summary.json for external plotting."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["arm", "seed", "budget", "round", "accuracy"])
        for row in table.rows:
            writer.writerow([row.arm, row.seed, row.budget, row.round, repr(row.accuracy)])
    (out_dir / "summary.json").write_text(canonical_json(table.summary(baseline)),
                                          encoding="utf-8")


# ---------------------------------------------------------------------------
# Analysis


def neighborhood_uncertainty_correlation(
    source: Dataset, targets: Dataset, k: int, scorer: Scorer
) -> float:
    """Pearson correlation between each target point's uncertainty and the
    mean uncertainty of its k nearest source neighbors."""
    if len(targets) < 2:
        raise EmptyInputError("need at least two target points")
    target_u = score_dataset(targets, scorer)
    source_u = score_dataset(source, scorer)
    index = build_index(source)
    tm = targets.matrix()
    neighbor_means = np.asarray([
        source_u[query_topk(index, tm[j], k).indices()].mean()
        for j in range(len(targets))
    ])
    if np.ptp(target_u) == 0.0 or np.ptp(neighbor_means) == 0.0:
        raise ConstantVectorError("correlation undefined for a constant vector")
    return float(np.corrcoef(target_u, neighbor_means)[0, 1])


def language_distribution(plan: SelectionPlan) -> dict[str, float]:
    """Fraction of the chosen batch drawn from each language."""
    if not plan.chosen:
        raise EmptyInputError("plan has no chosen examples")
    total = len(plan.chosen)
    return {lang: count / total for lang, count in plan.lang_counts.items()}
