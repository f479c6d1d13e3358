"""Acceptance suite: one test per release criterion, at its stated tolerance.

Each test prints a PASS/FAIL line (run with -s or check captured output), so
the suite doubles as a release report. Runtime-limited criteria assert their
own wall-clock budgets.
"""

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from demux.cli import main
from demux.core import Role, SeqProbs, SpanLogProbs, TaskKind, TokenProbs, dedup
from demux.dataset_io import (
    read_dataset,
    read_plan,
    write_dataset,
    write_plan,
)
from demux.knn import index_from_matrix, query_topk
from demux.orchestrator import ALConfig, RoundState, run_loop, run_round
from demux.selection import (
    Strategy,
    same_ratio_random,
    select_average_dist,
    select_egalitarian,
    select_knn_uncertainty,
    select_random,
    select_uncertainty,
)
from demux.simulate import (
    ProbeModel,
    SimTask,
    make_synthetic_task,
    neighborhood_uncertainty_correlation,
    run_experiment,
    train_probe,
    with_payloads,
)
from demux.uncertainty import (
    Scorer,
    margin_min_token,
    margin_sequence,
    mnlp_token,
    sum_prob_qa,
)

from conftest import random_simplex, seq_dataset

FIXTURES = Path(__file__).parent / "fixtures"


def report(name: str, ok: bool, detail: str = "") -> None:
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


def margin_oracle(probs) -> float:
    ordered = sorted(probs, reverse=True)
    return ordered[0] - ordered[1]


def enumerate_min(ids, scores, b):
    best, best_sum = None, math.inf
    for combo in itertools.combinations(range(len(ids)), b):
        total = sum(scores[i] for i in combo)
        if total < best_sum:
            best_sum, best = total, combo
    return {ids[i] for i in best}


def test_subset_oracle_equivalence():
    """select_average_dist and select_uncertainty equal exhaustive subset
    enumeration on 200 random instances; < 5 s."""
    rng = np.random.default_rng(2024)
    start = time.monotonic()
    for _ in range(200):
        n = int(rng.integers(4, 13))
        b = int(rng.integers(1, min(4, n) + 1))
        pts = rng.normal(size=(n, 3))
        probs = [random_simplex(rng, 3) for _ in range(n)]
        source = seq_dataset(pts, probs=probs)
        tgt_pts = rng.normal(size=(int(rng.integers(1, 6)), 3))
        targets = seq_dataset(tgt_pts, probs=[[0.5, 0.5]] * len(tgt_pts),
                              role=Role.TARGET)

        plan = select_average_dist(source, targets, b)
        d_t = [np.mean([math.dist(p, t) for t in tgt_pts.tolist()])
               for p in pts.tolist()]
        assert set(plan.chosen) == enumerate_min(source.ids(), d_t, b)

        plan = select_uncertainty(source, b, Scorer.MARGIN)
        raw = [margin_oracle(p.tolist()) for p in probs]
        assert set(plan.chosen) == enumerate_min(source.ids(), raw, b)
    elapsed = time.monotonic() - start
    report("subset-oracle-equivalence", elapsed < 5.0, f"{elapsed:.2f}s")


def test_knn_exactness():
    """Neighbor lists equal a naive double-loop oracle, tie order included,
    on 50 random instances; < 10 s."""
    rng = np.random.default_rng(7)
    start = time.monotonic()
    for _ in range(50):
        n_s = int(rng.integers(20, 2001))
        n_t = int(rng.integers(1, 101))
        k = int(rng.integers(1, 51))
        d = int(rng.integers(2, 65))
        pts = rng.normal(size=(n_s, d))
        # duplicated rows force exact distance ties
        dup = rng.integers(0, n_s, size=max(1, n_s // 50))
        pts[dup] = pts[dup[0]]
        index = index_from_matrix(pts)
        rows = pts.tolist()
        queries = rng.normal(size=(n_t, d))
        for q in queries:
            got = query_topk(index, q, k)
            ql = q.tolist()
            ref = sorted((math.dist(p, ql), i) for i, p in enumerate(rows))[:k]
            assert got.indices() == [i for _, i in ref]
            for (_, gd), (rd, _) in zip(got.neighbors, ref):
                assert gd == pytest.approx(rd, rel=1e-9, abs=1e-12)
    elapsed = time.monotonic() - start
    report("knn-exactness", elapsed < 10.0, f"{elapsed:.2f}s")


def test_scorer_correctness():
    """All four scorers match loop oracles within 1e-6 on 1000 random
    payloads each; spot values hold exactly."""
    rng = np.random.default_rng(99)

    for _ in range(1000):
        probs = random_simplex(rng, int(rng.integers(2, 12)))
        got = -margin_sequence(SeqProbs(probs))
        assert got == pytest.approx(margin_oracle(probs.tolist()), abs=1e-6)
    assert margin_sequence(SeqProbs([1 / 3, 1 / 3, 1 / 3])) == 0.0
    assert margin_sequence(SeqProbs([1.0, 0.0, 0.0])) == -1.0
    assert margin_sequence(SeqProbs([0.5, 0.3, 0.2])) == -(0.5 - 0.3)

    for _ in range(1000):
        rows = np.stack([random_simplex(rng, 5)
                         for _ in range(int(rng.integers(1, 30)))])
        got = -margin_min_token(TokenProbs(rows))
        ref = min(margin_oracle(r) for r in rows.tolist())
        assert got == pytest.approx(ref, abs=1e-6)
    assert margin_min_token(TokenProbs([[0.6, 0.4]])) == -(0.6 - 0.4)
    rows = [[0.6, 0.4], [0.525, 0.475], [0.95, 0.05]]
    assert margin_min_token(TokenProbs(rows)) == -(0.525 - 0.475)
    assert margin_min_token(TokenProbs(np.eye(3))) == -1.0  # one-hot rows

    for _ in range(1000):
        t = int(rng.integers(1, 40))
        start_lp, end_lp = -rng.exponential(size=t), -rng.exponential(size=t)
        got = -sum_prob_qa(SpanLogProbs(start_lp, end_lp))
        assert got == pytest.approx(max(start_lp.tolist()) + max(end_lp.tolist()),
                                    abs=1e-6)
    assert sum_prob_qa(SpanLogProbs([-0.1, -2.3], [-0.5, -1.0])) == -(-0.1 + -0.5)
    assert sum_prob_qa(SpanLogProbs([0.0], [0.0])) == 0.0
    assert sum_prob_qa(SpanLogProbs([-2.0], [-3.0])) == 5.0

    for _ in range(1000):
        probs = rng.uniform(0.001, 1.0, size=int(rng.integers(1, 50)))
        got = -mnlp_token(probs)
        ref = math.fsum(math.log(p) for p in probs.tolist()) / len(probs)
        assert got == pytest.approx(ref, abs=1e-6)
    assert mnlp_token(np.array([1.0])) == 0.0
    assert -mnlp_token(np.array([0.5, 0.25])) == pytest.approx(
        (math.log(0.5) + math.log(0.25)) / 2, abs=1e-6)
    assert -mnlp_token(np.array([0.7, 0.7, 0.7])) == pytest.approx(math.log(0.7),
                                                                   rel=1e-12)
    report("scorer-correctness", True)


def _protocol_pool(rng, n, n_langs=6):
    langs = [f"l{i % n_langs}" for i in range(n)]
    probs = [random_simplex(rng, 3) for _ in range(n)]
    return seq_dataset(rng.normal(size=(n, 4)), probs=probs, languages=langs)


def test_protocol_constants():
    """B=10000 over K=5 selects exactly 2000 per round; the K=1 low-budget
    sweep produces plans of exactly the requested sizes."""
    rng = np.random.default_rng(11)
    source = _protocol_pool(rng, 12000)

    class P:
        def round_datasets(self, r):
            return source, None

        def publish_plan(self, r, plan):
            pass

    cfg = ALConfig(budget=10000, rounds=5, strategy=Strategy.RANDOM,
                   task=TaskKind.SEQUENCE_LEVEL, seed=0)
    plans = run_loop(cfg, P())
    assert [len(p.chosen) for p in plans] == [2000] * 5
    all_ids = [i for p in plans for i in p.chosen]
    assert len(all_ids) == len(set(all_ids))

    sweep_pool = _protocol_pool(rng, 1500)
    for budget in (5, 10, 50, 100, 250, 500, 1000):
        cfg = ALConfig(budget=budget, rounds=1, strategy=Strategy.RANDOM,
                       task=TaskKind.SEQUENCE_LEVEL, seed=1)
        plan, _ = run_round(cfg, sweep_pool, None, RoundState())
        assert len(plan.chosen) == budget
    report("protocol-constants", True)


def test_knn_boundary_identity():
    """With k = |X_s| the hybrid strategy reduces to global uncertainty on
    50 random instances."""
    rng = np.random.default_rng(31)
    for _ in range(50):
        n = int(rng.integers(5, 60))
        b = int(rng.integers(1, n + 1))
        probs = [random_simplex(rng, 4) for _ in range(n)]
        source = seq_dataset(rng.normal(size=(n, 3)), probs=probs)
        targets = seq_dataset(rng.normal(size=(int(rng.integers(1, 8)), 3)),
                              role=Role.TARGET)
        knn_plan = select_knn_uncertainty(source, targets, b, n, Scorer.MARGIN)
        unc_plan = select_uncertainty(source, b, Scorer.MARGIN)
        assert knn_plan.chosen == unc_plan.chosen
    report("knn-boundary-identity", True)


DIRECTIONAL_WORLD = SimTask(seed=100)  # 8 source, 2 target languages, C=4, d=16


def test_simulator_directional_check():
    """KNN-UNCERTAINTY and AVERAGE-DIST each beat RANDOM (paired permutation
    p < 0.05) and GOLD's mean tops every zero-shot arm, over 25 seeds at
    B=100, K=1; < 2 min."""
    start = time.monotonic()
    cfg = ALConfig(budget=100, rounds=1, strategy=Strategy.RANDOM,
                   task=TaskKind.SEQUENCE_LEVEL, seed=0, k=10)
    arms = [Strategy.RANDOM, Strategy.AVERAGE_DIST, Strategy.KNN_UNCERTAINTY,
            Strategy.GOLD]
    table = run_experiment(DIRECTIONAL_WORLD, cfg, arms, n_seeds=25)
    summary = table.summary()
    elapsed = time.monotonic() - start

    p_avg = summary["pvalues_vs_random"]["average-dist"]
    p_knn = summary["pvalues_vs_random"]["knn-uncertainty"]
    means = {arm: summary["arms"][arm]["mean_accuracy"] for arm in summary["arms"]}
    gold_top = all(means["gold"] >= means[a] - 1e-12 for a in means)
    ok = p_avg < 0.05 and p_knn < 0.05 and gold_top and elapsed < 120.0
    report("simulator-directional-check", ok,
           f"p_avg={p_avg:.4f} p_knn={p_knn:.4f} gold_top={gold_top} "
           f"{elapsed:.0f}s")


def test_correlation_machinery():
    """Constructed linear/anti-linear fixtures give rho = +/-1 to 1e-9, and
    the directional-check world gives rho > 0.3."""
    rng = np.random.default_rng(5)

    def payload(u):
        raw = -u
        return [(1 + raw) / 2, (1 - raw) / 2]

    src_pts = rng.normal(size=(40, 2))
    src_u = rng.uniform(-0.9, -0.1, size=40)
    source = seq_dataset(src_pts, probs=[payload(u) for u in src_u])
    tgt_pts = rng.normal(size=(10, 2))
    index = index_from_matrix(source.matrix())
    means = np.array([src_u[query_topk(index, p, 5).indices()].mean()
                      for p in tgt_pts])
    linear = seq_dataset(tgt_pts, probs=[payload(u) for u in means],
                         role=Role.TARGET)
    anti = seq_dataset(tgt_pts, probs=[payload(u) for u in (-1.0 - means)],
                       role=Role.TARGET)
    rho_lin = neighborhood_uncertainty_correlation(source, linear, 5, Scorer.MARGIN)
    rho_anti = neighborhood_uncertainty_correlation(source, anti, 5, Scorer.MARGIN)
    assert rho_lin == pytest.approx(1.0, abs=1e-9)
    assert rho_anti == pytest.approx(-1.0, abs=1e-9)

    world = make_synthetic_task(DIRECTIONAL_WORLD)
    probe = train_probe(ProbeModel.init(world.spec.n_classes, world.spec.dim),
                        world.bootstrap_features, world.bootstrap_labels, 300, 0.05)
    src = with_payloads(world.source, probe.predict_proba(world.source.matrix()))
    tgt = with_payloads(world.target, probe.predict_proba(world.target.matrix()))
    rho_world = neighborhood_uncertainty_correlation(src, tgt, 10, Scorer.MARGIN)
    report("correlation-machinery", rho_world > 0.3,
           f"rho_lin={rho_lin:.12f} rho_world={rho_world:.3f}")


def test_cli_determinism(tmp_path, monkeypatch):
    """Identical flags and seed give byte-identical artifacts; DEMUX_THREADS
    in {1, 4} gives identical plans."""
    rng = np.random.default_rng(17)
    langs = ["de", "fr", "hi", "sw", "ta"] * 30
    probs = [random_simplex(rng, 3) for _ in range(150)]
    source = seq_dataset(rng.normal(size=(150, 6)), probs=probs, languages=langs)
    targets = seq_dataset(rng.normal(size=(12, 6)), role=Role.TARGET)
    write_dataset(source, tmp_path / "src")
    write_dataset(targets, tmp_path / "tgt")

    plans = {}
    for strategy, extra in [
        ("random", []),
        ("egalitarian", []),
        ("average-dist", ["--target", str(tmp_path / "tgt")]),
        ("uncertainty", []),
        ("knn-uncertainty", ["--target", str(tmp_path / "tgt"), "--k", "7"]),
    ]:
        args = ["select", "--strategy", strategy, "--source", str(tmp_path / "src"),
                "--budget", "20", "--seed", "5",
                "--out", str(tmp_path / strategy)] + extra
        for threads in ("1", "4", "1"):
            monkeypatch.setenv("DEMUX_THREADS", threads)
            assert main(args) == 0
            content = (tmp_path / strategy / "plan.json").read_bytes()
            plans.setdefault(strategy, set()).add(content)
        assert len(plans[strategy]) == 1, strategy

    config = {
        "world": {"n_source_languages": 4, "n_target_languages": 2, "n_classes": 3,
                  "dim": 8, "examples_per_source_language": 25,
                  "target_pool_per_language": 12, "test_per_language": 30,
                  "bootstrap_size": 12, "seed": 7},
        "budgets": [10], "rounds": 1, "k": 5, "probe_epochs": 60,
    }
    (tmp_path / "sim.json").write_text(json.dumps(config))
    sim_args = ["simulate", "--config", str(tmp_path / "sim.json"),
                "--arms", "random,knn-uncertainty", "--seeds", "2",
                "--out", str(tmp_path / "sim_out")]
    outputs = set()
    for threads in ("1", "4"):
        monkeypatch.setenv("DEMUX_THREADS", threads)
        assert main(sim_args) == 0
        outputs.add(((tmp_path / "sim_out" / "results.csv").read_bytes(),
                     (tmp_path / "sim_out" / "summary.json").read_bytes()))
    assert len(outputs) == 1
    report("cli-determinism", True)


def test_same_ratio_ablation_harness():
    """same_ratio_random reproduces reference language counts exactly across
    100 seeds while the chosen sets differ in at least 95 of them."""
    rng = np.random.default_rng(23)
    langs = [f"l{i % 5}" for i in range(1000)]
    probs = [random_simplex(rng, 3) for _ in range(1000)]
    source = seq_dataset(rng.normal(size=(1000, 4)), probs=probs, languages=langs)
    reference = select_egalitarian(source, 100, seed=0)

    distinct = 0
    for seed in range(100):
        plan = same_ratio_random(reference, source, seed=seed)
        assert plan.lang_counts == reference.lang_counts
        if set(plan.chosen) != set(reference.chosen):
            distinct += 1
    report("same-ratio-ablation", distinct >= 95, f"{distinct}/100 distinct")


def test_format_round_trip(tmp_path):
    """write -> read -> write is byte-stable, against the checked-in
    little-endian fixtures and for freshly generated datasets."""
    for name in ("seq_pooled", "qa_pooled"):
        role = Role.TARGET if name == "qa_pooled" else Role.SOURCE
        ds = read_dataset(FIXTURES / name, role=role)
        write_dataset(ds, tmp_path / name)
        for fname in ("manifest.json", "embeddings.dmx", "payload.dmx"):
            assert (tmp_path / name / fname).read_bytes() == \
                (FIXTURES / name / fname).read_bytes(), f"{name}/{fname}"

    raw = read_dataset(FIXTURES / "token_raw")
    assert np.array_equal(raw.examples[0].representation, [1.0, 1.0])
    assert np.array_equal(raw.examples[1].representation, [5.0, 5.0])

    plan = read_plan(FIXTURES / "plan.json")
    write_plan(plan, tmp_path / "plan.json")
    assert (tmp_path / "plan.json").read_bytes() == (FIXTURES / "plan.json").read_bytes()

    rng = np.random.default_rng(3)
    fresh = seq_dataset(rng.normal(size=(5, 3)).astype(np.float32),
                        probs=[random_simplex(rng, 3) for _ in range(5)])
    write_dataset(fresh, tmp_path / "fresh1")
    back = read_dataset(tmp_path / "fresh1")
    write_dataset(back, tmp_path / "fresh2")
    for fname in ("manifest.json", "embeddings.dmx", "payload.dmx"):
        assert (tmp_path / "fresh1" / fname).read_bytes() == \
            (tmp_path / "fresh2" / fname).read_bytes()
    report("format-round-trip", True)


def test_orchestrator_partition_identity():
    """Plans across a loop partition the deduped pool: pairwise disjoint and
    summing to min(B, |dedup(source)|)."""
    rng = np.random.default_rng(41)
    source = _protocol_pool(rng, 80)
    for ex in source.examples[::4]:
        ex.text_hash = source.examples[0].text_hash  # force duplicates
    deduped = len(dedup(source))

    class P:
        def round_datasets(self, r):
            return source, None

        def publish_plan(self, r, plan):
            pass

    cfg = ALConfig(budget=200, rounds=4, strategy=Strategy.RANDOM,
                   task=TaskKind.SEQUENCE_LEVEL, seed=2)
    plans = run_loop(cfg, P())
    chosen = [i for p in plans for i in p.chosen]
    assert len(chosen) == len(set(chosen)) == min(200, deduped)
    report("loop-partition-identity", True)
