"""Operator command line: validate datasets, run selections, run the
simulator, and compute the neighborhood-uncertainty correlation.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 internal error. Identical flags and seed always produce byte-identical
output artifacts; DEMUX_THREADS only changes how fast they appear.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ._parallel import thread_count
from .core import Role, TaskKind
from .dataset_io import (
    VALIDATION_STAGES,
    read_dataset,
    read_plan,
    write_plan,
    write_tensor,
)
from .errors import DemuxError, ParseError
from .orchestrator import ALConfig, DirectoryProvider, RoundState, run_loop, run_round
from .selection import Strategy
from .simulate import (
    ResultTable,
    SimTask,
    neighborhood_uncertainty_correlation,
    run_experiment,
    write_results,
)
from .uncertainty import Scorer, default_scorer

NEEDS_TARGET = (Strategy.AVERAGE_DIST, Strategy.KNN_UNCERTAINTY)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _strategy(name: str) -> Strategy:
    try:
        return Strategy(name)
    except ValueError:
        valid = ", ".join(s.value for s in Strategy)
        raise UsageError(f"unknown strategy {name!r}; valid strategies: {valid}") from None


def _scorer(name: str) -> Scorer:
    try:
        return Scorer(name)
    except ValueError:
        valid = ", ".join(s.value for s in Scorer)
        raise UsageError(f"unknown scorer {name!r}; valid scorers: {valid}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="demux",
        description="Budget-constrained data selection for multilingual annotation.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p_val = sub.add_parser(
        "validate", help="check a dataset directory against every format invariant",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_val.add_argument("--dataset", metavar="DIR", required=True, help="dataset directory (str)")
    p_val.set_defaults(func=cmd_validate)

    p_sel = sub.add_parser(
        "select", help="run a selection strategy and write plan files",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_sel.add_argument("--strategy", metavar="NAME", required=True,
                       help="one of: " + ", ".join(s.value for s in Strategy) + " (str)")
    p_sel.add_argument("--task", metavar="NAME", default=None,
                       help="expected task kind; checked against the manifest (str)")
    p_sel.add_argument("--source", metavar="DIR", default=None,
                       help="source pool directory; required when --rounds is 1 (str)")
    p_sel.add_argument("--target", metavar="DIR", default=None,
                       help="target pool directory; required for distance-based strategies (str)")
    p_sel.add_argument("--budget", metavar="INT", type=int, required=True,
                       help="total number of examples to select (int)")
    p_sel.add_argument("--rounds", metavar="INT", type=int, default=1,
                       help="acquisition rounds; >1 uses the round_N handshake under --out (int)")
    p_sel.add_argument("--k", metavar="INT", type=int, default=None,
                       help="neighborhood size, knn-uncertainty only (int)")
    p_sel.add_argument("--scorer", metavar="NAME", default=None,
                       help="uncertainty scorer; defaults by task (str)")
    p_sel.add_argument("--seed", metavar="INT", type=int, default=0,
                       help="sampling seed recorded in every plan (int)")
    p_sel.add_argument("--out", metavar="DIR", required=True,
                       help="output directory for plan files (str)")
    p_sel.add_argument("--reference", metavar="FILE", action="append", default=None,
                       help="reference plan for same-ratio; repeat once per round (str)")
    p_sel.add_argument("--timeout", metavar="SEC", type=float, default=60.0,
                       help="handshake wait per round when --rounds > 1 (float)")
    p_sel.set_defaults(func=cmd_select)

    p_sim = sub.add_parser(
        "simulate", help="run strategy arms on synthetic worlds and emit results",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_sim.add_argument("--config", metavar="FILE", required=True,
                       help="JSON simulation config (str)")
    p_sim.add_argument("--arms", metavar="LIST", required=True,
                       help="comma-separated strategy names (str)")
    p_sim.add_argument("--seeds", metavar="INT", type=int, required=True,
                       help="number of simulation seeds (int)")
    p_sim.add_argument("--out", metavar="DIR", required=True,
                       help="directory for results.csv and summary.json (str)")
    p_sim.set_defaults(func=cmd_simulate)

    p_cor = sub.add_parser(
        "correlate", help="correlation between target uncertainty and its source neighborhood",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_cor.add_argument("--source", metavar="DIR", required=True, help="source pool directory (str)")
    p_cor.add_argument("--target", metavar="DIR", required=True, help="target pool directory (str)")
    p_cor.add_argument("--k", metavar="INT", type=int, required=True,
                       help="neighborhood size (int)")
    p_cor.add_argument("--scorer", metavar="NAME", default=None,
                       help="uncertainty scorer; defaults by task (str)")
    p_cor.set_defaults(func=cmd_correlate)

    p_exp = sub.add_parser(
        "export", help="write a dataset's pooled representations as one DMX tensor",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_exp.add_argument("--dataset", metavar="DIR", required=True, help="dataset directory (str)")
    p_exp.add_argument("--out", metavar="FILE", required=True, help="output tensor file (str)")
    p_exp.set_defaults(func=cmd_export)

    return parser


def cmd_validate(args) -> int:
    report: list[str] = []
    try:
        ds = read_dataset(Path(args.dataset), _report=report)
    except DemuxError as exc:
        for stage in report:
            print(f"PASS {stage}")
        failing = VALIDATION_STAGES[len(report)] if len(report) < len(VALIDATION_STAGES) else "?"
        print(f"FAIL {failing}: {exc}")
        return 2
    for stage in VALIDATION_STAGES:
        print(f"PASS {stage}")
    print(f"OK: {len(ds)} examples")
    return 0


def _check_select_flags(args, strategy: Strategy) -> None:
    if args.k is not None and strategy is not Strategy.KNN_UNCERTAINTY:
        raise UsageError("--k is only valid with --strategy knn-uncertainty")
    if strategy is Strategy.KNN_UNCERTAINTY and args.k is None:
        raise UsageError("--strategy knn-uncertainty requires --k")
    if strategy is Strategy.SAME_RATIO and not args.reference:
        raise UsageError("--strategy same-ratio requires --reference")
    if args.reference and strategy is not Strategy.SAME_RATIO:
        raise UsageError("--reference is only valid with --strategy same-ratio")
    if args.rounds == 1:
        if not args.source:
            raise UsageError("--source is required when --rounds is 1")
        if strategy in NEEDS_TARGET and not args.target:
            raise UsageError(f"--strategy {strategy.value} requires --target")
    else:
        if args.source or args.target:
            raise UsageError(
                "--rounds > 1 reads datasets via the round_N handshake under --out; "
                "drop --source/--target"
            )
    if strategy is Strategy.SAME_RATIO and args.reference is not None \
            and len(args.reference) != args.rounds:
        raise UsageError("same-ratio needs exactly one --reference per round")


def cmd_select(args) -> int:
    strategy = _strategy(args.strategy)
    scorer = _scorer(args.scorer) if args.scorer else None
    _check_select_flags(args, strategy)
    references = None
    if args.reference:
        references = tuple(read_plan(Path(p)) for p in args.reference)
    out = Path(args.out)

    if args.rounds == 1:
        source = read_dataset(Path(args.source), Role.SOURCE)
        _check_task(args.task, source.task)
        targets = read_dataset(Path(args.target), Role.TARGET) if args.target else None
        cfg = _build_config(args, strategy, scorer, source.task, references)
        plan, _ = run_round(cfg, source, targets, RoundState())
        out.mkdir(parents=True, exist_ok=True)
        plan_path = out / "plan.json"
        write_plan(plan, plan_path)
        print(f"wrote {plan_path} ({len(plan.chosen)} examples)")
        return 0

    provider = DirectoryProvider(out, timeout=args.timeout)
    first_source, _ = provider.round_datasets(1)
    _check_task(args.task, first_source.task)
    cfg = _build_config(args, strategy, scorer, first_source.task, references)
    plans = run_loop(cfg, provider)
    for plan in plans:
        print(f"wrote {provider.round_dir(plan.round) / 'plan.json'} "
              f"({len(plan.chosen)} examples)")
    return 0


def _check_task(flag_value: str | None, actual: TaskKind) -> None:
    if flag_value is None:
        return
    try:
        expected = TaskKind(flag_value)
    except ValueError:
        valid = ", ".join(t.value for t in TaskKind)
        raise UsageError(f"unknown task {flag_value!r}; valid tasks: {valid}") from None
    if expected is not actual:
        raise DemuxError(f"dataset task is {actual.value!r}, --task says {expected.value!r}")


def _build_config(args, strategy, scorer, task, references) -> ALConfig:
    return ALConfig(
        budget=args.budget,
        rounds=args.rounds,
        strategy=strategy,
        task=task,
        seed=args.seed,
        k=args.k,
        scorer=scorer,
        reference_plans=references,
    )


def cmd_simulate(args) -> int:
    arms = [_strategy(name.strip()) for name in args.arms.split(",") if name.strip()]
    if not arms:
        raise UsageError("--arms is empty")
    config_path = Path(args.config)
    if not config_path.exists():
        raise ParseError(f"missing config file {config_path}")
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{config_path.name}: {exc}") from exc
    try:
        world = SimTask(**config.get("world", {}))
    except TypeError as exc:
        raise ParseError(f"bad world config: {exc}") from exc

    budgets = config.get("budgets", [100])
    if isinstance(budgets, (int, float)):
        budgets = [budgets]
    scorer = _scorer(config["scorer"]) if "scorer" in config else None
    rows = []
    for budget in budgets:
        cfg = ALConfig(
            budget=int(budget),
            rounds=int(config.get("rounds", 1)),
            strategy=Strategy.RANDOM,
            task=TaskKind.SEQUENCE_LEVEL,
            seed=int(config.get("seed", 0)),
            k=int(config["k"]) if "k" in config else 10,
            scorer=scorer,
        )
        table = run_experiment(
            world, cfg, arms, args.seeds,
            probe_epochs=int(config.get("probe_epochs", 300)),
            probe_lr=float(config.get("probe_lr", 0.05)),
        )
        rows.extend(table.rows)
    write_results(ResultTable(rows), Path(args.out))
    print(f"wrote {Path(args.out) / 'results.csv'} ({len(rows)} rows)")
    return 0


def cmd_correlate(args) -> int:
    source = read_dataset(Path(args.source), Role.SOURCE)
    targets = read_dataset(Path(args.target), Role.TARGET)
    scorer = _scorer(args.scorer) if args.scorer else default_scorer(source.task)
    rho = neighborhood_uncertainty_correlation(source, targets, args.k, scorer)
    print(f"rho={rho:.6f} n={len(targets)}")
    return 0


def cmd_export(args) -> int:
    ds = read_dataset(Path(args.dataset))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(out, ds.matrix())
    print(f"wrote {out} ({len(ds)} x {ds.dim})")
    return 0


def main(argv=None) -> int:
    try:
        thread_count()  # fail fast on a bad DEMUX_THREADS value
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        code = exc.code if exc.code is not None else 0
        return int(code)
    except DemuxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
