"""Command-line entry point: ingest, precompute, endorse, oracle, eval.

Exit codes: 0 on success (including deadline expiry), 2 on validation
errors, 3 on I/O errors. Validation failures print one machine-readable JSON
object to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .dataset import Dataset, DatasetError, ingest_csv, load_schema, write_labels_manifest
from .engine import JsonlSink, RunSummary, run
from .evaluation import combos_to_threshold, compare_strategies, recall_curve
from .measures import EmbeddingTable
from .precompute import (
    CacheError,
    CacheMismatchError,
    PrecomputeCache,
    attach_regscore,
    build_cache,
    load_cache,
    save_cache,
)
from .prioritize import PlanError, build_strategy, surviving_combos
from .task import Task, TaskValidationError, baseline_check, parse_task_json, with_config

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3


def _common_flags(p: argparse.ArgumentParser, *, task_flags: bool = True) -> None:
    p.add_argument("--data", required=True, help="CSV relation")
    p.add_argument("--schema", required=True, help="schema/labels JSON")
    if task_flags:
        p.add_argument("--task", required=True, help="task JSON: {query, claim, config}")
        p.add_argument("--cache", help="precompute cache path (built on the fly when absent)")
        p.add_argument("--embeddings", help="embedding table JSON")
        p.add_argument("--k", type=int, help="top-k size (overrides task config)")
        p.add_argument("--m", type=int, help="max predicate atoms (overrides task config)")
        p.add_argument("--min-group", type=int, dest="min_group", help="minimum subgroup size M")
        p.add_argument("--large-group", type=int, dest="large_group", default=100, help="large-group threshold K")
        p.add_argument("--seed", type=int, default=None, help="seed for randomized strategies")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="claimlens", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a CSV and print a dataset summary")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--labels-out", dest="labels_out", help="write the labels manifest for embedding exporters")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("precompute", help="build the per-dataset score cache")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--large-group", type=int, dest="large_group", default=100)
    p.add_argument("--embeddings")
    p.add_argument("--task", help="optional: also attach regression ranking scores for this task")
    p.add_argument("--out", required=True, help="cache output path")
    p.set_defaults(handler=cmd_precompute)

    p = sub.add_parser("endorse", help="anytime search, streaming JSONL results")
    _common_flags(p)
    p.add_argument("--strategy", default="merged",
                   help="anova|mi|embsim|statsig|coverage|serial|merged|random|sample[:f]|file:<path>")
    p.add_argument("--sample", type=float, default=0.01, help="sample fraction for the sampling strategy")
    p.add_argument("--deadline-ms", type=float, dest="deadline_ms", help="wall-clock budget")
    p.add_argument("--generality", action="store_true", help="filter the final top-k to the most general refinements")
    p.add_argument("--out", help="JSONL output path (default stdout)")
    p.add_argument("--workers", type=int, default=1, help="kernel threads for static plans")
    p.set_defaults(handler=cmd_endorse)

    p = sub.add_parser("oracle", help="exhaustive search dump with per-measure score sums")
    _common_flags(p)
    p.add_argument("--out", help="JSONL output path (default stdout)")
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("eval", help="score-recall report from logs, or live strategy comparison")
    p.add_argument("--log", help="endorse JSONL log")
    p.add_argument("--oracle", help="oracle JSONL dump")
    p.add_argument("--compare", help="comma-separated strategies to run and compare")
    p.add_argument("--seeds", default="0,1,2", help="seeds for randomized strategies in --compare")
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--task")
    p.add_argument("--cache")
    p.add_argument("--embeddings")
    p.add_argument("--out", help="report directory (figures + CSV + JSON)")
    p.set_defaults(handler=cmd_eval)

    return parser


def _load_dataset(args) -> Dataset:
    return ingest_csv(args.data, load_schema(args.schema))


def _load_task(args, dataset: Dataset) -> Task:
    task = parse_task_json(args.task, dataset)
    overrides = {}
    for attr in ("k", "m", "min_group", "seed"):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[attr] = value
    deadline = getattr(args, "deadline_ms", None)
    if deadline is not None:
        overrides["deadline_ms"] = deadline
    return with_config(task, **overrides) if overrides else task


def _load_table(args) -> EmbeddingTable | None:
    path = getattr(args, "embeddings", None)
    if not path:
        return None
    try:
        return EmbeddingTable.load(path)
    except OSError as exc:
        raise DatasetError(f"cannot read embeddings {path}: {exc}") from exc


def _load_or_build_cache(args, dataset: Dataset, task: Task, table) -> PrecomputeCache:
    path = getattr(args, "cache", None)
    if path and Path(path).exists():
        cache = load_cache(path, dataset)
    else:
        print("note: no cache file; building scores on the fly", file=sys.stderr)
        cache = build_cache(dataset, task.config.m, args.large_group, table)
        if path:
            save_cache(cache, path, dataset)
    if cache.m < task.config.m:
        raise CacheMismatchError(f"cache was built with m={cache.m}, task needs m={task.config.m}")
    return cache


def cmd_ingest(args) -> int:
    dataset = _load_dataset(args)
    print(f"rows: {dataset.row_count}")
    print(f"{'attribute':24} {'kind':16} distinct")
    for attr in dataset.attributes:
        marker = ""
        if attr.id == dataset.agg_attr:
            marker = "  [aggregate]"
        elif attr.id == dataset.group_by:
            marker = "  [group-by]"
        elif attr.id in dataset.split_attributes:
            marker = "  [split]"
        print(f"{attr.name:24} {attr.kind:16} {attr.distinct_count}{marker}")
    if args.labels_out:
        write_labels_manifest(dataset, args.labels_out)
        print(f"labels manifest written to {args.labels_out}")
    return EXIT_OK


def cmd_precompute(args) -> int:
    t0 = time.perf_counter()
    dataset = _load_dataset(args)
    table = _load_table(args)
    cache = build_cache(dataset, args.m, args.large_group, table)
    if args.task:
        task = parse_task_json(args.task, dataset)
        attach_regscore(cache, dataset, task)
    save_cache(cache, args.out, dataset)
    print(f"cache: {len(cache.combos)} combinations -> {args.out} ({time.perf_counter() - t0:.2f}s)")
    return EXIT_OK


def _header(dataset: Dataset, task: Task, strategy_name: str, args) -> dict:
    return {
        "format_version": 1,
        "dataset_fingerprint": dataset.fingerprint(),
        "task_fingerprint": task.fingerprint(dataset),
        "strategy": strategy_name,
        "k": task.config.k,
        "m": task.config.m,
        "min_group": task.config.min_group,
        "seed": task.config.seed,
    }


def _summary_record(summary: RunSummary, baseline, task: Task, extras: dict | None = None) -> dict:
    record = {
        "type": "summary",
        "combos_searched": summary.combos_searched,
        "refinements_found": summary.refinements_found,
        "elapsed_ms": summary.elapsed_ms,
        "stop_reason": summary.stop_reason,
        "active_measures": list(summary.active),
        "topk_sums": summary.sums_dict(),
        "baseline": {"v1": baseline.v1, "v2": baseline.v2, "already_holds": baseline.already_holds},
        "defaults": {
            "k": task.config.k,
            "m": task.config.m,
            "min_group": task.config.min_group,
            "seed": task.config.seed,
            "median_test": task.config.median_test,
        },
    }
    if extras:
        record.update(extras)
    return record


def _run_search(args, strategy_name: str, deadline_ms: float | None, generality: bool, workers: int) -> int:
    dataset = _load_dataset(args)
    task = _load_task(args, dataset)
    table = _load_table(args)
    cache = _load_or_build_cache(args, dataset, task, table)
    baseline = baseline_check(task, dataset)
    universe = surviving_combos(cache, task.config.min_group, task.config.m)
    strategy = build_strategy(
        strategy_name, dataset, task, cache, universe, table,
        seed=task.config.seed, sample_fraction=getattr(args, "sample", 0.01),
    )
    out = getattr(args, "out", None)
    sink = JsonlSink(out if out else sys.stdout, dataset, header=_header(dataset, task, strategy_name, args))
    summary = run(
        dataset, task, strategy, sink, cache, table,
        deadline_ms=deadline_ms, generality=generality, workers=workers,
    )
    extras: dict = {}
    if summary.final_topk is not None:
        extras["final_topk_general"] = {
            measure: [
                {"predicate": r.predicate.describe(dataset), "score": score}
                for score, r in entries
            ]
            for measure, entries in summary.final_topk.items()
        }
    sink.write_record(_summary_record(summary, baseline, task, extras))
    sink.close()
    print(
        f"{summary.stop_reason}: {summary.refinements_found} refinements from "
        f"{summary.combos_searched} combinations in {summary.elapsed_ms:.1f} ms "
        f"(baseline v1={baseline.v1:g} v2={baseline.v2:g} already_holds={baseline.already_holds})",
        file=sys.stderr,
    )
    if summary.stop_reason.startswith("sink-error"):
        return EXIT_IO
    return EXIT_OK


def cmd_endorse(args) -> int:
    return _run_search(args, args.strategy, args.deadline_ms, args.generality, args.workers)


def cmd_oracle(args) -> int:
    dataset = _load_dataset(args)
    task = _load_task(args, dataset)
    table = _load_table(args)
    cache = _load_or_build_cache(args, dataset, task, table)
    baseline = baseline_check(task, dataset)
    universe = surviving_combos(cache, task.config.min_group, task.config.m)
    strategy = build_strategy("original", dataset, task, cache, universe, table)
    out = getattr(args, "out", None)
    sink = JsonlSink(out if out else sys.stdout, dataset, header=_header(dataset, task, "original", args))
    summary = run(dataset, task, strategy, sink, cache, table)
    sink.write_record({"type": "s_full", "k": task.config.k, "sums": summary.sums_dict()})
    sink.write_record(_summary_record(summary, baseline, task))
    sink.close()
    print(
        f"exhaustive: {summary.refinements_found} refinements from {summary.combos_searched} combinations",
        file=sys.stderr,
    )
    return EXIT_OK if not summary.stop_reason.startswith("sink-error") else EXIT_IO


def _read_jsonl(path: str) -> tuple[dict, list[dict], dict | None]:
    header: dict = {}
    events: list[dict] = []
    s_full: dict | None = None
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                kind = record.get("type")
                if kind == "header":
                    header = record
                elif kind == "result":
                    events.append(record)
                elif kind == "s_full":
                    s_full = record
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    return header, events, s_full


def cmd_eval(args) -> int:
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    from . import report

    if args.compare:
        for required in ("data", "schema", "task"):
            if not getattr(args, required):
                raise TaskValidationError([{"field": required, "message": "--compare needs --data/--schema/--task"}])
        dataset = _load_dataset(args)
        task = parse_task_json(args.task, dataset)
        table = _load_table(args)
        args.large_group = 100
        cache = _load_or_build_cache(args, dataset, task, table)
        strategies = [s.strip() for s in args.compare.split(",") if s.strip()]
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        rows = compare_strategies(dataset, task, strategies, seeds, cache, table, threshold=args.threshold)
        print(report.render_table(rows))
        if out_dir:
            report.write_compare_csv(rows, out_dir / "compare.csv")
            report.plot_compare(rows, out_dir / "compare.png", args.threshold)
            (out_dir / "compare.json").write_text(
                json.dumps(
                    [
                        {
                            "strategy": r.strategy,
                            "runs": r.runs,
                            "first_result_ms": r.first_result_ms,
                            "time_to_recall": r.time_to_recall,
                            "combos_to_recall": r.combos_to_recall,
                        }
                        for r in rows
                    ],
                    indent=2,
                )
                + "\n",
                encoding="utf-8",
            )
        return EXIT_OK

    if not (args.log and args.oracle):
        raise TaskValidationError([{"field": "eval", "message": "need either --compare or both --log and --oracle"}])
    log_header, log_events, _ = _read_jsonl(args.log)
    oracle_header, _, s_full_rec = _read_jsonl(args.oracle)
    if s_full_rec is None:
        raise TaskValidationError([{"field": "oracle", "message": "oracle file has no s_full record"}])
    for key in ("dataset_fingerprint", "task_fingerprint"):
        if log_header.get(key) != oracle_header.get(key):
            raise TaskValidationError([{"field": key, "message": "log and oracle were produced for different inputs"}])
    k = int(s_full_rec["k"])
    s_full = {m: float(v) for m, v in s_full_rec["sums"].items()}
    curve = recall_curve(log_events, s_full, k)
    lines = [f"{'measure':12} {'final':>8} {'t@%.2f (ms)' % args.threshold:>14}"]
    summary_doc: dict = {"k": k, "threshold": args.threshold, "measures": {}}
    for measure in sorted(s_full):
        final = curve.final(measure)
        t_at = curve.time_to(measure, args.threshold)
        combos = combos_to_threshold(log_events, s_full, k, measure, args.threshold)
        lines.append(f"{measure:12} {final:8.4f} {t_at if t_at is not None else float('nan'):14.1f}")
        summary_doc["measures"][measure] = {
            "final_recall": final,
            "time_to_threshold_ms": t_at,
            "combos_to_threshold": combos,
        }
    print("\n".join(lines))
    if out_dir:
        report.write_recall_csv(curve, out_dir / "recall.csv")
        report.plot_recall_curves(curve, out_dir / "recall.png")
        (out_dir / "recall.json").write_text(json.dumps(summary_doc, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except TaskValidationError as exc:
        print(json.dumps({"error": "validation", "details": exc.errors}), file=sys.stderr)
        return EXIT_VALIDATION
    except (DatasetError, CacheError, PlanError) as exc:
        if isinstance(exc.__cause__, OSError):
            print(json.dumps({"error": "io", "details": [{"message": str(exc)}]}), file=sys.stderr)
            return EXIT_IO
        print(json.dumps({"error": "validation", "details": [{"message": str(exc)}]}), file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(json.dumps({"error": "io", "details": [{"message": str(exc)}]}), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
