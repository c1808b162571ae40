"""Anytime search loop: iterate combinations in plan order, stream results.

One engine instance drives one run. Kernel calls may fan out to a small
thread pool for static plans, but top-k updates and sink emissions happen on
the coordinating thread in plan order, so the emitted stream is deterministic
and each per-measure top-k sum is non-decreasing along it.
"""

from __future__ import annotations

import json
import math
import time
from bisect import insort
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

from .dataset import Dataset
from .kernel import find_predicates
from .measures import EmbeddingTable, MeasureVector, generality_filter, score_refinement
from .precompute import PrecomputeCache
from .prioritize import PriorityPlan, SerialStrategy
from .task import Refinement, Task, active_measures

Combo = tuple[int, ...]
AVERAGE = "average"


class SinkError(Exception):
    pass


@dataclass(frozen=True)
class ResultEvent:
    refinement: Refinement
    scores: MeasureVector
    elapsed_ms: float
    combo_index: int

    def to_record(self, dataset: Dataset) -> dict:
        return {
            "type": "result",
            "predicate": self.refinement.predicate.describe(dataset),
            "agg1": self.refinement.agg1,
            "agg2": self.refinement.agg2,
            "n1": self.refinement.n1,
            "n2": self.refinement.n2,
            "scores": self.scores.as_dict(),
            "elapsed_ms": self.elapsed_ms,
            "combo_index": self.combo_index,
        }


class CollectorSink:
    """In-memory sink for evaluation and tests."""

    def __init__(self) -> None:
        self.events: list[ResultEvent] = []

    def emit(self, event: ResultEvent) -> None:
        self.events.append(event)

    def close(self) -> None:
        pass


class JsonlSink:
    """Streams one JSON object per line; every line parses on its own."""

    def __init__(self, path_or_file, dataset: Dataset, header: dict | None = None):
        self.dataset = dataset
        if hasattr(path_or_file, "write"):
            self._fh = path_or_file
            self._own = False
        else:
            self._fh = open(path_or_file, "w", encoding="utf-8")
            self._own = True
        if header is not None:
            self.write_record({"type": "header", **header})

    def write_record(self, record: dict) -> None:
        try:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()
        except OSError as exc:
            raise SinkError(str(exc)) from exc

    def emit(self, event: ResultEvent) -> None:
        self.write_record(event.to_record(self.dataset))

    def close(self) -> None:
        if self._own:
            self._fh.close()


class TopK:
    """Size-bounded set of the best (score, refinement) pairs.

    Ties break deterministically: higher score, then fewer atoms, then
    lexicographic atoms. ``total`` clamps negative scores to zero so the
    anytime sum statistic never decreases even for measures that can go
    negative (embedding cosines); the entries themselves keep raw scores.
    """

    def __init__(self, k: int):
        self.k = k
        self._items: list[tuple[tuple[float, int, tuple], float, Refinement]] = []

    def offer(self, score: float, refinement: Refinement) -> None:
        key = (-score, refinement.predicate.arity, refinement.predicate.atoms)
        if len(self._items) >= self.k and key >= self._items[-1][0]:
            return
        insort(self._items, (key, score, refinement))
        if len(self._items) > self.k:
            self._items.pop()

    def count(self) -> int:
        return len(self._items)

    def total(self) -> float:
        return math.fsum(max(score, 0.0) for _, score, _ in self._items)

    def entries(self) -> list[tuple[float, Refinement]]:
        return [(score, r) for _, score, r in self._items]


def early_stop_rule(history: Sequence[Mapping[str, float]], c: int, epsilon: float) -> bool:
    """True when none of the last ``c`` combinations improved any tracked
    top-k sum by more than ``epsilon``. Disabled by default in runs."""
    if c < 1 or len(history) < c:
        return False
    for t in range(len(history) - c, len(history)):
        current = history[t]
        previous = history[t - 1] if t > 0 else {}
        for measure, total in current.items():
            if total - previous.get(measure, 0.0) > epsilon:
                return False
    return True


@dataclass
class RunSummary:
    combos_searched: int
    refinements_found: int
    elapsed_ms: float
    stop_reason: str
    active: tuple[str, ...]
    topk: dict[str, list[tuple[float, Refinement]]]
    sums: dict[str, float]
    history: list[dict[str, float]]
    final_topk: dict[str, list[tuple[float, Refinement]]] | None = None

    def sums_dict(self) -> dict[str, float]:
        return dict(self.sums)


def _iter_static(
    plan: PriorityPlan,
    dataset: Dataset,
    task: Task,
    workers: int,
):
    """Yield (combo, result) in plan order, optionally prefetching."""
    combos = list(plan.combos)
    if workers <= 1:
        for combo in combos:
            yield combo, find_predicates(dataset, task, combo)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        window: list = []
        idx = 0
        while idx < len(combos) and len(window) < workers:
            window.append((combos[idx], pool.submit(find_predicates, dataset, task, combos[idx])))
            idx += 1
        while window:
            combo, fut = window.pop(0)
            if idx < len(combos):
                window.append((combos[idx], pool.submit(find_predicates, dataset, task, combos[idx])))
                idx += 1
            yield combo, fut.result()


def run(
    dataset: Dataset,
    task: Task,
    strategy: PriorityPlan | SerialStrategy,
    sink,
    cache: PrecomputeCache,
    table: EmbeddingTable | None = None,
    *,
    clock: Callable[[], float] = time.perf_counter,
    deadline_ms: float | None = None,
    early_stop: tuple[int, float] | None = None,
    generality: bool = False,
    workers: int = 1,
) -> RunSummary:
    """Search combinations in strategy order and stream scored refinements.

    Stops at plan exhaustion, at the deadline (normal termination), or when
    the optional early-stop rule fires. The serial strategy needs per-measure
    feedback, so it always runs single-threaded.
    """
    start = clock()

    def elapsed_ms() -> float:
        return (clock() - start) * 1000.0

    if deadline_ms is None:
        deadline_ms = task.config.deadline_ms
    active = active_measures(task, dataset, table is not None)
    tracked = active + (AVERAGE,)
    topks = {m: TopK(task.config.k) for m in tracked}
    history: list[dict[str, float]] = []
    all_scored: list[tuple[Refinement, MeasureVector]] = [] if generality else None

    combos_searched = 0
    refinements_found = 0
    stop_reason = "completed"

    serial = isinstance(strategy, SerialStrategy)
    if serial:
        def source():
            while True:
                fills = {m: topks[m].count() for m in active}
                combo = strategy.next_combo(fills)
                if combo is None:
                    return
                yield combo, find_predicates(dataset, task, combo)
        stream = source()
    else:
        stream = _iter_static(strategy, dataset, task, workers)

    try:
        while True:
            if deadline_ms is not None and elapsed_ms() >= deadline_ms:
                stop_reason = "deadline"
                break
            try:
                combo, result = next(stream)
            except StopIteration:
                break
            entry = cache.get(combo)
            now = elapsed_ms()
            for refinement in result.refinements:
                refinement = replace(refinement, discovered_at=now)
                vector = score_refinement(refinement, dataset, task, entry.mi, entry.anova, table, active)
                for measure in active:
                    value = vector.get(measure)
                    if value is not None:
                        topks[measure].offer(value, refinement)
                topks[AVERAGE].offer(vector.average, refinement)
                if all_scored is not None:
                    all_scored.append((refinement, vector))
                refinements_found += 1
                try:
                    sink.emit(ResultEvent(refinement, vector, now, combos_searched))
                except Exception as exc:
                    raise SinkError(str(exc)) from exc
            combos_searched += 1
            history.append({m: topks[m].total() for m in tracked})
            if early_stop is not None and early_stop_rule(history, early_stop[0], early_stop[1]):
                stop_reason = "early-stop"
                break
    except SinkError as exc:
        stop_reason = f"sink-error: {exc}"
    finally:
        if hasattr(stream, "close"):
            stream.close()

    summary = RunSummary(
        combos_searched=combos_searched,
        refinements_found=refinements_found,
        elapsed_ms=elapsed_ms(),
        stop_reason=stop_reason,
        active=active,
        topk={m: topks[m].entries() for m in tracked},
        sums={m: topks[m].total() for m in tracked},
        history=history,
    )
    if generality and all_scored is not None:
        summary.final_topk = apply_generality(all_scored, task.config.k, tracked)
    return summary


def apply_generality(
    scored: Sequence[tuple[Refinement, MeasureVector]],
    k: int,
    measures: Sequence[str],
) -> dict[str, list[tuple[float, Refinement]]]:
    """Top-k per measure over only the most general refinements."""
    survivors = generality_filter([r for r, _ in scored])
    keep = {id(r) for r in survivors}
    out: dict[str, list[tuple[float, Refinement]]] = {}
    for measure in measures:
        top = TopK(k)
        for refinement, vector in scored:
            if id(refinement) not in keep:
                continue
            value = vector.average if measure == AVERAGE else vector.get(measure)
            if value is not None:
                top.offer(value, refinement)
        out[measure] = top.entries()
    return out
