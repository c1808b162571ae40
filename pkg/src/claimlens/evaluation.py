"""Evaluation harness: exhaustive baselines, score recall over time, and
strategy comparisons.

Score recall of a partial run is the ratio of its per-measure top-k score sum
to the exhaustive run's sum. Curves are replayed from event streams, so they
are exact step functions; the clock is injected everywhere, which lets tests
run on virtual time.
"""

from __future__ import annotations

import math
import time
from bisect import insort
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .dataset import Dataset
from .engine import AVERAGE, CollectorSink, ResultEvent, RunSummary, run
from .measures import EmbeddingTable
from .precompute import PrecomputeCache
from .prioritize import PriorityPlan, build_strategy, surviving_combos
from .task import Task


@dataclass(frozen=True)
class ReplayEvent:
    """Just enough of a result event to replay top-k sums."""

    elapsed_ms: float
    combo_index: int
    scores: dict[str, float | None]
    arity: int
    atoms_key: tuple

    @classmethod
    def from_event(cls, event: ResultEvent) -> "ReplayEvent":
        return cls(
            elapsed_ms=event.elapsed_ms,
            combo_index=event.combo_index,
            scores=event.scores.as_dict(),
            arity=event.refinement.predicate.arity,
            atoms_key=event.refinement.predicate.atoms,
        )

    @classmethod
    def from_record(cls, record: dict) -> "ReplayEvent":
        atoms = tuple(sorted((a, v) for a, v in record["predicate"]))
        return cls(
            elapsed_ms=float(record["elapsed_ms"]),
            combo_index=int(record.get("combo_index", 0)),
            scores=dict(record["scores"]),
            arity=len(atoms),
            atoms_key=atoms,
        )


class _ReplayTopK:
    def __init__(self, k: int):
        self.k = k
        self._keys: list[tuple] = []

    def offer(self, score: float, event: ReplayEvent) -> None:
        key = (-score, event.arity, event.atoms_key)
        if len(self._keys) >= self.k and key >= self._keys[-1]:
            return
        insort(self._keys, key)
        if len(self._keys) > self.k:
            self._keys.pop()

    def total(self) -> float:
        return math.fsum(max(-key[0], 0.0) for key in self._keys)


@dataclass
class RecallCurve:
    """Per-measure step functions of score recall against elapsed time."""

    points: dict[str, list[tuple[float, float]]]
    s_full: dict[str, float]
    k: int

    def final(self, measure: str) -> float:
        pts = self.points.get(measure, [])
        return pts[-1][1] if pts else (1.0 if self.s_full.get(measure, 0.0) == 0.0 else 0.0)

    def time_to(self, measure: str, threshold: float) -> float | None:
        if self.s_full.get(measure, 0.0) == 0.0:
            return 0.0
        for elapsed, recall in self.points.get(measure, []):
            if recall >= threshold:
                return elapsed
        return None


def _as_replay_events(events: Iterable) -> list[ReplayEvent]:
    out = []
    for e in events:
        if isinstance(e, ReplayEvent):
            out.append(e)
        elif isinstance(e, ResultEvent):
            out.append(ReplayEvent.from_event(e))
        else:
            out.append(ReplayEvent.from_record(e))
    return out


def exhaustive(
    dataset: Dataset,
    task: Task,
    cache: PrecomputeCache,
    table: EmbeddingTable | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> tuple[RunSummary, list[ResultEvent]]:
    """Complete unprioritized run; its top-k sums are the recall denominators."""
    universe = surviving_combos(cache, task.config.min_group, task.config.m)
    plan = PriorityPlan(tuple(universe), strategy="original")
    sink = CollectorSink()
    summary = run(dataset, task, plan, sink, cache, table, clock=clock)
    return summary, sink.events


def recall_curve(events: Iterable, s_full: Mapping[str, float], k: int) -> RecallCurve:
    """Replay an event stream into per-measure recall step curves.

    A measure with zero exhaustive sum is vacuously complete: its curve is
    pinned at recall 1.0.
    """
    replay = _as_replay_events(events)
    measures = list(s_full)
    points: dict[str, list[tuple[float, float]]] = {m: [] for m in measures}
    tops: dict[str, _ReplayTopK] = {m: _ReplayTopK(k) for m in measures}
    for m in measures:
        if s_full[m] == 0.0:
            points[m].append((0.0, 1.0))
    for event in replay:
        for m in measures:
            if s_full[m] == 0.0:
                continue
            value = event.scores.get(m)
            if value is None:
                continue
            before = tops[m].total()
            tops[m].offer(value, event)
            after = tops[m].total()
            if after != before:
                points[m].append((event.elapsed_ms, after / s_full[m]))
    return RecallCurve(points=points, s_full=dict(s_full), k=k)


def combos_to_threshold(
    events: Iterable,
    s_full: Mapping[str, float],
    k: int,
    measure: str = AVERAGE,
    threshold: float = 0.95,
) -> int | None:
    """Combinations searched when the measure's recall first reaches the bar."""
    if s_full.get(measure, 0.0) == 0.0:
        return 0
    replay = _as_replay_events(events)
    top = _ReplayTopK(k)
    for event in replay:
        value = event.scores.get(measure)
        if value is None:
            continue
        top.offer(value, event)
        if top.total() / s_full[measure] >= threshold:
            return event.combo_index + 1
    return None


@dataclass
class StrategyRow:
    strategy: str
    runs: int
    first_result_ms: float | None
    time_to_recall: dict[str, float | None]
    combos_to_recall: dict[str, float | None]


def _mean_or_none(values: list[float | None]) -> float | None:
    if any(v is None for v in values) or not values:
        return None
    return math.fsum(values) / len(values)


def compare_strategies(
    dataset: Dataset,
    task: Task,
    strategies: Sequence[str],
    seeds: Sequence[int],
    cache: PrecomputeCache,
    table: EmbeddingTable | None = None,
    threshold: float = 0.95,
    clock: Callable[[], float] = time.perf_counter,
) -> list[StrategyRow]:
    """Time (and combinations searched) to the recall threshold per strategy.

    Randomized strategies run once per seed and report the mean; the others
    run once. Rows are deterministic given the seeds and the clock.
    """
    summary, _ = exhaustive(dataset, task, cache, table, clock=clock)
    s_full = summary.sums_dict()
    universe = surviving_combos(cache, task.config.min_group, task.config.m)

    rows = []
    for name in strategies:
        seeded = name == "random" or name.startswith("sample")
        run_seeds = list(seeds) if seeded else [task.config.seed]
        firsts: list[float | None] = []
        times: dict[str, list[float | None]] = {m: [] for m in s_full}
        combos: dict[str, list[float | None]] = {m: [] for m in s_full}
        for seed in run_seeds:
            strategy = build_strategy(name, dataset, task, cache, universe, table, seed=seed)
            sink = CollectorSink()
            run(dataset, task, strategy, sink, cache, table, clock=clock)
            curve = recall_curve(sink.events, s_full, task.config.k)
            firsts.append(sink.events[0].elapsed_ms if sink.events else None)
            for m in s_full:
                times[m].append(curve.time_to(m, threshold))
                c = combos_to_threshold(sink.events, s_full, task.config.k, m, threshold)
                combos[m].append(None if c is None else float(c))
        rows.append(
            StrategyRow(
                strategy=name,
                runs=len(run_seeds),
                first_result_ms=_mean_or_none(firsts),
                time_to_recall={m: _mean_or_none(times[m]) for m in s_full},
                combos_to_recall={m: _mean_or_none(combos[m]) for m in s_full},
            )
        )
    return rows
