"""Orderings over attribute combinations that surface good refinements early.

Every strategy yields a permutation of the surviving combinations: single
measure rankings read the precompute cache, `merged` interleaves them,
`serial` walks them one ranking at a time with feedback from the engine, and
`sampling` ranks by a brute-force search over a row sample. Order never
changes which refinements exist, only how soon the good ones appear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .kernel import find_predicates
from .measures import EmbeddingTable, score_refinement
from .precompute import PrecomputeCache, regscore_for
from .task import Task, active_measures, with_config

Combo = tuple[int, ...]

# fixed order for combining rankings: most accurately precomputed first
SERIAL_MEASURE_ORDER = ("anova", "mi", "embsim", "statsig", "coverage")


class PlanError(Exception):
    pass


@dataclass(frozen=True)
class PriorityPlan:
    combos: tuple[Combo, ...]
    strategy: str
    provenance: tuple[str, ...] = ()

    def check_permutation(self, universe: Sequence[Combo]) -> None:
        if sorted(self.combos) != sorted(tuple(c) for c in universe):
            raise PlanError(f"plan '{self.strategy}' is not a permutation of the combination universe")


def surviving_combos(cache: PrecomputeCache, min_group: int, max_arity: int | None = None) -> list[Combo]:
    """Cache combos whose largest group can satisfy the size threshold.

    ``max_arity`` restricts to smaller combinations when the cache was built
    with a larger ``m`` than the task asks for.
    """
    return [
        c
        for c, s in zip(cache.combos, cache.scores)
        if s.max_group_size >= min_group and (max_arity is None or len(c) <= max_arity)
    ]


def rank_single(
    measure: str,
    universe: Sequence[Combo],
    cache: PrecomputeCache,
    dataset: Dataset,
    task: Task,
    table: EmbeddingTable | None = None,
) -> PriorityPlan:
    """Descending order by the measure's cached score or heuristic.

    ANOVA and MI use their exact normalized values, embedding similarity its
    attribute-label variant, coverage the count of large value groups, and
    statistical significance the summed regression scores. Ties break by
    combination order.
    """
    if measure in ("anova", "mi", "coverage"):
        def score(combo: Combo) -> float:
            entry = cache.get(combo)
            if measure == "anova":
                if entry.anova is None:
                    raise PlanError("measure 'anova' has no precomputed value (non-numeric target)")
                return entry.anova
            if measure == "mi":
                return entry.mi
            return float(entry.large_value_count)

    elif measure == "embsim":
        if not cache.has_embeddings():
            raise PlanError("measure 'embsim' has no heuristic: cache was built without an embedding table")

        def score(combo: Combo) -> float:
            v = cache.get(combo).embsim_simple
            return v if v is not None else -math.inf

    elif measure == "statsig":
        reg = regscore_for(cache, dataset, task)

        def score(combo: Combo) -> float:
            return math.fsum(reg[a] for a in combo)

    else:
        raise PlanError(f"measure {measure!r} has no prioritization")

    ordered = sorted((tuple(c) for c in universe), key=lambda c: (-score(c), c))
    return PriorityPlan(tuple(ordered), strategy=measure, provenance=(measure,))


def combine_merged(plans: Sequence[PriorityPlan]) -> PriorityPlan:
    """Round-robin interleave: first element of each plan, then second, ..."""
    if not plans:
        raise PlanError("merged strategy needs at least one plan")
    seen: set[Combo] = set()
    out: list[Combo] = []
    longest = max(len(p.combos) for p in plans)
    for i in range(longest):
        for plan in plans:
            if i < len(plan.combos) and plan.combos[i] not in seen:
                seen.add(plan.combos[i])
                out.append(plan.combos[i])
    return PriorityPlan(tuple(out), strategy="merged", provenance=tuple(p.strategy for p in plans))


class SerialStrategy:
    """Consume one ranking at a time, advancing once its measure holds k results.

    The engine reports per-measure top-k fill counts after each combination;
    while the current ranking's measure has fewer than k results, the next
    unsearched combination comes from that ranking. Exhausted or satisfied
    rankings hand over to the next one, and after the last the remaining
    combinations follow in their original enumeration order.
    """

    strategy = "serial"

    def __init__(self, plans: Sequence[PriorityPlan], k: int, universe: Sequence[Combo]):
        self._queues = [list(p.combos) for p in plans]
        self._measures = [p.strategy for p in plans]
        self._k = k
        self._universe = [tuple(c) for c in universe]
        self._phase = 0
        self._tail = 0
        self._emitted: set[Combo] = set()
        self.provenance = tuple(self._measures)

    def next_combo(self, fill_counts: Mapping[str, int]) -> Combo | None:
        while self._phase < len(self._queues):
            if fill_counts.get(self._measures[self._phase], 0) >= self._k:
                self._phase += 1
                continue
            queue = self._queues[self._phase]
            while queue:
                combo = queue.pop(0)
                if combo not in self._emitted:
                    self._emitted.add(combo)
                    return combo
            self._phase += 1
        while self._tail < len(self._universe):
            combo = self._universe[self._tail]
            self._tail += 1
            if combo not in self._emitted:
                self._emitted.add(combo)
                return combo
        return None


def combine_serial(plans: Sequence[PriorityPlan], k: int, universe: Sequence[Combo]) -> SerialStrategy:
    if not plans:
        raise PlanError("serial strategy needs at least one plan")
    return SerialStrategy(plans, k, universe)


def rank_random(universe: Sequence[Combo], seed: int) -> PriorityPlan:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(universe))
    combos = tuple(tuple(universe[i]) for i in order)
    return PriorityPlan(combos, strategy="random", provenance=(f"seed={seed}",))


def rank_by_sampling(
    dataset: Dataset,
    task: Task,
    sample_fraction: float,
    seed: int,
    cache: PrecomputeCache,
    universe: Sequence[Combo],
    table: EmbeddingTable | None = None,
) -> PriorityPlan:
    """Rank by the best average naturalness found in a row-sample search.

    Runs the full combination search over a seeded without-replacement sample
    (the size threshold scales with the fraction), scoring sample refinements
    with sample statistics for the predicate-level measures and cached values
    for the attribute-level ones. Combinations without sample refinements
    follow the ranked ones in enumeration order; if the sample misses one of
    the claim groups the plan falls back to the enumeration order entirely.
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise PlanError("sample fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    size = max(1, int(round(sample_fraction * dataset.row_count)))
    indices = np.sort(rng.choice(dataset.row_count, size=size, replace=False))
    sample = dataset.take(indices)

    gb = sample.columns[task.query.group_by]
    if not (np.any(gb == task.claim.g1) and np.any(gb == task.claim.g2)):
        return PriorityPlan(
            tuple(tuple(c) for c in universe),
            strategy="sampling",
            provenance=(f"seed={seed}", "fallback: sample missed a claim group"),
        )

    min_group = max(1, math.ceil(task.config.min_group * sample_fraction))
    sample_task = with_config(task, min_group=min_group)
    active = active_measures(task, dataset, table is not None)
    priorities: dict[Combo, float] = {}
    for combo in universe:
        combo = tuple(combo)
        entry = cache.get(combo)
        result = find_predicates(sample, sample_task, combo)
        best = None
        for r in result.refinements:
            mv = score_refinement(r, sample, sample_task, entry.mi, entry.anova, table, active)
            if best is None or mv.average > best:
                best = mv.average
        if best is not None:
            priorities[combo] = best

    ranked = sorted(priorities, key=lambda c: (-priorities[c], c))
    rest = [tuple(c) for c in universe if tuple(c) not in priorities]
    return PriorityPlan(
        tuple(ranked + rest),
        strategy="sampling",
        provenance=(f"seed={seed}", f"fraction={sample_fraction}", f"sample_rows={size}"),
    )


def plan_from_file(path: str | Path, universe: Sequence[Combo], dataset: Dataset) -> PriorityPlan:
    """User-supplied combination order: a JSON list of attribute-name lists.

    Listed combinations lead in file order; anything not listed follows in
    enumeration order.
    """
    import json

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    name_to_id = {a.name: a.id for a in dataset.attributes}
    universe_set = {tuple(c) for c in universe}
    listed: list[Combo] = []
    seen: set[Combo] = set()
    for names in doc:
        try:
            combo = tuple(sorted(name_to_id[n] for n in names))
        except KeyError as exc:
            raise PlanError(f"unknown attribute {exc.args[0]!r} in plan file")
        if combo not in universe_set:
            raise PlanError(f"combination {names} is not in the searchable universe")
        if combo in seen:
            raise PlanError(f"combination {names} listed twice")
        seen.add(combo)
        listed.append(combo)
    rest = [tuple(c) for c in universe if tuple(c) not in seen]
    return PriorityPlan(tuple(listed + rest), strategy="file", provenance=(str(path),))


def build_strategy(
    name: str,
    dataset: Dataset,
    task: Task,
    cache: PrecomputeCache,
    universe: Sequence[Combo],
    table: EmbeddingTable | None = None,
    seed: int = 0,
    sample_fraction: float = 0.01,
) -> PriorityPlan | SerialStrategy:
    """Instantiate a strategy by CLI name.

    Known names: single measures (``anova``, ``mi``, ``embsim``, ``statsig``,
    ``coverage``), ``serial``, ``merged``, ``random``, ``original``
    (enumeration order), ``sample`` / ``sample:<fraction>``, and
    ``file:<path>`` for a user-supplied order.
    """
    if name in SERIAL_MEASURE_ORDER:
        return rank_single(name, universe, cache, dataset, task, table)
    if name in ("serial", "merged"):
        wanted = active_measures(task, dataset, table is not None)
        plans = single_measure_plans(wanted, universe, cache, dataset, task, table)
        if name == "serial":
            return combine_serial(plans, task.config.k, universe)
        return combine_merged(plans)
    if name == "random":
        return rank_random(universe, seed)
    if name == "original":
        return PriorityPlan(tuple(tuple(c) for c in universe), strategy="original")
    if name == "sample" or name.startswith("sample:"):
        fraction = sample_fraction
        if ":" in name:
            try:
                fraction = float(name.split(":", 1)[1])
            except ValueError:
                raise PlanError(f"bad sample fraction in strategy {name!r}")
        return rank_by_sampling(dataset, task, fraction, seed, cache, universe, table)
    if name.startswith("file:"):
        return plan_from_file(name.split(":", 1)[1], universe, dataset)
    raise PlanError(f"unknown strategy {name!r}")


def single_measure_plans(
    measures: Sequence[str],
    universe: Sequence[Combo],
    cache: PrecomputeCache,
    dataset: Dataset,
    task: Task,
    table: EmbeddingTable | None,
) -> list[PriorityPlan]:
    """Rankings for the requested measures, in the fixed combination order."""
    plans = []
    for measure in SERIAL_MEASURE_ORDER:
        if measure in measures:
            plans.append(rank_single(measure, universe, cache, dataset, task, table))
    return plans
