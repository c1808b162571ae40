"""Search kernel: all endorsing value assignments for one attribute combination.

`find_predicates` does the grouped single-pass search (one pass per attribute
combination, every value assignment at once); `find_predicates_predicate_level`
iterates value combinations one at a time and exists as a differential-testing
oracle and for speed comparisons. Both return identical refinement sets.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset, combo_keys, split_key
from .task import AggFn, Predicate, Refinement, RefinementStats, Task, filter_mask


@dataclass(frozen=True)
class ComboResult:
    combo: tuple[int, ...]
    refinements: list[Refinement]
    scan_time: float


def max_group_size(dataset: Dataset, combo: tuple[int, ...]) -> int:
    keys = combo_keys(dataset, combo)
    _, counts = np.unique(keys, return_counts=True)
    return int(counts.max()) if counts.size else 0


def enumerate_combos(dataset: Dataset, m: int, min_group: int = 1) -> list[tuple[int, ...]]:
    """All split-attribute subsets of size 1..m, pruned and in a fixed order.

    Prunes attributes with a single distinct value (grouping by them is a
    no-op) and combinations whose largest group is smaller than ``min_group``
    (no subgroup could reach the size threshold). Order is size-major, then
    lexicographic by attribute id.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    usable = [a for a in sorted(dataset.split_attributes) if dataset.attributes[a].distinct_count >= 2]
    combos: list[tuple[int, ...]] = []
    for size in range(1, m + 1):
        for combo in itertools.combinations(usable, size):
            if min_group > 1 and max_group_size(dataset, combo) < min_group:
                continue
            combos.append(combo)
    return combos


def _median_sorted(seg: np.ndarray) -> float:
    n = seg.size
    mid = n // 2
    if n % 2:
        return float(seg[mid])
    return float((seg[mid - 1] + seg[mid]) / 2.0)


def _above_counts(seg: np.ndarray, reference: float) -> tuple[int, int]:
    """(strictly above, at-or-below) counts within a sorted segment."""
    at_or_below = int(np.searchsorted(seg, reference, side="right"))
    return seg.size - at_or_below, at_or_below


# Above this many possible key combinations, grouping falls back from dense
# bincount arrays to sort-based unique keys (caps transient memory).
_DENSE_KEY_LIMIT = 1 << 20


def find_predicates(dataset: Dataset, task: Task, combo: tuple[int, ...]) -> ComboResult:
    """Grouped single pass over the combo's value assignments.

    Groups the base-filtered rows of the two claim groups by the combo's
    codes, computes both subgroup aggregates plus whatever auxiliary
    statistics the active measures need, and emits a refinement for every
    group where the first group's aggregate strictly exceeds the second's and
    both subgroups reach the minimum size.
    """
    t0 = time.perf_counter()
    q = task.query
    fn = q.agg_fn
    min_group = task.config.min_group

    gb = dataset.columns[q.group_by]
    base = filter_mask(dataset, q.base_filter) if q.base_filter else None
    g2_side = gb == task.claim.g2
    sub = (gb == task.claim.g1) | g2_side
    if base is not None:
        sub &= base
    if fn is not AggFn.COUNT:
        sub &= ~np.isnan(dataset.agg_values)

    keys_all = combo_keys(dataset, combo)
    key_space = 1
    for a in combo:
        key_space *= len(dataset.attributes[a].values)

    refinements: list[Refinement] = []
    keys_sub = keys_all[sub]
    if keys_sub.size == 0:
        return ComboResult(combo, refinements, time.perf_counter() - t0)

    if key_space <= min(_DENSE_KEY_LIMIT, max(65536, 8 * dataset.row_count)):
        # dense path: codes index count arrays directly, no sorting needed
        cov_counts = np.bincount(keys_all if base is None else keys_all[base], minlength=key_space)
        side = g2_side[sub]
        n1 = np.bincount(keys_sub[~side], minlength=key_space)
        n2 = np.bincount(keys_sub[side], minlength=key_space)
        candidates = np.nonzero((n1 >= min_group) & (n2 >= min_group))[0]
        if candidates.size == 0:
            return ComboResult(combo, refinements, time.perf_counter() - t0)
        key_of = {int(k): int(k) for k in candidates}
        subkey = keys_sub * 2 + side
        n_slots = 2 * key_space
        counts = np.empty(n_slots, dtype=n1.dtype)
        counts[0::2] = n1
        counts[1::2] = n2
    else:
        uniq, inv = np.unique(keys_sub, return_inverse=True)
        cov_keys, cov_all = np.unique(keys_all if base is None else keys_all[base], return_counts=True)
        cov_counts = cov_all[np.searchsorted(cov_keys, uniq)]
        side = g2_side[sub]
        subkey = inv * 2 + side
        counts = np.bincount(subkey, minlength=2 * uniq.size)
        n1 = counts[0::2]
        n2 = counts[1::2]
        candidates = np.nonzero((n1 >= min_group) & (n2 >= min_group))[0]
        if candidates.size == 0:
            return ComboResult(combo, refinements, time.perf_counter() - t0)
        key_of = {int(g): int(uniq[g]) for g in candidates}
        n_slots = 2 * uniq.size

    sums = means = ss = extrema = v_sorted = sk_sorted = None
    if fn in (AggFn.SUM, AggFn.AVERAGE):
        vals = dataset.agg_values[sub]
        sums = np.bincount(subkey, weights=vals, minlength=n_slots)
        if fn is AggFn.AVERAGE:
            means = np.divide(sums, counts, out=np.zeros(n_slots), where=counts > 0)
            resid = vals - means[subkey]
            ss = np.bincount(subkey, weights=resid * resid, minlength=n_slots)
    elif fn in (AggFn.MIN, AggFn.MAX):
        vals = dataset.agg_values[sub]
        fill = math.inf if fn is AggFn.MIN else -math.inf
        extrema = np.full(n_slots, fill)
        if fn is AggFn.MIN:
            np.minimum.at(extrema, subkey, vals)
        else:
            np.maximum.at(extrema, subkey, vals)
    elif fn is AggFn.MEDIAN:
        vals = dataset.agg_values[sub]
        order = np.lexsort((vals, subkey))
        v_sorted = vals[order]
        sk_sorted = subkey[order]

    for g in candidates:
        slot = int(g)
        cov = int(cov_counts[slot])
        if fn is AggFn.COUNT:
            agg1, agg2 = float(n1[slot]), float(n2[slot])
            if agg1 <= agg2:
                continue
            stats = RefinementStats(cov_count=cov)
        elif fn is AggFn.SUM:
            agg1, agg2 = float(sums[2 * slot]), float(sums[2 * slot + 1])
            if agg1 <= agg2:
                continue
            stats = RefinementStats(cov_count=cov)
        elif fn is AggFn.AVERAGE:
            agg1, agg2 = float(means[2 * slot]), float(means[2 * slot + 1])
            if agg1 <= agg2:
                continue
            s1 = math.sqrt(float(ss[2 * slot]) / (n1[slot] - 1)) if n1[slot] >= 2 else None
            s2 = math.sqrt(float(ss[2 * slot + 1]) / (n2[slot] - 1)) if n2[slot] >= 2 else None
            stats = RefinementStats(cov_count=cov, s1=s1, s2=s2)
        elif fn in (AggFn.MIN, AggFn.MAX):
            agg1, agg2 = float(extrema[2 * slot]), float(extrema[2 * slot + 1])
            if agg1 <= agg2:
                continue
            stats = RefinementStats(cov_count=cov)
        else:  # MEDIAN: sorted segments
            lo = np.searchsorted(sk_sorted, 2 * slot)
            mid = np.searchsorted(sk_sorted, 2 * slot + 1)
            hi = np.searchsorted(sk_sorted, 2 * slot + 2)
            seg1 = v_sorted[lo:mid]
            seg2 = v_sorted[mid:hi]
            agg1, agg2 = _median_sorted(seg1), _median_sorted(seg2)
            if agg1 <= agg2:
                continue
            stats = _median_stats(seg1, seg2, cov, task.config.median_test)
        atoms = tuple(zip(combo, split_key(key_of[slot], dataset, combo)))
        refinements.append(
            Refinement(
                predicate=Predicate(atoms),
                n1=int(n1[slot]),
                n2=int(n2[slot]),
                agg1=agg1,
                agg2=agg2,
                stats=stats,
                min_group=min_group,
            )
        )
    return ComboResult(combo, refinements, time.perf_counter() - t0)


def _median_stats(seg1: np.ndarray, seg2: np.ndarray, cov: int, median_test: str) -> RefinementStats:
    """Above / not-above counts for the median test on two sorted segments."""
    if median_test == "per-group":
        ref1 = _median_sorted(seg1)
        ref2 = _median_sorted(seg2)
    else:
        pooled = np.concatenate([seg1, seg2])
        pooled.sort()
        ref1 = ref2 = _median_sorted(pooled)
    a1, b1 = _above_counts(seg1, ref1)
    a2, b2 = _above_counts(seg2, ref2)
    return RefinementStats(cov_count=cov, a1=a1, b1=b1, a2=a2, b2=b2)


def find_predicates_predicate_level(dataset: Dataset, task: Task, combo: tuple[int, ...]) -> ComboResult:
    """Naive path: one masked pass per value combination of the combo.

    Same contract as :func:`find_predicates`; kept for differential testing
    and for measuring the cost of predicate-at-a-time search.
    """
    t0 = time.perf_counter()
    q = task.query
    fn = q.agg_fn
    min_group = task.config.min_group

    gb = dataset.columns[q.group_by]
    base = filter_mask(dataset, q.base_filter)
    g1_rows = base & (gb == task.claim.g1)
    g2_rows = base & (gb == task.claim.g2)
    if fn is not AggFn.COUNT:
        valid = ~np.isnan(dataset.agg_values)
        g1_rows &= valid
        g2_rows &= valid

    domains = [np.unique(dataset.columns[a]) for a in combo]
    refinements: list[Refinement] = []
    for codes in itertools.product(*domains):
        pred = np.ones(dataset.row_count, dtype=bool)
        for a, code in zip(combo, codes):
            pred &= dataset.columns[a] == code
        rows1 = pred & g1_rows
        rows2 = pred & g2_rows
        n1 = int(np.count_nonzero(rows1))
        n2 = int(np.count_nonzero(rows2))
        if n1 < min_group or n2 < min_group:
            continue
        cov = int(np.count_nonzero(pred & base))
        if fn is AggFn.COUNT:
            agg1, agg2 = float(n1), float(n2)
            stats = RefinementStats(cov_count=cov)
        else:
            vals1 = dataset.agg_values[rows1]
            vals2 = dataset.agg_values[rows2]
            agg1 = _plain_aggregate(fn, vals1)
            agg2 = _plain_aggregate(fn, vals2)
            stats = _plain_aux_stats(fn, vals1, vals2, cov, task.config.median_test)
        if agg1 <= agg2:
            continue
        atoms = tuple(zip(combo, (int(c) for c in codes)))
        refinements.append(
            Refinement(
                predicate=Predicate(atoms),
                n1=n1,
                n2=n2,
                agg1=agg1,
                agg2=agg2,
                stats=stats,
                min_group=min_group,
            )
        )
    refinements.sort(key=lambda r: r.predicate.atoms)
    return ComboResult(combo, refinements, time.perf_counter() - t0)


def _plain_aggregate(fn: AggFn, vals: np.ndarray) -> float:
    if fn is AggFn.SUM:
        return float(np.sum(vals))
    if fn is AggFn.AVERAGE:
        return float(np.mean(vals))
    if fn is AggFn.MEDIAN:
        return float(np.median(vals))
    if fn is AggFn.MIN:
        return float(np.min(vals))
    return float(np.max(vals))


def _plain_aux_stats(fn: AggFn, vals1: np.ndarray, vals2: np.ndarray, cov: int, median_test: str) -> RefinementStats:
    if fn is AggFn.AVERAGE:
        s1 = float(np.std(vals1, ddof=1)) if vals1.size >= 2 else None
        s2 = float(np.std(vals2, ddof=1)) if vals2.size >= 2 else None
        return RefinementStats(cov_count=cov, s1=s1, s2=s2)
    if fn is AggFn.MEDIAN:
        if median_test == "per-group":
            ref1 = float(np.median(vals1))
            ref2 = float(np.median(vals2))
        else:
            ref1 = ref2 = float(np.median(np.concatenate([vals1, vals2])))
        a1 = int(np.count_nonzero(vals1 > ref1))
        a2 = int(np.count_nonzero(vals2 > ref2))
        return RefinementStats(cov_count=cov, a1=a1, b1=vals1.size - a1, a2=a2, b2=vals2.size - a2)
    return RefinementStats(cov_count=cov)


def stamp(result: ComboResult, elapsed: float) -> ComboResult:
    """Attach a discovery time to every refinement of a combo result."""
    stamped = [replace(r, discovered_at=elapsed) for r in result.refinements]
    return ComboResult(result.combo, stamped, result.scan_time)
