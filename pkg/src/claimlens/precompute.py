"""Offline per-dataset cache of attribute-level scores and ranking heuristics.

Built once per dataset (independently of any particular claim), persisted as
a single versioned JSON document, and rejected on reload if the dataset
fingerprint does not match. The regression-based ranking scores depend on the
claim groups, so they are attached separately and keyed by the claim; the
engine recomputes them on the fly when the cached ones were built for a
different claim.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .dataset import Dataset, combo_keys
from .kernel import enumerate_combos, max_group_size
from .measures import EmbeddingTable, anova_f, embsim_simple, mutual_information, normalize_scores
from .task import Task, filter_mask

CACHE_VERSION = 1
RIDGE_LAMBDA = 1e-6


class CacheError(Exception):
    pass


class CacheMismatchError(CacheError):
    """Cache was built for a different dataset or parameters."""


class CacheMissError(CacheError):
    """Cache does not cover the requested attribute combination."""


@dataclass
class ComboScores:
    max_group_size: int
    mi_raw: float
    mi: float
    anova_raw: float | None
    anova: float | None
    large_value_count: int
    embsim_simple: float | None


@dataclass
class PrecomputeCache:
    fingerprint: str
    m: int
    large_group: int
    combos: list[tuple[int, ...]]
    scores: list[ComboScores]
    distinct_counts: dict[int, int]
    regscore: dict | None = None  # {"claim_key": str, "scores": {attr_id: float}}
    _index: dict[tuple[int, ...], int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._index = {combo: i for i, combo in enumerate(self.combos)}

    def get(self, combo: tuple[int, ...]) -> ComboScores:
        i = self._index.get(tuple(combo))
        if i is None:
            raise CacheMissError(f"combination {combo} is not covered by this cache (built with m={self.m})")
        return self.scores[i]

    def has_embeddings(self) -> bool:
        return any(s.embsim_simple is not None for s in self.scores)

    def check(self, dataset: Dataset) -> None:
        if self.fingerprint != dataset.fingerprint():
            raise CacheMismatchError("cache fingerprint does not match the dataset; rebuild the cache")


def coverage_heuristic(dataset: Dataset, combo: tuple[int, ...], large_group: int) -> int:
    """Number of the combo's value groups with at least ``large_group`` rows."""
    keys = combo_keys(dataset, combo)
    _, counts = np.unique(keys, return_counts=True)
    return int(np.count_nonzero(counts >= large_group))


def build_cache(
    dataset: Dataset,
    m: int,
    large_group: int = 100,
    table: EmbeddingTable | None = None,
) -> PrecomputeCache:
    """Compute every attribute-level score for all searchable combinations.

    Enumerates with no group-size pruning so one cache serves any minimum
    group size; per-combination maximal group sizes are stored so the engine
    can prune at claim time.
    """
    combos = enumerate_combos(dataset, m, min_group=1)
    numeric = dataset.agg_is_numeric
    mi_raw = [mutual_information(dataset, c) for c in combos]
    anova_raw: list[float | None]
    if numeric:
        anova_raw = [anova_f(dataset, c) for c in combos]
        anova_norm: list[float | None] = normalize_scores([v for v in anova_raw])
    else:
        anova_raw = [None] * len(combos)
        anova_norm = [None] * len(combos)
    mi_norm = normalize_scores(mi_raw)

    scores = []
    for i, combo in enumerate(combos):
        scores.append(
            ComboScores(
                max_group_size=max_group_size(dataset, combo),
                mi_raw=mi_raw[i],
                mi=mi_norm[i],
                anova_raw=anova_raw[i],
                anova=anova_norm[i],
                large_value_count=coverage_heuristic(dataset, combo, large_group),
                embsim_simple=embsim_simple(combo, table, dataset) if table is not None else None,
            )
        )
    distinct = {a: dataset.attributes[a].distinct_count for a in dataset.split_attributes}
    return PrecomputeCache(
        fingerprint=dataset.fingerprint(),
        m=m,
        large_group=large_group,
        combos=combos,
        scores=scores,
        distinct_counts=distinct,
    )


# ---------------------------------------------------------------------------
# regression ranking scores
# ---------------------------------------------------------------------------

def claim_key(task: Task, dataset: Dataset) -> str:
    import hashlib

    doc = {
        "dataset": dataset.fingerprint(),
        "group_by": task.query.group_by,
        "agg_attr": task.query.agg_attr,
        "filter": list(task.query.base_filter),
        "g1": task.claim.g1,
        "g2": task.claim.g2,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


def regscore(dataset: Dataset, task: Task) -> dict[int, float]:
    """Per-attribute difference of the two groups' linear-regression weights.

    One least-squares model per claim group predicts the target from the
    ordinal-encoded split attributes (standardized per group; constant
    features drop to weight zero under the ridge term). A large positive
    difference means the attribute pushes the first group's target up more
    than the second's.
    """
    if not dataset.agg_is_numeric:
        raise CacheError("regression scores require a numeric aggregate attribute")
    feats = sorted(dataset.split_attributes)
    design = np.stack([dataset.columns[a] for a in feats], axis=1).astype(np.float64)
    y = dataset.agg_values
    base = filter_mask(dataset, task.query.base_filter) & ~np.isnan(y)
    gb = dataset.columns[task.query.group_by]

    weights = []
    for code in (task.claim.g1, task.claim.g2):
        rows = base & (gb == code)
        if not np.any(rows):
            raise CacheError("a claim group is empty; cannot fit regression ranking")
        xg = design[rows]
        yg = y[rows]
        mu = xg.mean(axis=0)
        sigma = xg.std(axis=0)
        xs = np.where(sigma > 0.0, (xg - mu) / np.where(sigma == 0.0, 1.0, sigma), 0.0)
        yc = yg - yg.mean()
        gram = xs.T @ xs + RIDGE_LAMBDA * np.eye(len(feats))
        rhs = xs.T @ yc
        try:
            w = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            w = np.linalg.lstsq(gram, rhs, rcond=None)[0]
        weights.append(w)
    return {a: float(weights[0][i] - weights[1][i]) for i, a in enumerate(feats)}


def attach_regscore(cache: PrecomputeCache, dataset: Dataset, task: Task) -> None:
    cache.regscore = {"claim_key": claim_key(task, dataset), "scores": regscore(dataset, task)}


def regscore_for(cache: PrecomputeCache, dataset: Dataset, task: Task) -> dict[int, float]:
    """Cached regression scores when they match this claim, else fresh ones."""
    key = claim_key(task, dataset)
    if cache.regscore is not None and cache.regscore["claim_key"] == key:
        return {int(a): float(v) for a, v in cache.regscore["scores"].items()}
    return regscore(dataset, task)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _enc_float(v: float | None):
    if v is None:
        return None
    if math.isinf(v):
        return "inf"
    return v


def _dec_float(v) -> float | None:
    if v is None:
        return None
    if v == "inf":
        return math.inf
    return float(v)


def save_cache(cache: PrecomputeCache, path: str | Path, dataset: Dataset) -> None:
    doc = {
        "version": CACHE_VERSION,
        "fingerprint": cache.fingerprint,
        "m": cache.m,
        "large_group": cache.large_group,
        "combos": [[dataset.attributes[a].name for a in combo] for combo in cache.combos],
        "scores": [
            {
                "max_group_size": s.max_group_size,
                "mi_raw": s.mi_raw,
                "mi": s.mi,
                "anova_raw": _enc_float(s.anova_raw),
                "anova": s.anova,
                "large_value_count": s.large_value_count,
                "embsim_simple": s.embsim_simple,
            }
            for s in cache.scores
        ],
        "distinct_counts": {dataset.attributes[a].name: c for a, c in cache.distinct_counts.items()},
        "regscore": None
        if cache.regscore is None
        else {
            "claim_key": cache.regscore["claim_key"],
            "scores": {dataset.attributes[a].name: v for a, v in cache.regscore["scores"].items()},
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")


def load_cache(path: str | Path, dataset: Dataset) -> PrecomputeCache:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CacheError(f"cannot read cache {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CacheError(f"cache {path} is not valid JSON: {exc}") from exc
    if doc.get("version") != CACHE_VERSION:
        raise CacheMismatchError(f"unsupported cache version {doc.get('version')}")
    if doc["fingerprint"] != dataset.fingerprint():
        raise CacheMismatchError("cache fingerprint does not match the dataset; rebuild the cache")
    name_to_id = {a.name: a.id for a in dataset.attributes}
    combos = [tuple(name_to_id[n] for n in combo) for combo in doc["combos"]]
    scores = [
        ComboScores(
            max_group_size=int(s["max_group_size"]),
            mi_raw=float(s["mi_raw"]),
            mi=float(s["mi"]),
            anova_raw=_dec_float(s["anova_raw"]),
            anova=None if s["anova"] is None else float(s["anova"]),
            large_value_count=int(s["large_value_count"]),
            embsim_simple=None if s["embsim_simple"] is None else float(s["embsim_simple"]),
        )
        for s in doc["scores"]
    ]
    reg = doc.get("regscore")
    regparsed = None
    if reg is not None:
        regparsed = {
            "claim_key": reg["claim_key"],
            "scores": {name_to_id[n]: float(v) for n, v in reg["scores"].items()},
        }
    return PrecomputeCache(
        fingerprint=doc["fingerprint"],
        m=int(doc["m"]),
        large_group=int(doc["large_group"]),
        combos=combos,
        scores=scores,
        distinct_counts={name_to_id[n]: int(c) for n, c in doc["distinct_counts"].items()},
        regscore=regparsed,
    )
