"""Query, claim, refinement, and predicate types plus task validation.

All types are immutable value objects. Predicates are canonical: atoms sorted
by attribute id, one atom per attribute, every attribute a split attribute of
the dataset the task was validated against.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import InitVar, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from .dataset import Dataset, DatasetError, NULL_CODE

ALL_MEASURES = ("coverage", "statsig", "embsim", "mi", "anova")


class AggFn(Enum):
    COUNT = "count"
    SUM = "sum"
    AVERAGE = "average"
    MEDIAN = "median"
    MIN = "min"
    MAX = "max"

    @classmethod
    def parse(cls, text: str) -> "AggFn":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise TaskValidationError([{"field": "agg_fn", "message": f"unknown aggregate function {text!r}"}])

    @property
    def needs_numeric(self) -> bool:
        return self is not AggFn.COUNT


class TaskValidationError(Exception):
    """Carries a list of {field, message} dicts naming each offending field."""

    def __init__(self, errors: list[dict[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{e['field']}: {e['message']}" for e in errors))


@dataclass(frozen=True)
class Predicate:
    """Conjunction of equality atoms ``(attribute id, value code)``."""

    atoms: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.atoms))
        object.__setattr__(self, "atoms", ordered)
        attrs = [a for a, _ in ordered]
        if len(set(attrs)) != len(attrs):
            raise ValueError("predicate repeats an attribute")

    @property
    def arity(self) -> int:
        return len(self.atoms)

    @property
    def attribute_ids(self) -> tuple[int, ...]:
        return tuple(a for a, _ in self.atoms)

    def atom_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.atoms)

    def describe(self, dataset: Dataset) -> list[list[str]]:
        return [[dataset.attributes[a].name, dataset.attributes[a].value_of(v)] for a, v in self.atoms]


@dataclass(frozen=True)
class RefinementStats:
    """Auxiliary per-group statistics captured at discovery time."""

    cov_count: int
    s1: float | None = None  # sample stddevs, average aggregation only
    s2: float | None = None
    a1: int | None = None  # above / not-above reference-median counts,
    b1: int | None = None  # median aggregation only
    a2: int | None = None
    b2: int | None = None


@dataclass(frozen=True)
class Refinement:
    """A predicate that endorses the claim, with the evidence found for it.

    Construction requires ``agg1 > agg2`` and both subgroup sizes at or above
    the task's minimum group size.
    """

    predicate: Predicate
    n1: int
    n2: int
    agg1: float
    agg2: float
    stats: RefinementStats
    discovered_at: float = 0.0
    min_group: InitVar[int] = 1

    def __post_init__(self, min_group: int) -> None:
        if not self.agg1 > self.agg2:
            raise ValueError(f"refinement does not endorse the claim: {self.agg1} <= {self.agg2}")
        if self.n1 < min_group or self.n2 < min_group:
            raise ValueError(f"subgroup below minimum size {min_group}: n1={self.n1}, n2={self.n2}")


@dataclass(frozen=True)
class QuerySpec:
    group_by: int
    agg_attr: int
    agg_fn: AggFn
    base_filter: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class Claim:
    g1: int
    g2: int


@dataclass(frozen=True)
class TaskConfig:
    k: int = 100
    m: int = 2
    min_group: int = 30
    measures: tuple[str, ...] = ALL_MEASURES
    deadline_ms: float | None = None
    seed: int = 0
    median_test: str = "pooled"  # or "per-group"


@dataclass(frozen=True)
class Task:
    query: QuerySpec
    claim: Claim
    config: TaskConfig

    def fingerprint(self, dataset: Dataset) -> str:
        doc = {
            "dataset": dataset.fingerprint(),
            "group_by": self.query.group_by,
            "agg_attr": self.query.agg_attr,
            "agg_fn": self.query.agg_fn.value,
            "filter": list(self.query.base_filter),
            "g1": self.claim.g1,
            "g2": self.claim.g2,
            "k": self.config.k,
            "m": self.config.m,
            "min_group": self.config.min_group,
            "median_test": self.config.median_test,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


def active_measures(task: Task, dataset: Dataset, have_embeddings: bool) -> tuple[str, ...]:
    """Measures that apply to this task, in canonical order.

    Statistical significance exists only for average/median aggregation;
    embedding similarity needs a vector table; ANOVA needs a numeric target.
    """
    out = []
    for name in ALL_MEASURES:
        if name not in task.config.measures:
            continue
        if name == "statsig" and task.query.agg_fn not in (AggFn.AVERAGE, AggFn.MEDIAN):
            continue
        if name == "embsim" and not have_embeddings:
            continue
        if name == "anova" and not dataset.agg_is_numeric:
            continue
        out.append(name)
    return tuple(out)


def validate(
    dataset: Dataset,
    query: QuerySpec,
    claim: Claim,
    config: TaskConfig,
) -> Task:
    """Check every task invariant against the dataset; raise with all errors."""
    errors: list[dict[str, str]] = []
    n_attrs = len(dataset.attributes)

    def check_attr(field_name: str, attr_id: int) -> bool:
        if not 0 <= attr_id < n_attrs:
            errors.append({"field": field_name, "message": f"attribute id {attr_id} out of range"})
            return False
        return True

    ok_gb = check_attr("group_by", query.group_by)
    ok_agg = check_attr("agg_attr", query.agg_attr)
    if ok_gb and ok_agg:
        if query.group_by == query.agg_attr:
            errors.append({"field": "group_by", "message": "group-by and aggregate attributes must differ"})
        for field_name, attr_id in (("group_by", query.group_by), ("agg_attr", query.agg_attr)):
            if attr_id in dataset.split_attributes:
                errors.append({"field": field_name, "message": "must not be a split attribute"})
        if query.agg_fn.needs_numeric and not dataset.agg_is_numeric:
            errors.append(
                {
                    "field": "agg_fn",
                    "message": f"{query.agg_fn.value} requires a numeric aggregate attribute",
                }
            )
    if claim.g1 == claim.g2:
        errors.append({"field": "claim", "message": "identical groups"})
    if ok_gb:
        gb_col = dataset.columns[query.group_by]
        card = len(dataset.attributes[query.group_by].values)
        for field_name, code in (("g1", claim.g1), ("g2", claim.g2)):
            if not 0 <= code < card or not bool(np.any(gb_col == code)):
                errors.append({"field": field_name, "message": f"group value code {code} does not appear in the dataset"})
    for attr_id, code in query.base_filter:
        if check_attr("base_filter", attr_id):
            if not 0 <= code < len(dataset.attributes[attr_id].values):
                errors.append({"field": "base_filter", "message": f"value code {code} out of range for attribute {attr_id}"})
    for field_name, value in (("k", config.k), ("m", config.m), ("min_group", config.min_group)):
        if value < 1:
            errors.append({"field": field_name, "message": "must be >= 1"})
    for name in config.measures:
        if name not in ALL_MEASURES:
            errors.append({"field": "measures", "message": f"unknown measure {name!r}"})
    if config.median_test not in ("pooled", "per-group"):
        errors.append({"field": "median_test", "message": "must be 'pooled' or 'per-group'"})

    if errors:
        raise TaskValidationError(errors)
    return Task(query=query, claim=claim, config=config)


def filter_mask(dataset: Dataset, atoms: Iterable[tuple[int, int]]) -> np.ndarray:
    mask = np.ones(dataset.row_count, dtype=bool)
    for attr_id, code in atoms:
        mask &= dataset.columns[attr_id] == code
    return mask


def aggregate_values(fn: AggFn, values: np.ndarray, n_rows: int) -> float:
    """Aggregate one subgroup. ``values`` excludes nulls; ``n_rows`` counts all
    subgroup rows (only COUNT uses it)."""
    if fn is AggFn.COUNT:
        return float(n_rows)
    if values.size == 0:
        raise DatasetError("aggregate over empty group")
    if fn is AggFn.SUM:
        return float(np.sum(values))
    if fn is AggFn.AVERAGE:
        return float(np.sum(values) / values.size)
    if fn is AggFn.MEDIAN:
        return float(np.median(values))
    if fn is AggFn.MIN:
        return float(np.min(values))
    return float(np.max(values))


@dataclass(frozen=True)
class BaselineResult:
    v1: float
    v2: float
    already_holds: bool


def baseline_check(task: Task, dataset: Dataset) -> BaselineResult:
    """Unrefined aggregates of both groups under the base filter.

    The search proceeds whether or not the claim already holds; this only
    reports the starting point.
    """
    base = filter_mask(dataset, task.query.base_filter)
    gb = dataset.columns[task.query.group_by]
    out = []
    for code in (task.claim.g1, task.claim.g2):
        rows = base & (gb == code)
        n_rows = int(np.count_nonzero(rows))
        if task.query.agg_fn is AggFn.COUNT:
            if n_rows == 0:
                raise TaskValidationError([{"field": "base_filter", "message": "a claim group is empty under the base filter"}])
            out.append(float(n_rows))
            continue
        vals = dataset.agg_values[rows]
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            raise TaskValidationError([{"field": "base_filter", "message": "a claim group is empty under the base filter"}])
        out.append(aggregate_values(task.query.agg_fn, vals, n_rows))
    v1, v2 = out
    return BaselineResult(v1=v1, v2=v2, already_holds=v1 > v2)


def parse_task_json(doc: dict | str | Path, dataset: Dataset) -> Task:
    """Resolve a task document's names and raw values against the dataset.

    Expected shape::

        {"query": {"group_by": ..., "aggregate": ..., "agg_fn": ...,
                   "filter": [[attr, value], ...]},
         "claim": {"g1": ..., "g2": ...},
         "config": {"k": ..., "m": ..., "min_group": ..., "measures": [...],
                    "deadline_ms": ..., "seed": ..., "median_test": ...}}
    """
    if not isinstance(doc, dict):
        path = Path(doc)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise TaskValidationError([{"field": "task", "message": f"cannot read {path}: {exc}"}])
        except json.JSONDecodeError as exc:
            raise TaskValidationError([{"field": "task", "message": f"not valid JSON: {exc}"}])

    errors: list[dict[str, str]] = []
    q = doc.get("query", {})
    c = doc.get("claim", {})
    cfg = doc.get("config", {})

    def resolve_attr(field_name: str, name: str | None, default: int) -> int:
        if name is None:
            return default
        try:
            return dataset.attribute(name).id
        except DatasetError:
            errors.append({"field": field_name, "message": f"unknown attribute {name!r}"})
            return default

    gb = resolve_attr("query.group_by", q.get("group_by"), dataset.group_by)
    agg = resolve_attr("query.aggregate", q.get("aggregate"), dataset.agg_attr)
    try:
        fn = AggFn.parse(q.get("agg_fn", "average"))
    except TaskValidationError as exc:
        errors.extend(exc.errors)
        fn = AggFn.AVERAGE

    atoms = []
    for pair in q.get("filter", []):
        name, value = pair
        try:
            attr = dataset.attribute(name)
            atoms.append((attr.id, dataset.code_for(attr.id, value)))
        except DatasetError as exc:
            errors.append({"field": "query.filter", "message": str(exc)})

    codes = []
    for field_name in ("g1", "g2"):
        raw = c.get(field_name)
        if raw is None:
            errors.append({"field": f"claim.{field_name}", "message": "missing"})
            codes.append(NULL_CODE)
            continue
        try:
            codes.append(dataset.code_for(gb, raw))
        except DatasetError as exc:
            errors.append({"field": f"claim.{field_name}", "message": str(exc)})
            codes.append(NULL_CODE)

    config = TaskConfig(
        k=int(cfg.get("k", 100)),
        m=int(cfg.get("m", 2)),
        min_group=int(cfg.get("min_group", 30)),
        measures=tuple(cfg.get("measures", ALL_MEASURES)),
        deadline_ms=cfg.get("deadline_ms"),
        seed=int(cfg.get("seed", 0)),
        median_test=cfg.get("median_test", "pooled"),
    )
    query = QuerySpec(group_by=gb, agg_attr=agg, agg_fn=fn, base_filter=tuple(sorted(atoms)))
    claim = Claim(g1=codes[0], g2=codes[1])
    if errors:
        # surface structural problems too before giving up
        try:
            validate(dataset, query, claim, config)
        except TaskValidationError as exc:
            errors.extend(exc.errors)
        raise TaskValidationError(errors)
    return validate(dataset, query, claim, config)


def with_config(task: Task, **changes) -> Task:
    return replace(task, config=replace(task.config, **changes))
