"""Naturalness measures: each maps a refinement (plus dataset context) to a score.

Predicate-level measures (coverage, statistical significance, embedding
similarity) are computed from the statistics captured on the refinement;
attribute-level measures (mutual information, ANOVA) depend only on the
attribute combination and are normalized against the largest value over the
enumerated combinations, so that step lives in the precompute cache. Raw
(unnormalized) computations live here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .dataset import Dataset, combo_keys
from .task import Refinement


# ---------------------------------------------------------------------------
# distribution tails
# ---------------------------------------------------------------------------

def t_sf(t: float, df: float) -> float:
    """P(T >= t) for Student's t with ``df`` degrees of freedom.

    Uses the regularized incomplete beta function; for t >= 0 the upper tail
    is ``0.5 * I_{df/(df+t^2)}(df/2, 1/2)``.
    """
    if df <= 0:
        raise ValueError("df must be positive")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * float(betainc(df / 2.0, 0.5, x))
    return tail if t > 0 else 1.0 - tail


def chi2_sf(x: float) -> float:
    """P(X >= x) for chi-square with one degree of freedom."""
    if x <= 0:
        return 1.0
    return math.erfc(math.sqrt(x / 2.0))


def welch_df(s1: float, s2: float, n1: int, n2: int) -> float:
    v1 = s1 * s1 / n1
    v2 = s2 * s2 / n2
    return (v1 + v2) ** 2 / (v1 * v1 / (n1 - 1) + v2 * v2 / (n2 - 1))


# ---------------------------------------------------------------------------
# predicate-level measures
# ---------------------------------------------------------------------------

def coverage(refinement: Refinement, dataset: Dataset) -> float:
    """Fraction of all rows selected by the base filter plus the predicate."""
    return refinement.stats.cov_count / dataset.row_count


def statsig_avg(refinement: Refinement) -> float | None:
    """Two-sided unequal-variance t-test score, ``1 - pvalue``.

    Absent when either subgroup has fewer than two values (no sample
    stddev). Two zero-variance subgroups score 1.0 when the means differ
    (the difference cannot be sampling noise) and 0.0 when they coincide.
    """
    st = refinement.stats
    if st.s1 is None or st.s2 is None:
        return None
    m1, m2 = refinement.agg1, refinement.agg2
    if st.s1 == 0.0 and st.s2 == 0.0:
        return 1.0 if m1 != m2 else 0.0
    se = math.sqrt(st.s1 ** 2 / refinement.n1 + st.s2 ** 2 / refinement.n2)
    t = (m1 - m2) / se
    df = welch_df(st.s1, st.s2, refinement.n1, refinement.n2)
    pvalue = 2.0 * t_sf(abs(t), df)
    return 1.0 - pvalue


def statsig_med(refinement: Refinement) -> float | None:
    """Median-test score with continuity correction, ``1 - pvalue``.

    Works on the 2x2 table of counts above / not above the reference median
    captured on the refinement. Degenerate tables (any expected count zero)
    score 0.
    """
    st = refinement.stats
    if st.a1 is None:
        return None
    return median_test_score(st.a1, st.b1, st.a2, st.b2)


def median_test_score(a1: int, b1: int, a2: int, b2: int) -> float:
    total = a1 + b1 + a2 + b2
    if total == 0:
        return 0.0
    x_star = 0.0
    for a_i, b_i in ((a1, b1), (a2, b2)):
        ea = (a1 + a2) * (a_i + b_i) / total
        eb = (b1 + b2) * (a_i + b_i) / total
        if ea == 0.0 or eb == 0.0:
            return 0.0
        x_star += (abs(a_i - ea) - 0.5) ** 2 / ea
        x_star += (abs(b_i - eb) - 0.5) ** 2 / eb
    return 1.0 - chi2_sf(x_star)


# ---------------------------------------------------------------------------
# embedding similarity
# ---------------------------------------------------------------------------

class EmbeddingTable:
    """Text -> vector lookup loaded from JSON ``{"dimension": d, "entries": {...}}``.

    ``misses`` counts lookups of keys the table should have provided (atom
    strings and attribute labels); probing a concatenated multi-part key
    before falling back to mean composition is part of the protocol and is
    not counted.
    """

    def __init__(self, dimension: int, entries: dict[str, np.ndarray]):
        self.dimension = dimension
        self.entries = entries
        self.misses = 0

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        dimension = int(doc["dimension"])
        entries = {}
        for key, vec in doc["entries"].items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (dimension,):
                raise ValueError(f"vector for {key!r} has length {arr.size}, expected {dimension}")
            entries[key] = arr
        return cls(dimension, entries)

    def probe(self, key: str) -> np.ndarray | None:
        return self.entries.get(key)

    def lookup(self, key: str) -> np.ndarray | None:
        vec = self.entries.get(key)
        if vec is None:
            self.misses += 1
        return vec


def cosine(u: np.ndarray, v: np.ndarray) -> float | None:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return None
    return float(np.dot(u, v) / (nu * nv))


def _composed_vector(table: EmbeddingTable, full_key: str, part_keys: Sequence[str]) -> np.ndarray | None:
    """Exact key if present, else the mean of the per-part vectors."""
    exact = table.probe(full_key) if len(part_keys) > 1 else table.lookup(full_key)
    if exact is not None:
        return exact
    if len(part_keys) <= 1:
        return None
    parts = [table.lookup(k) for k in part_keys]
    if any(p is None for p in parts):
        return None
    return np.mean(np.stack(parts), axis=0)


def predicate_text_parts(refinement: Refinement, dataset: Dataset) -> list[str]:
    return [
        f"{dataset.attributes[a].label} {dataset.attributes[a].label_of(v)}"
        for a, v in refinement.predicate.atoms
    ]


def embsim(refinement: Refinement, table: EmbeddingTable, dataset: Dataset) -> float | None:
    """Cosine similarity between the predicate text and the target attribute.

    The predicate text is the concatenation "label(A1) label(v1) ... " of its
    atoms. Scores are plain cosines and deliberately not clamped to [0, 1].
    """
    parts = predicate_text_parts(refinement, dataset)
    vec = _composed_vector(table, " ".join(parts), parts)
    if vec is None:
        return None
    target = table.lookup(dataset.attributes[dataset.agg_attr].label)
    if target is None:
        return None
    return cosine(vec, target)


def embsim_simple(combo: tuple[int, ...], table: EmbeddingTable, dataset: Dataset) -> float | None:
    """Combo-level variant comparing only the attribute labels to the target."""
    parts = [dataset.attributes[a].label for a in combo]
    vec = _composed_vector(table, " ".join(parts), parts)
    if vec is None:
        return None
    target = table.lookup(dataset.attributes[dataset.agg_attr].label)
    if target is None:
        return None
    return cosine(vec, target)


# ---------------------------------------------------------------------------
# attribute-level measures (raw values; normalization in precompute)
# ---------------------------------------------------------------------------

def mutual_information(dataset: Dataset, combo: tuple[int, ...]) -> float:
    """Raw mutual information (nats) between the combo and the binned target.

    Empirical joint frequencies over all rows with a non-null target value;
    the target uses its binned (dictionary-encoded) column.
    """
    agg_codes = dataset.columns[dataset.agg_attr].astype(np.int64)
    if dataset.agg_is_numeric:
        rows = ~np.isnan(dataset.agg_values)
    else:
        rows = agg_codes != 0  # skip null target cells
    keys = combo_keys(dataset, combo, rows=rows)
    y = agg_codes[rows]
    n = keys.size
    if n == 0:
        return 0.0
    card_y = int(y.max()) + 1
    joint_key = keys * card_y + y
    _, joint_counts = np.unique(joint_key, return_counts=True)
    _, x_counts = np.unique(keys, return_counts=True)
    _, y_counts = np.unique(y, return_counts=True)
    h_x = _entropy(x_counts, n)
    h_y = _entropy(y_counts, n)
    h_xy = _entropy(joint_counts, n)
    return max(0.0, h_x + h_y - h_xy)


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts / n
    return float(-np.sum(p * np.log(p)))


def anova_f(dataset: Dataset, combo: tuple[int, ...]) -> float:
    """Raw F statistic of the partition the combo induces on the target.

    Between-group mean square over within-group mean square. Returns ``inf``
    when every group has zero within-variance but the means differ, and 0.0
    when the means coincide as well.
    """
    if not dataset.agg_is_numeric:
        raise ValueError("ANOVA requires a numeric aggregate attribute")
    rows = ~np.isnan(dataset.agg_values)
    keys = combo_keys(dataset, combo, rows=rows)
    vals = dataset.agg_values[rows]
    if keys.size == 0:
        return 0.0
    uniq, inv = np.unique(keys, return_inverse=True)
    theta = uniq.size
    n_total = vals.size
    sizes = np.bincount(inv, minlength=theta)
    sums = np.bincount(inv, weights=vals, minlength=theta)
    means = sums / sizes
    grand = float(np.sum(vals) / n_total)
    between_ss = float(np.sum(sizes * (means - grand) ** 2))
    within_ss = float(np.sum((vals - means[inv]) ** 2))
    if theta < 2:
        return 0.0
    if within_ss == 0.0 or n_total <= theta:
        return math.inf if between_ss > 0.0 else 0.0
    return (between_ss / (theta - 1)) / (within_ss / (n_total - theta))


def normalize_scores(raw: Sequence[float]) -> list[float]:
    """Divide by the largest finite value; infinities become exactly 1.0."""
    finite = [v for v in raw if math.isfinite(v)]
    top = max(finite) if finite else 0.0
    out = []
    for v in raw:
        if math.isinf(v):
            out.append(1.0)
        elif top > 0.0:
            out.append(v / top)
        else:
            out.append(0.0)
    return out


# ---------------------------------------------------------------------------
# score vector and generality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureVector:
    """Scores of one refinement under every active measure, plus their mean."""

    coverage: float | None
    statsig: float | None
    embsim: float | None
    mi: float | None
    anova: float | None
    average: float

    @classmethod
    def build(
        cls,
        coverage: float | None,
        statsig: float | None,
        embsim: float | None,
        mi: float | None,
        anova: float | None,
    ) -> "MeasureVector":
        present = [v for v in (coverage, statsig, embsim, mi, anova) if v is not None]
        average = math.fsum(present) / len(present) if present else 0.0
        return cls(coverage, statsig, embsim, mi, anova, average=average)

    def get(self, measure: str) -> float | None:
        return getattr(self, measure)

    def as_dict(self) -> dict[str, float | None]:
        return {
            "coverage": self.coverage,
            "statsig": self.statsig,
            "embsim": self.embsim,
            "mi": self.mi,
            "anova": self.anova,
            "average": self.average,
        }


def score_refinement(
    refinement: Refinement,
    dataset: Dataset,
    task,
    mi: float | None,
    anova: float | None,
    table: EmbeddingTable | None,
    active: Sequence[str],
) -> MeasureVector:
    """Assemble the score vector for one refinement.

    ``mi`` and ``anova`` are the combo's normalized attribute-level scores
    (from the precompute cache); measures outside ``active`` stay absent and
    do not enter the average.
    """
    from .task import AggFn  # local import; task depends on dataset only

    cov = coverage(refinement, dataset) if "coverage" in active else None
    ss = None
    if "statsig" in active:
        if task.query.agg_fn is AggFn.AVERAGE:
            ss = statsig_avg(refinement)
        elif task.query.agg_fn is AggFn.MEDIAN:
            ss = statsig_med(refinement)
    em = embsim(refinement, table, dataset) if "embsim" in active and table is not None else None
    return MeasureVector.build(
        coverage=cov,
        statsig=ss,
        embsim=em,
        mi=mi if "mi" in active else None,
        anova=anova if "anova" in active else None,
    )


def generality_filter(refinements: Sequence[Refinement]) -> list[Refinement]:
    """Keep only the most general refinements.

    Drops every refinement whose atom set strictly contains another's in the
    input; survivors keep their order. Idempotent, and never removes an
    atom-set-minimal element.
    """
    atom_sets = [r.predicate.atom_set() for r in refinements]
    out = []
    for i, r in enumerate(refinements):
        dominated = any(j != i and atom_sets[j] < atom_sets[i] for j in range(len(refinements)))
        if not dominated:
            out.append(r)
    return out
