from __future__ import annotations

import hashlib
import itertools
import json
from pathlib import Path

import numpy as np
import pytest

from claimlens.dataset import Dataset, ingest_csv, load_schema
from claimlens.measures import EmbeddingTable
from claimlens.precompute import build_cache
from claimlens.task import Task, parse_task_json

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def income() -> Dataset:
    return ingest_csv(DATA_DIR / "income.csv", load_schema(DATA_DIR / "income.schema.json"))


@pytest.fixture(scope="session")
def income_task(income) -> Task:
    return parse_task_json(DATA_DIR / "income.task.json", income)


@pytest.fixture(scope="session")
def income_table(income) -> EmbeddingTable:
    return EmbeddingTable(8, {key: synth_vector(key) for key in embedding_keys(income, m=2)})


@pytest.fixture(scope="session")
def income_cache(income, income_table):
    return build_cache(income, m=2, large_group=100, table=income_table)


# ---------------------------------------------------------------------------
# synthetic embeddings: deterministic unit vectors per key
# ---------------------------------------------------------------------------

def synth_vector(key: str, dim: int = 8) -> np.ndarray:
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def embedding_keys(dataset: Dataset, m: int) -> set[str]:
    """Everything embsim / its combo-level variant can ask for."""
    keys = {dataset.attributes[dataset.agg_attr].label}
    split = list(dataset.split_attributes)
    for a in split:
        attr = dataset.attributes[a]
        keys.add(attr.label)
        for code in np.unique(dataset.columns[a]):
            keys.add(f"{attr.label} {attr.label_of(int(code))}")
    for size in range(2, m + 1):
        for combo in itertools.combinations(split, size):
            keys.add(" ".join(dataset.attributes[a].label for a in combo))
    return keys


def write_embedding_file(dataset: Dataset, m: int, path: Path, dim: int = 8) -> Path:
    entries = {key: [float(x) for x in synth_vector(key, dim)] for key in embedding_keys(dataset, m)}
    path.write_text(json.dumps({"dimension": dim, "entries": entries}), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# synthetic dataset construction
# ---------------------------------------------------------------------------

def write_csv(path: Path, header: list[str], rows: list[list[str]]) -> Path:
    lines = [",".join(header)] + [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def make_dataset(
    tmp_path: Path,
    header: list[str],
    rows: list[list],
    schema_doc: dict,
    name: str = "synth",
) -> Dataset:
    csv_path = write_csv(tmp_path / f"{name}.csv", header, rows)
    schema_path = tmp_path / f"{name}.schema.json"
    schema_path.write_text(json.dumps(schema_doc), encoding="utf-8")
    return ingest_csv(csv_path, load_schema(schema_path))


def random_dataset(
    tmp_path: Path,
    rng: np.random.Generator,
    name: str,
    n_rows: int | None = None,
    n_split: int | None = None,
    null_y: float = 0.0,
    integer_y: bool = False,
) -> Dataset:
    """Random relation for differential tests: categorical splits, float target.

    Continuous target values keep aggregate ties measure-zero, so strict
    comparisons agree across independent implementations; ``integer_y``
    switches to small exactly-representable integers, which makes analytic
    ties exact in every summation order (a deliberate tie stressor).
    ``null_y`` leaves that fraction of target cells empty.
    """
    n_rows = n_rows or int(rng.integers(40, 500))
    n_split = n_split or int(rng.integers(1, 8))
    header = ["grp"] + [f"s{i}" for i in range(n_split)] + ["y"]
    groups = ["a", "b", "c"]
    rows = []
    for _ in range(n_rows):
        row = [groups[rng.integers(0, 3)]]
        for i in range(n_split):
            cardinality = 2 + (i % 5)
            if rng.random() < 0.05:
                row.append("")  # null cell
            else:
                row.append(f"v{int(rng.integers(0, cardinality))}")
        if null_y > 0.0 and rng.random() < null_y:
            row.append("")
        elif integer_y:
            row.append(str(int(rng.integers(-20, 21))))
        else:
            row.append(f"{rng.uniform(-500, 1000):.6f}")
        rows.append(row)
    schema_doc = {
        "aggregate": "y",
        "group_by": "grp",
        "split": [f"s{i}" for i in range(n_split)],
        "kinds": {"y": "numeric"},
    }
    return make_dataset(tmp_path, header, rows, schema_doc, name=name)


def random_task(dataset: Dataset, rng: np.random.Generator, fn_name: str, min_group: int = 2) -> Task:
    doc = {
        "query": {"agg_fn": fn_name, "filter": []},
        "claim": {"g1": "a", "g2": "b"},
        "config": {"k": 100, "m": 2, "min_group": min_group, "seed": int(rng.integers(0, 10_000))},
    }
    return parse_task_json(doc, dataset)


class VirtualClock:
    """Deterministic clock: advances a fixed step per call."""

    def __init__(self, step: float = 0.001):
        self.now = 0.0
        self.step = step

    def __call__(self) -> float:
        self.now += self.step
        return self.now
