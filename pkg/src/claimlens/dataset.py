"""CSV ingestion into an immutable dictionary-encoded columnar relation.

Every column is encoded as an int32 code array. Code 0 is reserved for nulls
(empty cells), so nulls are selectable like any other value and form their own
group in group-by passes. Numeric columns other than the aggregate target are
binned into order-of-magnitude intervals with rounded edges; the aggregate
column is kept as raw float64 (NaN for null) and additionally binned so that
distribution-based measures can treat it as categorical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

NULL_CODE = 0
DEFAULT_NULL_LABEL = "missing"

KIND_CATEGORICAL = "categorical"
KIND_NUMERIC_BINNED = "numeric-binned"
KIND_NUMERIC_RAW = "numeric-raw"


class DatasetError(Exception):
    """Raised for unreadable input files, malformed rows, or bad schemas."""


@dataclass(frozen=True)
class BinningRule:
    """Fixed-width binning with edges at ``anchor + i * width``.

    The width is a power of ten chosen from the order of magnitude of the
    value range, and the anchor is the largest multiple of the width that does
    not exceed the minimum, so bin edges land on round numbers.
    """

    width: float
    anchor: float

    def bin_index(self, value: float) -> int:
        idx = int(math.floor((value - self.anchor) / self.width))
        # Snap against the floating-point edges so each value lands in the
        # unique bin whose computed edges satisfy lo <= value < hi.
        while value < self.edge(idx):
            idx -= 1
        while value >= self.edge(idx + 1):
            idx += 1
        return idx

    def edge(self, i: int) -> float:
        return self.anchor + i * self.width

    def label(self, i: int) -> str:
        decimals = max(0, -int(math.floor(math.log10(self.width))))
        lo, hi = self.edge(i), self.edge(i + 1)
        return f"{lo:.{decimals}f}-{hi:.{decimals}f}"


def compute_binning(values: Sequence[float] | np.ndarray) -> BinningRule:
    """Derive the binning rule for a numeric column from its non-null values.

    Width is ``10 ** (floor(log10(max - min)) - 1)``, which yields between 10
    and 100 bins with round edges; a constant column gets a single unit-width
    bin anchored at ``floor(value)``.
    """
    arr = np.asarray(values, dtype=np.float64)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        raise DatasetError("cannot bin an all-null column")
    vmin = float(arr.min())
    vmax = float(arr.max())
    if vmax == vmin:
        return BinningRule(width=1.0, anchor=float(math.floor(vmin)))
    width = 10.0 ** (math.floor(math.log10(vmax - vmin)) - 1)
    anchor = width * math.floor(vmin / width)
    while anchor > vmin:
        anchor -= width
    return BinningRule(width=width, anchor=anchor)


@dataclass(frozen=True)
class Attribute:
    """Metadata for one encoded column.

    ``values`` holds the dictionary: index = code, entry = the raw string (or
    bin label) that the code stands for. Index 0 is the null slot. ``labels``
    holds the human-readable text for each code, which defaults to ``values``
    but can be overridden by the schema's label maps.
    """

    id: int
    name: str
    kind: str
    label: str
    values: tuple[str, ...]
    labels: tuple[str, ...]
    binning: BinningRule | None = None

    @property
    def distinct_count(self) -> int:
        """Distinct non-null codes present in the column."""
        return len(self.values) - 1

    def value_of(self, code: int) -> str:
        return self.values[code]

    def label_of(self, code: int) -> str:
        return self.labels[code]


@dataclass(frozen=True)
class Schema:
    aggregate: str
    group_by: str
    split: tuple[str, ...]
    kinds: dict[str, str] = field(default_factory=dict)
    labels: dict[str, str] = field(default_factory=dict)
    value_labels: dict[str, dict[str, str]] = field(default_factory=dict)
    delimiter: str = ","
    null_label: str = DEFAULT_NULL_LABEL
    multi_delimiter: dict[str, str] = field(default_factory=dict)

    def kind_of(self, name: str) -> str:
        return self.kinds.get(name, "categorical")


def load_schema(path: str | Path) -> Schema:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"cannot read schema {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"schema {path} is not valid JSON: {exc}") from exc
    for key in ("aggregate", "group_by", "split"):
        if key not in raw:
            raise DatasetError(f"schema is missing required field '{key}'")
    return Schema(
        aggregate=raw["aggregate"],
        group_by=raw["group_by"],
        split=tuple(raw["split"]),
        kinds=dict(raw.get("kinds", {})),
        labels=dict(raw.get("labels", {})),
        value_labels={k: dict(v) for k, v in raw.get("value_labels", {}).items()},
        delimiter=raw.get("delimiter", ","),
        null_label=raw.get("null_label", DEFAULT_NULL_LABEL),
        multi_delimiter=dict(raw.get("multi_delimiter", {})),
    )


class Dataset:
    """Immutable columnar relation with dictionary-encoded columns."""

    def __init__(
        self,
        attributes: list[Attribute],
        columns: list[np.ndarray],
        agg_values: np.ndarray,
        agg_attr: int,
        group_by: int,
        split_attributes: tuple[int, ...],
        null_label: str = DEFAULT_NULL_LABEL,
    ) -> None:
        if not columns:
            raise DatasetError("empty relation: no columns")
        n = len(columns[0])
        if any(len(c) != n for c in columns):
            raise DatasetError("column length mismatch")
        if n == 0:
            raise DatasetError("empty relation: no rows")
        for a in (group_by, agg_attr):
            if a in split_attributes:
                raise DatasetError("split attributes must exclude the group-by and aggregate attributes")
        self.attributes = attributes
        self.columns = columns
        self.row_count = n
        self.agg_values = agg_values
        self.agg_attr = agg_attr
        self.group_by = group_by
        self.split_attributes = tuple(split_attributes)
        self.null_label = null_label
        self._by_name = {a.name: a.id for a in attributes}
        self._fingerprint: str | None = None
        for col in self.columns:
            col.setflags(write=False)
        self.agg_values.setflags(write=False)

    @property
    def agg_is_numeric(self) -> bool:
        return self.agg_values.size > 0

    def attribute(self, name: str) -> Attribute:
        if name not in self._by_name:
            raise DatasetError(f"unknown attribute '{name}'")
        return self.attributes[self._by_name[name]]

    def code_for(self, attr_id: int, value: str | float) -> int:
        """Map a raw value (or bin label) to its dictionary code."""
        attr = self.attributes[attr_id]
        text = value if isinstance(value, str) else None
        if text is not None:
            if text in attr.values:
                return attr.values.index(text)
            if text == self.null_label:
                return NULL_CODE
        if attr.binning is not None:
            try:
                num = float(value)
            except (TypeError, ValueError):
                raise DatasetError(f"value {value!r} not found in attribute '{attr.name}'")
            lab = attr.binning.label(attr.binning.bin_index(num))
            if lab in attr.values:
                return attr.values.index(lab)
        raise DatasetError(f"value {value!r} not found in attribute '{attr.name}'")

    def decode_column(self, attr_id: int) -> list[str]:
        """Reverse the dictionary encoding of one column (null -> null label)."""
        attr = self.attributes[attr_id]
        return [attr.values[c] for c in self.columns[attr_id]]

    def fingerprint(self) -> str:
        if self._fingerprint is None:
            h = hashlib.sha256()
            meta = {
                "row_count": self.row_count,
                "agg_attr": self.agg_attr,
                "group_by": self.group_by,
                "split": list(self.split_attributes),
                "attributes": [(a.name, a.kind, list(a.values)) for a in self.attributes],
            }
            h.update(json.dumps(meta, sort_keys=True).encode("utf-8"))
            for col in self.columns:
                h.update(np.ascontiguousarray(col).tobytes())
            h.update(np.ascontiguousarray(self.agg_values).tobytes())
            self._fingerprint = h.hexdigest()
        return self._fingerprint

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row-subset view sharing the dictionary encoding (used by sampling)."""
        sub = Dataset.__new__(Dataset)
        sub.attributes = self.attributes
        sub.columns = [np.ascontiguousarray(c[indices]) for c in self.columns]
        sub.row_count = int(len(indices))
        sub.agg_values = np.ascontiguousarray(self.agg_values[indices]) if self.agg_is_numeric else self.agg_values
        sub.agg_attr = self.agg_attr
        sub.group_by = self.group_by
        sub.split_attributes = self.split_attributes
        sub.null_label = self.null_label
        sub._by_name = self._by_name
        sub._fingerprint = None
        return sub


def _encode_categorical(cells: list[str], null_label: str, overrides: dict[str, str]) -> tuple[np.ndarray, tuple[str, ...], tuple[str, ...]]:
    codes = np.empty(len(cells), dtype=np.int32)
    dictionary: dict[str, int] = {}
    values = [null_label]
    for i, cell in enumerate(cells):
        if cell == "":
            codes[i] = NULL_CODE
            continue
        code = dictionary.get(cell)
        if code is None:
            code = len(values)
            dictionary[cell] = code
            values.append(cell)
        codes[i] = code
    labels = [null_label] + [overrides.get(v, v) for v in values[1:]]
    return codes, tuple(values), tuple(labels)


def _parse_numeric(cells: list[str], name: str) -> np.ndarray:
    out = np.empty(len(cells), dtype=np.float64)
    for i, cell in enumerate(cells):
        if cell == "":
            out[i] = np.nan
            continue
        try:
            out[i] = float(cell)
        except ValueError:
            raise DatasetError(f"row {i + 2}: attribute '{name}' has non-numeric value {cell!r}")
    return out


def _encode_binned(numeric: np.ndarray, null_label: str, overrides: dict[str, str]) -> tuple[np.ndarray, tuple[str, ...], tuple[str, ...], BinningRule]:
    rule = compute_binning(numeric)
    codes = np.empty(len(numeric), dtype=np.int32)
    dictionary: dict[int, int] = {}
    values = [null_label]
    for i, v in enumerate(numeric):
        if math.isnan(v):
            codes[i] = NULL_CODE
            continue
        bin_idx = rule.bin_index(v)
        code = dictionary.get(bin_idx)
        if code is None:
            code = len(values)
            dictionary[bin_idx] = code
            values.append(rule.label(bin_idx))
        codes[i] = code
    labels = [null_label] + [overrides.get(v, v) for v in values[1:]]
    return codes, tuple(values), tuple(labels), rule


def ingest_csv(path: str | Path, schema: Schema) -> Dataset:
    """Load a CSV relation under the given schema.

    Numeric split attributes are binned; the aggregate attribute stays raw for
    aggregation and is binned only for its encoded (distribution) column.
    Empty cells become the reserved null code.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, delimiter=schema.delimiter)
            try:
                header = next(reader)
            except StopIteration:
                raise DatasetError("empty relation: no header row")
            n_fields = len(header)
            raw_columns: list[list[str]] = [[] for _ in header]
            for row_no, row in enumerate(reader, start=2):
                if len(row) != n_fields:
                    raise DatasetError(f"row {row_no}: expected {n_fields} fields, got {len(row)}")
                for j, cell in enumerate(row):
                    raw_columns[j].append(cell.strip())
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc

    if not raw_columns[0]:
        raise DatasetError("empty relation: no data rows")

    names = [h.strip() for h in header]
    index = {name: i for i, name in enumerate(names)}
    for required in (schema.aggregate, schema.group_by, *schema.split):
        if required not in index:
            where = "split_attrs" if required in schema.split else "schema"
            raise DatasetError(f"unknown attribute '{required}' in {where}: not a CSV column")
    if schema.aggregate in schema.split or schema.group_by in schema.split:
        raise DatasetError("split attributes must exclude the group-by and aggregate attributes")

    for name, delim in schema.multi_delimiter.items():
        if name in index:
            col = raw_columns[index[name]]
            raw_columns[index[name]] = [c.split(delim, 1)[0].strip() for c in col]

    attributes: list[Attribute] = []
    columns: list[np.ndarray] = []
    agg_values = np.empty(0, dtype=np.float64)
    for aid, name in enumerate(names):
        cells = raw_columns[aid]
        overrides = schema.value_labels.get(name, {})
        text_label = schema.labels.get(name, name)
        is_agg = name == schema.aggregate
        if schema.kind_of(name) == "numeric":
            numeric = _parse_numeric(cells, name)
            if np.all(np.isnan(numeric)):
                raise DatasetError(f"attribute '{name}' is all-null; cannot bin")
            codes, values, labels, rule = _encode_binned(numeric, schema.null_label, overrides)
            kind = KIND_NUMERIC_RAW if is_agg else KIND_NUMERIC_BINNED
            attributes.append(Attribute(aid, name, kind, text_label, values, labels, rule))
            if is_agg:
                agg_values = numeric
        else:
            codes, values, labels = _encode_categorical(cells, schema.null_label, overrides)
            attributes.append(Attribute(aid, name, KIND_CATEGORICAL, text_label, values, labels))
        columns.append(codes)

    split_ids = tuple(index[name] for name in schema.split)
    return Dataset(
        attributes=attributes,
        columns=columns,
        agg_values=agg_values,
        agg_attr=index[schema.aggregate],
        group_by=index[schema.group_by],
        split_attributes=split_ids,
        null_label=schema.null_label,
    )


def combo_keys(dataset: Dataset, combo: Sequence[int], rows: np.ndarray | None = None) -> np.ndarray:
    """Mixed-radix combined key of the combo's code columns (int64)."""
    cards = [len(dataset.attributes[a].values) for a in combo]
    key = None
    for a, card in zip(combo, cards):
        col = dataset.columns[a] if rows is None else dataset.columns[a][rows]
        col = col.astype(np.int64)
        key = col if key is None else key * card + col
    assert key is not None
    return key


def split_key(key: int, dataset: Dataset, combo: Sequence[int]) -> tuple[int, ...]:
    """Invert :func:`combo_keys` for a single combined key."""
    cards = [len(dataset.attributes[a].values) for a in combo]
    codes = []
    for card in reversed(cards):
        codes.append(int(key % card))
        key //= card
    return tuple(reversed(codes))


def group_sizes(dataset: Dataset, combo: Sequence[int]) -> dict[tuple[int, ...], int]:
    """Exact group-by counts over all rows; nulls form their own group."""
    if not combo:
        raise DatasetError("combo must be non-empty")
    for a in combo:
        if a not in dataset.split_attributes:
            raise DatasetError(f"attribute id {a} is not a split attribute")
    keys = combo_keys(dataset, combo)
    uniq, counts = np.unique(keys, return_counts=True)
    return {split_key(int(k), dataset, combo): int(c) for k, c in zip(uniq, counts)}


def write_labels_manifest(dataset: Dataset, path: str | Path) -> None:
    """Dump the text mapping needed by embedding exporters.

    Lists, per split attribute, the labels of every code present in its
    column (including the null label when nulls occur), plus the aggregate
    and group-by attribute labels. Split entries come in combination
    enumeration order (ascending attribute id) so exporters can emit
    multi-attribute label concatenations with matching part order.
    """
    split_entries = []
    for aid in sorted(dataset.split_attributes):
        attr = dataset.attributes[aid]
        present = np.unique(dataset.columns[aid])
        split_entries.append(
            {
                "name": attr.name,
                "label": attr.label,
                "value_labels": [attr.labels[int(c)] for c in present],
            }
        )
    agg = dataset.attributes[dataset.agg_attr]
    gb = dataset.attributes[dataset.group_by]
    doc = {
        "aggregate": {"name": agg.name, "label": agg.label},
        "group_by": {"name": gb.name, "label": gb.label},
        "split": split_entries,
        "null_label": dataset.null_label,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
