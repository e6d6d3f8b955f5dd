"""Tabular ingestion: CSV loading, binarization, protected groups, splits, resampling.

The binarizer turns every column into 0/1 indicator features (quantile
intervals for numeric columns, one indicator per level for categorical
columns) and builds, for each configured sensitive attribute, a partition
of the examples into named groups. Quantile edges and the one-hot
vocabulary are fit on the full dataset so that train and test share one
encoding and the mined rule universe is stable across resamples.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bitset

_CACHE_MAGIC = b"HABD"
_CACHE_VERSION = 1


@dataclass(frozen=True)
class RawTable:
    """Parsed CSV: string-valued feature columns plus a 0/1 label vector."""

    column_names: tuple[str, ...]
    columns: dict[str, list[str]]
    labels: np.ndarray  # bool, length n_rows
    n_rows: int
    numeric_columns: tuple[str, ...]  # columns whose non-missing values all parse as float


@dataclass(frozen=True)
class GroupSpec:
    """How to partition one sensitive column into named groups.

    Categorical columns keep either the explicitly listed categories or the
    ``top_k`` most frequent ones, merging everything else into ``other_label``.
    Numeric columns are partitioned by the same quantile bins used for
    binarization.
    """

    column: str
    top: tuple[str, ...] = ()
    top_k: int = 2
    other_label: str = "Other"


@dataclass
class BinaryDataset:
    """Binarized feature matrix with labels and per-attribute group partitions."""

    feature_names: tuple[str, ...]
    features: np.ndarray  # (n, d) bool
    labels: np.ndarray  # (n,) bool
    group_names: dict[str, tuple[str, ...]]  # attribute -> group labels
    group_ids: dict[str, np.ndarray]  # attribute -> (n,) int, index into group_names
    _feature_bits: dict[str, int] = field(default_factory=dict, repr=False)
    _label_bits: int | None = field(default=None, repr=False)
    _row_classes: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def feature_index(self, name: str) -> int:
        return self.feature_names.index(name)

    def feature_bits(self, name: str) -> int:
        """Bitset of the named indicator column (bit i = value in row i)."""
        if name not in self._feature_bits:
            self._feature_bits[name] = bitset.from_bools(self.features[:, self.feature_index(name)])
        return self._feature_bits[name]

    def label_bits(self) -> int:
        if self._label_bits is None:
            self._label_bits = bitset.from_bools(self.labels)
        return self._label_bits

    def row_class_ids(self) -> np.ndarray:
        """Equivalence-class id per row; equal ids <=> identical feature vectors."""
        if self._row_classes is None:
            packed = np.packbits(self.features, axis=1)
            _, inverse = np.unique(packed, axis=0, return_inverse=True)
            self._row_classes = inverse.astype(np.int64)
        return self._row_classes

    def group_masks(self, attribute: str) -> dict[str, np.ndarray]:
        names = self.group_names[attribute]
        ids = self.group_ids[attribute]
        return {name: ids == k for k, name in enumerate(names)}


@dataclass(frozen=True)
class SplitSpec:
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    seed: int


def load_csv(path, label_column: str, positive_value: str) -> RawTable:
    """Read a delimited text file with a header row into a RawTable.

    The label column is mapped to 1 where it equals ``positive_value`` and
    removed from the feature columns. Rows whose label is missing are
    dropped; missing feature values stay as the empty string and later
    become their own categorical level.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot open dataset file {path!r}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path!r} is empty, expected a header row")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise ValueError(f"label column not found: {label_column!r} (columns: {header})")
        label_pos = header.index(label_column)
        feature_names = tuple(h for i, h in enumerate(header) if i != label_pos)
        cols: dict[str, list[str]] = {name: [] for name in feature_names}
        labels: list[bool] = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"row {len(labels) + 1} has {len(row)} fields, expected {len(header)}")
            raw_label = row[label_pos].strip()
            if raw_label == "":
                continue  # missing label: drop the row, keep n stable otherwise
            labels.append(raw_label == positive_value)
            for i, name in enumerate(header):
                if i != label_pos:
                    cols[name].append(row[i].strip())
    y = np.array(labels, dtype=bool)
    if len(y) == 0:
        raise ValueError(f"{path!r} has no rows with a label")
    if y.all() or not y.any():
        raise ValueError(
            f"label column {label_column!r} is not binary after mapping: "
            f"{int(y.sum())} of {len(y)} rows equal positive value {positive_value!r}"
        )
    numeric = tuple(name for name in feature_names if _parses_numeric(cols[name]))
    return RawTable(
        column_names=feature_names,
        columns=cols,
        labels=y,
        n_rows=len(y),
        numeric_columns=numeric,
    )


def _parses_numeric(values: list[str]) -> bool:
    seen = False
    for v in values:
        if v == "":
            continue
        try:
            float(v)
        except ValueError:
            return False
        seen = True
    return seen


def _quantile_edges(values: np.ndarray, n_bins: int) -> list[float]:
    if values.size == 0 or values.min() == values.max():
        return []  # constant column: no edge separates anything
    qs = [k / n_bins for k in range(1, n_bins)]
    edges = [float(np.quantile(values, q)) for q in qs]
    # collapse duplicate edges from heavily tied columns
    uniq: list[float] = []
    for e in edges:
        if not uniq or e > uniq[-1]:
            uniq.append(e)
    return uniq


def _numeric_bin_index(vals: np.ndarray, edges: list[float]) -> np.ndarray:
    # value equal to an edge goes to the lower bin: count edges strictly below
    return np.searchsorted(np.asarray(edges), vals, side="left")


def _bin_name(column: str, edges: list[float], k: int) -> str:
    if not edges:
        return f"{column}=any"
    if k == 0:
        return f"{column}<{edges[0]:g}"
    if k == len(edges):
        return f"{column}>={edges[-1]:g}"
    return f"{edges[k - 1]:g}<={column}<{edges[k]:g}"


_NUMERIC_GROUP_NAMES = {2: ("Low", "High"), 3: ("Low", "Middle", "High")}


def binarize(
    table: RawTable,
    n_bins: int = 3,
    group_specs: tuple[GroupSpec, ...] = (),
    numeric_columns: tuple[str, ...] | None = None,
) -> BinaryDataset:
    """Binarize a RawTable and build group partitions for sensitive attributes.

    Numeric columns become ``n_bins`` quantile-interval indicators
    (left-closed, right-open, last bin closed; boundary ties go to the lower
    bin). Categorical columns get one indicator per observed level; missing
    values are their own level. Binarization never looks at the labels.
    """
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    numeric = set(table.numeric_columns if numeric_columns is None else numeric_columns)
    for spec in group_specs:
        if spec.column not in table.columns:
            raise ValueError(f"sensitive column not found: {spec.column!r}")

    n = table.n_rows
    names: list[str] = []
    cols: list[np.ndarray] = []
    numeric_bins: dict[str, np.ndarray] = {}  # column -> per-row bin index (-1 = missing)
    numeric_n_bins: dict[str, int] = {}

    for column in table.column_names:
        raw = table.columns[column]
        if column in numeric:
            missing = np.array([v == "" for v in raw], dtype=bool)
            vals = np.array([float(v) if v != "" else np.nan for v in raw], dtype=float)
            finite = vals[~missing]
            edges = _quantile_edges(finite, n_bins)
            if not edges:
                warnings.warn(f"numeric column {column!r} is constant; emitting one always-true indicator")
                names.append(_bin_name(column, edges, 0))
                cols.append(~missing)
                idx = np.where(missing, -1, 0)
            else:
                idx = _numeric_bin_index(vals, edges)
                idx[missing] = -1
                for k in range(len(edges) + 1):
                    names.append(_bin_name(column, edges, k))
                    cols.append(idx == k)
            if missing.any():
                names.append(f"{column}=missing")
                cols.append(missing)
            numeric_bins[column] = idx
            numeric_n_bins[column] = len(edges) + 1
        else:
            levels = sorted({v if v != "" else "missing" for v in raw})
            level_of = np.array([v if v != "" else "missing" for v in raw])
            for level in levels:
                names.append(f"{column}={level}")
                cols.append(level_of == level)

    features = np.column_stack(cols).astype(bool)

    group_names: dict[str, tuple[str, ...]] = {}
    group_ids: dict[str, np.ndarray] = {}
    for spec in group_specs:
        if spec.column in numeric:
            idx = numeric_bins[spec.column]
            k = numeric_n_bins[spec.column]
            labels = _NUMERIC_GROUP_NAMES.get(k, tuple(f"bin{j}" for j in range(k)))
            has_missing = bool((idx < 0).any())
            if has_missing:
                labels = labels + (spec.other_label,)
                ids = np.where(idx < 0, k, idx)
            else:
                ids = idx.copy()
        else:
            raw = [v if v != "" else "missing" for v in table.columns[spec.column]]
            if spec.top:
                kept = list(spec.top)
            else:
                counts: dict[str, int] = {}
                for v in raw:
                    counts[v] = counts.get(v, 0) + 1
                kept = sorted(counts, key=lambda v: (-counts[v], v))[: spec.top_k]
            rest = sorted(set(raw) - set(kept))
            labels = tuple(kept) + ((spec.other_label,) if rest else ())
            pos = {v: i for i, v in enumerate(kept)}
            ids = np.array([pos.get(v, len(kept)) for v in raw], dtype=np.int64)
        nonempty = sum(1 for g in range(len(labels)) if (ids == g).any())
        if nonempty < 2:
            raise ValueError(
                f"sensitive attribute {spec.column!r} has {nonempty} nonempty group(s); "
                "need at least 2 for disparity metrics"
            )
        group_names[spec.column] = tuple(labels)
        group_ids[spec.column] = ids.astype(np.int64)

    return BinaryDataset(
        feature_names=tuple(names),
        features=features,
        labels=table.labels.copy(),
        group_names=group_names,
        group_ids=group_ids,
    )


def split(ds: BinaryDataset, seed: int) -> SplitSpec:
    """Deterministic 80/20 train/test split (test size floored, at least 1)."""
    n = ds.n
    if n < 5:
        raise ValueError(f"need at least 5 examples to split, got {n}")
    n_test = max(1, n // 5)
    perm = np.random.default_rng(seed).permutation(n)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return SplitSpec(tuple(int(i) for i in train), tuple(int(i) for i in test), seed)


def bootstrap_sample(ds: BinaryDataset, indices, seed: int) -> list[int]:
    """|indices| draws with replacement from indices; deterministic per seed."""
    indices = list(indices)
    if not indices:
        raise ValueError("cannot resample an empty index list")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(indices), size=len(indices))
    return [indices[int(j)] for j in draws]


# ---------------------------------------------------------------------------
# dataset manifest (JSON config) and binary cache


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("csv", "label_column", "positive_value"):
        if key not in manifest:
            raise ValueError(f"dataset manifest missing required key {key!r}")
    return manifest


def dataset_from_manifest(manifest: dict, csv_path=None) -> BinaryDataset:
    """Build a BinaryDataset from a manifest dict (see load_manifest)."""
    table = load_csv(
        csv_path if csv_path is not None else manifest["csv"],
        manifest["label_column"],
        str(manifest["positive_value"]),
    )
    specs = tuple(
        GroupSpec(
            column=s["column"],
            top=tuple(s.get("top", ())),
            top_k=int(s.get("top_k", 2)),
            other_label=s.get("other_label", "Other"),
        )
        for s in manifest.get("sensitive", [])
    )
    numeric = manifest.get("numeric_columns")
    numeric = tuple(numeric) if numeric is not None else table.numeric_columns
    # columns listed as categorical are treated as labels even if they parse
    # as numbers (codes, zip-style identifiers)
    categorical = set(manifest.get("categorical_columns", ()))
    numeric = tuple(c for c in numeric if c not in categorical)
    return binarize(
        table,
        n_bins=int(manifest.get("n_bins", 3)),
        group_specs=specs,
        numeric_columns=numeric,
    )


def save_dataset(ds: BinaryDataset, path) -> None:
    """Write the binarized dataset: JSON header + packed little-endian bitsets."""
    header = {
        "version": _CACHE_VERSION,
        "n": ds.n,
        "feature_names": list(ds.feature_names),
        "groups": {attr: list(names) for attr, names in ds.group_names.items()},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        for j in range(ds.n_features):
            fh.write(bitset.to_bytes(bitset.from_bools(ds.features[:, j]), ds.n))
        fh.write(bitset.to_bytes(ds.label_bits(), ds.n))
        for attr in header["groups"]:
            for g in range(len(ds.group_names[attr])):
                fh.write(bitset.to_bytes(bitset.from_bools(ds.group_ids[attr] == g), ds.n))


def load_dataset(path) -> BinaryDataset:
    with open(path, "rb") as fh:
        if fh.read(4) != _CACHE_MAGIC:
            raise ValueError(f"{path!r} is not a dataset cache file")
        size = int.from_bytes(fh.read(4), "little")
        header = json.loads(fh.read(size).decode("utf-8"))
        if header.get("version") != _CACHE_VERSION:
            raise ValueError(f"unsupported dataset cache version {header.get('version')}")
        n = header["n"]
        width = (n + 7) // 8
        feature_names = tuple(header["feature_names"])
        cols = [bitset.to_bools(bitset.from_bytes(fh.read(width)), n) for _ in feature_names]
        labels = bitset.to_bools(bitset.from_bytes(fh.read(width)), n)
        group_names: dict[str, tuple[str, ...]] = {}
        group_ids: dict[str, np.ndarray] = {}
        for attr, names in header["groups"].items():
            ids = np.full(n, -1, dtype=np.int64)
            for g in range(len(names)):
                mask = bitset.to_bools(bitset.from_bytes(fh.read(width)), n)
                ids[mask] = g
            group_names[attr] = tuple(names)
            group_ids[attr] = ids
    features = np.column_stack(cols).astype(bool) if cols else np.zeros((n, 0), dtype=bool)
    return BinaryDataset(
        feature_names=feature_names,
        features=features,
        labels=labels,
        group_names=group_names,
        group_ids=group_ids,
    )


def save_split(s: SplitSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"train": list(s.train_indices), "test": list(s.test_indices), "seed": s.seed},
            fh,
        )


def load_split(path) -> SplitSpec:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return SplitSpec(tuple(obj["train"]), tuple(obj["test"]), int(obj["seed"]))
