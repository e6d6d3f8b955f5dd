"""Black-box component: a deterministic random forest plus prediction-file adapters.

The forest grows CART-style trees on bootstrap resamples of its training
rows, sampling sqrt(d) candidate features per split and scoring them with
Gini impurity. All randomness for tree t derives from (seed, t), so tree t
is identical no matter how many trees the forest has, and the whole
predictor is a pure function of (dataset, train rows, config).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import bitset
from .data import BinaryDataset


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 10
    min_samples_split: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_samples_split < 2:
            raise ValueError(f"min_samples_split must be >= 2, got {self.min_samples_split}")


class _Tree:
    """Flat-array binary tree over 0/1 features: go left if feature is 0."""

    __slots__ = ("feature", "left", "right", "label")

    def __init__(self):
        self.feature: list[int] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.label: list[int] = []  # -1 for internal nodes

    def add_leaf(self, label: int) -> int:
        self.feature.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        self.label.append(label)
        return len(self.label) - 1

    def add_split(self, feature: int) -> int:
        self.feature.append(feature)
        self.left.append(-1)
        self.right.append(-1)
        self.label.append(-1)
        return len(self.label) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(X), dtype=bool)
        self._route(X, np.arange(len(X)), 0, out)
        return out

    def _route(self, X, idx, node, out):
        if self.label[node] >= 0:
            out[idx] = bool(self.label[node])
            return
        go_right = X[idx, self.feature[node]]
        self._route(X, idx[~go_right], self.left[node], out)
        self._route(X, idx[go_right], self.right[node], out)


def _grow_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, rng) -> _Tree:
    n, d = X.shape
    k = max(1, int(np.sqrt(d)))
    tree = _Tree()

    def build(idx: np.ndarray, depth: int) -> int:
        n_pos = int(y[idx].sum())
        n_node = len(idx)
        if (
            depth >= cfg.max_depth
            or n_node < cfg.min_samples_split
            or n_pos == 0
            or n_pos == n_node
        ):
            return tree.add_leaf(1 if 2 * n_pos >= n_node else 0)
        feats = np.sort(rng.choice(d, size=min(k, d), replace=False))
        sub = X[np.ix_(idx, feats)]
        n1 = sub.sum(axis=0)
        n0 = n_node - n1
        pos1 = (sub & y[idx, None]).sum(axis=0)
        pos0 = n_pos - pos1
        valid = (n0 > 0) & (n1 > 0)
        if not valid.any():
            return tree.add_leaf(1 if 2 * n_pos >= n_node else 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            g0 = 1.0 - (pos0 / n0) ** 2 - ((n0 - pos0) / n0) ** 2
            g1 = 1.0 - (pos1 / n1) ** 2 - ((n1 - pos1) / n1) ** 2
        score = np.where(valid, (n0 * g0 + n1 * g1) / n_node, np.inf)
        best = int(np.argmin(score))
        feature = int(feats[best])
        node = tree.add_split(feature)
        go_right = X[idx, feature]
        left = build(idx[~go_right], depth + 1)
        right = build(idx[go_right], depth + 1)
        tree.left[node] = left
        tree.right[node] = right
        return node

    build(np.arange(n), 0)
    return tree


class Predictor:
    """Deterministic 0/1 predictor over rows of one dataset.

    ``fingerprint_bits`` caches the predictions on a designated train index
    list; it is what duplicate detection compares across models.
    """

    def __init__(self, ds: BinaryDataset, fingerprint_indices):
        self.ds = ds
        self.fingerprint_indices = tuple(int(i) for i in fingerprint_indices)
        self._fingerprint: int | None = None

    def predict(self, indices) -> np.ndarray:
        raise NotImplementedError

    @property
    def fingerprint_bits(self) -> int:
        if self._fingerprint is None:
            self._fingerprint = bitset.from_bools(self.predict(self.fingerprint_indices))
        return self._fingerprint

    @property
    def fingerprint_length(self) -> int:
        return len(self.fingerprint_indices)


class ConstantPredictor(Predictor):
    def __init__(self, ds, fingerprint_indices, label: int):
        super().__init__(ds, fingerprint_indices)
        self.label = int(label)

    def predict(self, indices) -> np.ndarray:
        return np.full(len(list(indices)), bool(self.label))

    def to_json(self):
        return {"version": 1, "kind": "constant", "label": self.label}


class TablePredictor(Predictor):
    """Replays a fixed prediction per dataset row (external-model adapter)."""

    def __init__(self, ds, fingerprint_indices, values: np.ndarray):
        super().__init__(ds, fingerprint_indices)
        self.values = np.asarray(values, dtype=bool)

    def predict(self, indices) -> np.ndarray:
        return self.values[np.asarray(list(indices), dtype=np.int64)]

    def to_json(self):
        return {
            "version": 1,
            "kind": "table",
            "n": len(self.values),
            "bits": bitset.to_bytes(bitset.from_bools(self.values), len(self.values)).hex(),
        }


class ForestPredictor(Predictor):
    def __init__(self, ds, fingerprint_indices, trees: list[_Tree], cfg: ForestConfig):
        super().__init__(ds, fingerprint_indices)
        self.trees = trees
        self.cfg = cfg

    def predict(self, indices) -> np.ndarray:
        rows = np.asarray(list(indices), dtype=np.int64)
        X = self.ds.features[rows]
        votes = np.zeros(len(rows), dtype=np.int64)
        for tree in self.trees:
            votes += tree.predict(X)
        return 2 * votes >= len(self.trees)  # tie -> label 1

    def to_json(self):
        return {
            "version": 1,
            "kind": "forest",
            "cfg": {
                "n_trees": self.cfg.n_trees,
                "max_depth": self.cfg.max_depth,
                "min_samples_split": self.cfg.min_samples_split,
                "seed": self.cfg.seed,
            },
            "trees": [
                {"feature": t.feature, "left": t.left, "right": t.right, "label": t.label}
                for t in self.trees
            ],
        }


def train_forest(ds: BinaryDataset, train, cfg: ForestConfig, fingerprint_indices=None) -> Predictor:
    """Fit the forest on the given train rows (a multiset is fine).

    A single-label train set degrades to a constant predictor with a
    warning. ``fingerprint_indices`` defaults to the sorted unique train
    rows; pass the canonical train split when predictors from different
    resamples must be comparable.
    """
    rows = np.asarray(list(train), dtype=np.int64)
    if len(rows) == 0:
        raise ValueError("train set is empty")
    if fingerprint_indices is None:
        fingerprint_indices = sorted(set(int(i) for i in rows))
    y = ds.labels[rows]
    if y.all() or not y.any():
        warnings.warn("single-label train set: black box degrades to a constant predictor")
        return ConstantPredictor(ds, fingerprint_indices, int(y[0]) if len(y) else 0)
    X = ds.features[rows]
    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng([cfg.seed, t])
        boot = rng.integers(0, len(rows), size=len(rows))
        trees.append(_grow_tree(X[boot], y[boot], cfg, rng))
    return ForestPredictor(ds, fingerprint_indices, trees, cfg)


def load_predictions(path, n: int, ds: BinaryDataset, fingerprint_indices) -> Predictor:
    """Adapter for an external model: CSV of (index, prediction) rows.

    The file must cover every index 0..n-1 exactly once with 0/1 values.
    """
    values = np.full(n, -1, dtype=np.int64)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            first = row[0].strip().lower()
            if first in ("index", "idx"):
                continue  # optional header
            if len(row) < 2:
                raise ValueError(f"prediction file row has {len(row)} fields, expected 2")
            idx = int(row[0])
            if not (0 <= idx < n):
                raise ValueError(f"prediction index {idx} out of range [0, {n})")
            val = row[1].strip()
            if val not in ("0", "1"):
                raise ValueError(f"non-binary prediction {val!r} at index {idx}")
            if values[idx] >= 0:
                raise ValueError(f"duplicate prediction for index {idx}")
            values[idx] = int(val)
    missing = np.flatnonzero(values < 0)
    if len(missing):
        raise ValueError(f"prediction file misses {len(missing)} indices (first: {missing[0]})")
    return TablePredictor(ds, fingerprint_indices, values.astype(bool))


def agreement(p1: Predictor, p2: Predictor) -> float:
    """Fraction of fingerprint positions where the two predictors agree."""
    if p1.fingerprint_length != p2.fingerprint_length:
        raise ValueError(
            f"fingerprint lengths differ: {p1.fingerprint_length} vs {p2.fingerprint_length}"
        )
    same = p1.fingerprint_length - (p1.fingerprint_bits ^ p2.fingerprint_bits).bit_count()
    return same / p1.fingerprint_length


def predictor_from_json(obj: dict, ds: BinaryDataset, fingerprint_indices) -> Predictor:
    if obj.get("version") != 1:
        raise ValueError(f"unsupported predictor dump version {obj.get('version')}")
    kind = obj["kind"]
    if kind == "constant":
        return ConstantPredictor(ds, fingerprint_indices, obj["label"])
    if kind == "table":
        values = bitset.to_bools(bitset.from_bytes(bytes.fromhex(obj["bits"])), obj["n"])
        return TablePredictor(ds, fingerprint_indices, values)
    if kind == "forest":
        cfg = ForestConfig(**obj["cfg"])
        trees = []
        for td in obj["trees"]:
            t = _Tree()
            t.feature = list(td["feature"])
            t.left = list(td["left"])
            t.right = list(td["right"])
            t.label = list(td["label"])
            trees.append(t)
        return ForestPredictor(ds, fingerprint_indices, trees, cfg)
    raise ValueError(f"unknown predictor kind {kind!r}")


def predictor_to_json(p: Predictor) -> dict:
    return p.to_json()
