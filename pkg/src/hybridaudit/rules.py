"""Candidate antecedent mining.

Antecedents are conjunctions of at most two literals over the binarized
features. Mining runs FP-Growth over the doubled literal set (every
indicator and its negation), so conditions like ``priors=0 is false`` are
expressible. The retained universe is sorted by descending support and
truncated to the ``max_rules`` largest-support antecedents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import bitset
from .data import BinaryDataset


@dataclass(frozen=True)
class Antecedent:
    """A conjunction of (feature name, required 0/1 value) literals.

    ``support`` is a positional bitset over the index list the universe was
    mined on; ``id`` is the antecedent's rank in the universe (-1 for the
    synthetic constant-true antecedent used as an initial incumbent).
    """

    literals: tuple[tuple[str, int], ...]
    support: int
    id: int = -1

    @property
    def count(self) -> int:
        return self.support.bit_count()

    def describe(self) -> str:
        if not self.literals:
            return "true"
        return " and ".join(f if v else f"not {f}" for f, v in self.literals)


def constant_true(n: int) -> Antecedent:
    """The always-true antecedent over n examples (initial incumbents only)."""
    return Antecedent(literals=(), support=bitset.all_ones(n), id=-1)


@dataclass(frozen=True)
class RuleUniverse:
    antecedents: tuple[Antecedent, ...]
    min_support: float
    max_rules: int
    n_train: int

    def __len__(self) -> int:
        return len(self.antecedents)


def literal_bits(ds: BinaryDataset, rows: np.ndarray, feature: str, value: int) -> int:
    col = ds.features[rows, ds.feature_index(feature)]
    return bitset.from_bools(col if value else ~col)


def antecedent_mask(ds: BinaryDataset, rows: np.ndarray, antecedent: Antecedent) -> np.ndarray:
    """Boolean mask over ``rows`` of the examples the antecedent matches."""
    mask = np.ones(len(rows), dtype=bool)
    for feature, value in antecedent.literals:
        col = ds.features[rows, ds.feature_index(feature)]
        mask &= col if value else ~col
    return mask


def support_of(a: Antecedent, subset, n: int | None = None) -> int:
    """|support ∩ subset| via bitset intersection popcount.

    ``subset`` is a list of positions into the index list the antecedent's
    support was computed over.
    """
    width = n if n is not None else (max(subset) + 1 if len(subset) else 0)
    return (a.support & bitset.from_indices(subset, width)).bit_count()


# ---------------------------------------------------------------------------
# FP-Growth over doubled literals


class _FPNode:
    __slots__ = ("item", "count", "parent", "children", "link")

    def __init__(self, item, parent):
        self.item = item
        self.count = 0
        self.parent = parent
        self.children = {}
        self.link = None


def _build_tree(transactions, min_count):
    """Returns (header table: item -> first node, item counts) or None if nothing is frequent."""
    counts: dict[int, int] = {}
    for items, weight in transactions:
        for it in items:
            counts[it] = counts.get(it, 0) + weight
    frequent = {it: c for it, c in counts.items() if c >= min_count}
    if not frequent:
        return None, frequent
    # canonical item order: descending count, ascending item id
    order = {it: rank for rank, it in enumerate(sorted(frequent, key=lambda it: (-frequent[it], it)))}
    root = _FPNode(None, None)
    header: dict[int, _FPNode] = {}
    tails: dict[int, _FPNode] = {}
    for items, weight in transactions:
        path = sorted((it for it in items if it in frequent), key=order.__getitem__)
        node = root
        for it in path:
            child = node.children.get(it)
            if child is None:
                child = _FPNode(it, node)
                node.children[it] = child
                if it in tails:
                    tails[it].link = child
                else:
                    header[it] = child
                tails[it] = child
            child.count += weight
            node = child
    return header, frequent


def _mine_tree(transactions, min_count, max_len, suffix, out):
    header, frequent = _build_tree(transactions, min_count)
    if header is None:
        return
    for item in sorted(frequent):
        itemset = suffix + (item,)
        out[itemset] = frequent[item]
        if len(itemset) >= max_len:
            continue
        # conditional pattern base: prefix paths of every node carrying `item`
        base = []
        node = header.get(item)
        while node is not None:
            path = []
            parent = node.parent
            while parent is not None and parent.item is not None:
                path.append(parent.item)
                parent = parent.parent
            if path:
                base.append((path, node.count))
            node = node.link
        if base:
            _mine_tree(base, min_count, max_len, itemset, out)


def frequent_itemsets(transactions, min_count: int, max_len: int) -> dict[tuple[int, ...], int]:
    """FP-Growth: all itemsets of size <= max_len with count >= min_count.

    ``transactions`` is a list of item-id lists. Keys of the result are
    sorted item tuples.
    """
    weighted = [(t, 1) for t in transactions]
    raw: dict[tuple[int, ...], int] = {}
    _mine_tree(weighted, min_count, max_len, (), raw)
    return {tuple(sorted(k)): v for k, v in raw.items()}


def mine_antecedents(
    ds: BinaryDataset,
    train,
    min_support: float = 0.01,
    max_card: int = 2,
    max_rules: int = 300,
) -> RuleUniverse:
    """Mine the frequent <=max_card literal conjunctions on the train rows.

    Literals range over the doubled feature set (each indicator and its
    negation). Truncation keeps the ``max_rules`` antecedents with the
    largest support; ties break on lexicographic literal order.
    """
    if not (0 < min_support < 1):
        raise ValueError(f"min_support must be in (0, 1), got {min_support}")
    if max_card not in (1, 2):
        raise ValueError(f"max_card must be 1 or 2, got {max_card}")
    if max_rules < 1:
        raise ValueError(f"max_rules must be >= 1, got {max_rules}")
    rows = np.asarray(list(train), dtype=np.int64)
    m = len(rows)
    min_count = min_support * m

    # item 2j = feature j is 1, item 2j+1 = feature j is 0
    X = ds.features[rows]
    transactions = [
        [2 * j + (0 if X[i, j] else 1) for j in range(ds.n_features)] for i in range(m)
    ]
    itemsets = frequent_itemsets(transactions, min_count=int(np.ceil(min_count - 1e-9)), max_len=max_card)

    candidates = []
    for items, count in itemsets.items():
        features = {it // 2 for it in items}
        if len(features) != len(items):
            continue  # contradictory pair on one feature (count 0, defensive)
        literals = tuple(
            sorted(((ds.feature_names[it // 2], 1 - (it % 2)) for it in items))
        )
        candidates.append((literals, count))
    if not candidates:
        raise ValueError(
            f"empty rule universe: no conjunction of <= {max_card} literals reaches support {min_support}"
        )

    candidates.sort(key=lambda lc: (-lc[1], lc[0]))
    kept = candidates[:max_rules]
    antecedents = []
    for rank, (literals, count) in enumerate(kept):
        support = _conjunction_bits(ds, rows, literals)
        assert support.bit_count() == count
        antecedents.append(Antecedent(literals=literals, support=support, id=rank))
    return RuleUniverse(
        antecedents=tuple(antecedents),
        min_support=min_support,
        max_rules=max_rules,
        n_train=m,
    )


def _conjunction_bits(ds, rows, literals) -> int:
    mask = np.ones(len(rows), dtype=bool)
    for feature, value in literals:
        col = ds.features[rows, ds.feature_index(feature)]
        mask &= col if value else ~col
    return bitset.from_bools(mask)


def restrict_universe(universe: RuleUniverse, ds: BinaryDataset, rows) -> list[int]:
    """Support bitsets of every universe antecedent over a new index list.

    Used to reuse one pre-mined universe across bootstrap resamples; ids and
    ordering are unchanged, only supports are recomputed.
    """
    rows = np.asarray(list(rows), dtype=np.int64)
    return [_conjunction_bits(ds, rows, a.literals) for a in universe.antecedents]


# ---------------------------------------------------------------------------
# cache


def save_universe(universe: RuleUniverse, path) -> None:
    obj = {
        "min_support": universe.min_support,
        "max_rules": universe.max_rules,
        "n_train": universe.n_train,
        "antecedents": [
            {"literals": [[f, v] for f, v in a.literals], "count": a.count} for a in universe.antecedents
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)


def load_universe(path, ds: BinaryDataset, train) -> RuleUniverse:
    """Reload a mined universe, recomputing supports on the given train rows."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    rows = np.asarray(list(train), dtype=np.int64)
    antecedents = []
    for rank, entry in enumerate(obj["antecedents"]):
        literals = tuple((f, int(v)) for f, v in entry["literals"])
        support = _conjunction_bits(ds, rows, literals)
        if support.bit_count() != entry["count"]:
            raise ValueError(
                f"rule cache does not match dataset: antecedent {literals} has support "
                f"{support.bit_count()}, cache says {entry['count']}"
            )
        antecedents.append(Antecedent(literals=literals, support=support, id=rank))
    return RuleUniverse(
        antecedents=tuple(antecedents),
        min_support=float(obj["min_support"]),
        max_rules=int(obj["max_rules"]),
        n_train=int(obj["n_train"]),
    )
