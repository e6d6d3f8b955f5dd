"""Exact prefix search: branch and bound over ordered rule lists.

Two objective modes are supported. In "pre" mode the black box does not
exist yet, so uncaptured examples are charged the best error any
deterministic classifier could still achieve on them (the inconsistent-rows
floor). In "post" mode a pre-trained black box is given and uncaptured
examples are charged its actual errors. Both modes share the penalty
``lam`` per rule and ``beta`` per deferred example.

Incumbents must satisfy two hard constraints: transparency at least
``c_min`` and, when a sensitive attribute is configured, a capture-coverage
gap across its groups of at most ``eta``. The constraints gate incumbent
updates only; they never prune exploration, because the coverage gap is not
monotone under prefix extension.

Key structural fact used throughout: examples with identical feature
vectors are captured identically by every antecedent, so rule capture never
splits an equivalence class. This makes the inconsistent-rows floor of any
capture complement a single popcount against a precomputed "minority
members" bitset, and it makes the post-mode bound per class
min(black-box errors, class minority count) exact.
"""

from __future__ import annotations

import heapq
import json
import time
from dataclasses import dataclass

import numpy as np
import psutil

from . import bitset
from .blackbox import ConstantPredictor, ForestConfig, Predictor, train_forest
from .data import BinaryDataset
from .hybrid import HybridModel, Prefix, Provenance
from .rules import Antecedent, RuleUniverse, antecedent_mask, constant_true


@dataclass(frozen=True)
class SearchConfig:
    lam: float = 1e-3  # objective penalty per rule
    beta: float = 0.0  # objective penalty per deferred example (fraction)
    c_min: float = 0.0  # minimum transparency of incumbents
    eta: float = 1.0  # maximum coverage gap of incumbents
    attribute: str | None = None  # None disables the coverage-gap constraint
    max_prefix_len: int = 10
    time_limit: float = 300.0
    memory_limit: int = 8 << 30

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be >= 0")
        if not (0.0 <= self.c_min <= 1.0):
            raise ValueError(f"c_min must be in [0, 1], got {self.c_min}")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.max_prefix_len < 0:
            raise ValueError("max_prefix_len must be >= 0")


class TrainView:
    """Positional view of a (possibly resampled) training index list.

    Everything the search touches is expressed over positions 0..n-1 of
    ``rows``; the same original row may appear at several positions in a
    bootstrap resample.
    """

    def __init__(self, ds: BinaryDataset, rows):
        self.ds = ds
        self.rows = np.asarray(list(rows), dtype=np.int64)
        self.n = len(self.rows)
        if self.n == 0:
            raise ValueError("empty training view")
        self.labels = ds.labels[self.rows]
        self.label_bits = bitset.from_bools(self.labels)
        self.full_bits = bitset.all_ones(self.n)
        self.n_pos = int(self.labels.sum())
        cls = ds.row_class_ids()[self.rows]
        _, self.class_ids = np.unique(cls, return_inverse=True)
        self.n_classes = int(self.class_ids.max()) + 1
        self._minority_bits: int | None = None
        self._groups: dict[str, list[tuple[str, int, int]]] = {}

    @property
    def minority_bits(self) -> int:
        """One bit per example on the minority side of its equivalence class."""
        if self._minority_bits is None:
            mark = np.zeros(self.n, dtype=bool)
            pos_per = np.bincount(self.class_ids[self.labels], minlength=self.n_classes)
            tot_per = np.bincount(self.class_ids, minlength=self.n_classes)
            neg_per = tot_per - pos_per
            # classes whose positives are the minority side (ties mark positives)
            pos_minor = pos_per <= neg_per
            mark[self.labels & pos_minor[self.class_ids]] = True
            mark[~self.labels & ~pos_minor[self.class_ids]] = True
            self._minority_bits = bitset.from_bools(mark)
        return self._minority_bits

    def groups(self, attribute: str) -> list[tuple[str, int, int]]:
        """Nonempty groups on this view as (name, member bitset, size)."""
        if attribute not in self._groups:
            ids = self.ds.group_ids[attribute][self.rows]
            out = []
            for g, name in enumerate(self.ds.group_names[attribute]):
                mask = ids == g
                size = int(mask.sum())
                if size:
                    out.append((name, bitset.from_bools(mask), size))
            if len(out) < 2:
                raise ValueError(
                    f"coverage gap undefined: attribute {attribute!r} has {len(out)} nonempty group(s)"
                )
            self._groups[attribute] = out
        return self._groups[attribute]

    def antecedent_bits(self, antecedent: Antecedent) -> int:
        return bitset.from_bools(antecedent_mask(self.ds, self.rows, antecedent))

    def post_floor_bits(self, bb_wrong: np.ndarray) -> int:
        """Marks min(black-box errors, minority count) members per class."""
        order = np.lexsort((np.arange(self.n), self.class_ids))
        sorted_cls = self.class_ids[order]
        starts = np.flatnonzero(np.r_[True, sorted_cls[1:] != sorted_cls[:-1]])
        ends = np.r_[starts[1:], self.n]
        mark = np.zeros(self.n, dtype=bool)
        for s, e in zip(starts, ends):
            members = order[s:e]
            pos = int(self.labels[members].sum())
            floor = min(int(bb_wrong[members].sum()), min(pos, (e - s) - pos))
            if floor:
                mark[members[:floor]] = True
        return bitset.from_bools(mark)


def incons(view: TrainView, uncaptured_bits: int) -> int:
    """Minimum 0/1 errors any deterministic classifier can make on the subset.

    Sums, per equivalence class of identical feature vectors, the size of
    the minority-label side within the subset.
    """
    mask = bitset.to_bools(uncaptured_bits, view.n)
    cls = view.class_ids[mask]
    tot = np.bincount(cls, minlength=view.n_classes)
    pos = np.bincount(cls[view.labels[mask]], minlength=view.n_classes)
    return int(np.minimum(pos, tot - pos).sum())


def best_consequent(view: TrainView, captured_bits: int) -> int:
    """Majority label of the newly captured examples; ties go to label 1."""
    tot = captured_bits.bit_count()
    pos = (captured_bits & view.label_bits).bit_count()
    return 1 if 2 * pos >= tot else 0


def prefix_icd(view: TrainView, capture_bits: int, attribute: str) -> float:
    """Coverage gap of a capture set across the attribute's nonempty groups."""
    rates = [
        (capture_bits & gbits).bit_count() / size for _, gbits, size in view.groups(attribute)
    ]
    return max(rates) - min(rates)


def _evaluate(view: TrainView, prefix: Prefix) -> tuple[int, int, int]:
    """(capture bits, predicted-1 bits on capture, prefix errors on capture)."""
    captured, labels = prefix.predict_captured(view.ds, view.rows)
    cap_bits = bitset.from_bools(captured)
    pred_bits = bitset.from_bools(captured & labels)
    err = int((captured & (labels != view.labels)).sum())
    return cap_bits, pred_bits, err


def objective_pre(view: TrainView, prefix: Prefix, cfg: SearchConfig) -> float:
    """(prefix errors + inconsistency floor of the rest) / n + lam*|r| + beta*deferred."""
    cap, _, err = _evaluate(view, prefix)
    uncap = view.full_bits & ~cap
    floor = (view.minority_bits & uncap).bit_count()
    return (err + floor) / view.n + cfg.lam * len(prefix) + cfg.beta * uncap.bit_count() / view.n


def objective_post(view: TrainView, prefix: Prefix, blackbox, cfg: SearchConfig) -> float:
    """(prefix errors + black-box errors on the rest) / n + lam*|r| + beta*deferred."""
    bb_wrong = _bb_wrong_bits(view, blackbox)
    cap, _, err = _evaluate(view, prefix)
    uncap = view.full_bits & ~cap
    return (
        (err + (bb_wrong & uncap).bit_count()) / view.n
        + cfg.lam * len(prefix)
        + cfg.beta * uncap.bit_count() / view.n
    )


def lower_bound(view: TrainView, prefix: Prefix, cfg: SearchConfig, mode: str, blackbox=None) -> float:
    """Admissible bound on the objective of the prefix and all its extensions."""
    cap, _, err = _evaluate(view, prefix)
    uncap = view.full_bits & ~cap
    floor_bits = _floor_bits(view, mode, blackbox)
    return (err + (floor_bits & uncap).bit_count()) / view.n + cfg.lam * len(prefix)


def _bb_preds(view: TrainView, blackbox) -> np.ndarray:
    if isinstance(blackbox, Predictor):
        return np.asarray(blackbox.predict(view.rows), dtype=bool)
    return np.asarray(blackbox, dtype=bool)


def _bb_wrong_bits(view: TrainView, blackbox) -> int:
    return bitset.from_bools(_bb_preds(view, blackbox) != view.labels)


def _floor_bits(view: TrainView, mode: str, blackbox) -> int:
    if mode == "pre":
        return view.minority_bits
    if mode == "post":
        if blackbox is None:
            raise ValueError("post mode needs a pre-trained black box")
        return view.post_floor_bits(_bb_preds(view, blackbox) != view.labels)
    raise ValueError(f"unknown mode {mode!r}, expected 'pre' or 'post'")


@dataclass
class SearchResult:
    prefix: Prefix
    objective: float
    optimal: bool  # False when the time or memory limit stopped the search
    stats: dict


class _AuditLog:
    def __init__(self, sink):
        self._own = isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__")
        self._fh = open(sink, "w", encoding="utf-8") if self._own else sink

    def emit(self, event: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(event, sort_keys=True) + "\n")

    def close(self) -> None:
        if self._own and self._fh is not None:
            self._fh.close()


def search(
    ds: BinaryDataset,
    rows,
    universe: RuleUniverse,
    cfg: SearchConfig,
    mode: str = "pre",
    blackbox=None,
    initial: Prefix | None = None,
    log=None,
) -> SearchResult:
    """Find the feasibility-constrained minimum-objective prefix.

    Explores prefixes of universe antecedents best-first on their lower
    bound, keeping as incumbent the best prefix that satisfies both hard
    constraints. The default initial incumbent is the constant majority
    prediction, which is always feasible (transparency 1, coverage gap 0).
    Returns the best-so-far with ``optimal=False`` if a time or memory limit
    triggers before the queue empties.
    """
    view = ds if isinstance(ds, TrainView) else TrainView(ds, rows)
    n = view.n
    audit = _AuditLog(log) if log is not None else None
    t_start = time.monotonic()

    supports = [view.antecedent_bits(a) for a in universe.antecedents]
    supports_pos = [s & view.label_bits for s in supports]
    k_univ = len(supports)

    bb_wrong = None
    if mode == "post":
        bb_wrong = _bb_wrong_bits(view, blackbox)
    elif mode != "pre":
        raise ValueError(f"unknown mode {mode!r}, expected 'pre' or 'post'")
    floor_bits = view.minority_bits if mode == "pre" else view.post_floor_bits(
        bitset.to_bools(bb_wrong, n)
    )

    groups = view.groups(cfg.attribute) if cfg.attribute is not None else None

    def feasible(capture: int) -> bool:
        if capture.bit_count() / n < cfg.c_min:
            return False
        if groups is not None:
            rates = [(capture & gbits).bit_count() / size for _, gbits, size in groups]
            if max(rates) - min(rates) > cfg.eta:
                return False
        return True

    # initial incumbent: constant majority prediction unless an explicit
    # feasible prefix is supplied
    if initial is None:
        q0 = 1 if 2 * view.n_pos >= n else 0
        initial = Prefix(((constant_true(n), q0),))
    init_cap, _, init_err = _evaluate(view, initial)
    if not feasible(init_cap):
        raise ValueError("initial prefix violates the transparency or coverage-gap constraint")
    init_uncap = view.full_bits & ~init_cap
    init_tail = (bb_wrong & init_uncap).bit_count() if mode == "post" else (
        view.minority_bits & init_uncap
    ).bit_count()
    z_best = (init_err + init_tail) / n + cfg.lam * len(initial) + cfg.beta * init_uncap.bit_count() / n
    best_rules: tuple | None = None  # None means the initial prefix is still best

    stats = {
        "nodes_expanded": 0,
        "nodes_pushed": 1,
        "nodes_pruned": 0,
        "incumbent_updates": 0,
        "mode": mode,
    }
    if audit:
        audit.emit(
            {
                "event": "start",
                "mode": mode,
                "n": n,
                "universe": k_univ,
                "initial_objective": z_best,
            }
        )

    # root: the empty prefix
    root_floor = floor_bits.bit_count()
    root_lb = root_floor / n
    heap = [(root_lb, 0, (), 0, 0, 0, 0)]  # (lb, counter, rules, capture, pred, err, used)
    counter = 1
    seen: set[tuple[int, int, int]] = set()
    proc = psutil.Process()
    optimal = True
    pops = 0

    while heap:
        if (pops & 0xFF) == 0:
            if time.monotonic() - t_start > cfg.time_limit:
                optimal = False
                break
            if (pops & 0xFFF) == 0 and proc.memory_info().rss > cfg.memory_limit:
                optimal = False
                break
        pops += 1
        lb, _, rules, capture, pred, err, used = heapq.heappop(heap)
        if lb >= z_best:
            stats["nodes_pruned"] += 1
            continue
        stats["nodes_expanded"] += 1
        notcap = view.full_bits & ~capture
        length = len(rules)

        tail = (bb_wrong & notcap).bit_count() if mode == "post" else (
            view.minority_bits & notcap
        ).bit_count()
        z = (err + tail) / n + cfg.lam * length + cfg.beta * notcap.bit_count() / n
        if z < z_best and feasible(capture):
            z_best = z
            best_rules = rules
            stats["incumbent_updates"] += 1
            if audit:
                gap = prefix_icd(view, capture, cfg.attribute) if cfg.attribute else 0.0
                audit.emit(
                    {
                        "event": "incumbent",
                        "objective": z,
                        "transparency": capture.bit_count() / n,
                        "coverage_gap": gap,
                        "rules": length,
                        "nodes_expanded": stats["nodes_expanded"],
                        "wall_time": time.monotonic() - t_start,
                    }
                )

        if length >= cfg.max_prefix_len:
            continue
        for aid in range(k_univ):
            if used >> aid & 1:
                continue
            new_cap = supports[aid] & notcap
            if not new_cap:
                continue  # adds no capture, can never strictly improve
            tot_new = new_cap.bit_count()
            pos_new = (supports_pos[aid] & notcap).bit_count()
            if 2 * pos_new >= tot_new:
                q, err_new = 1, tot_new - pos_new
            else:
                q, err_new = 0, pos_new
            child_cap = capture | new_cap
            child_pred = pred | new_cap if q else pred
            sig = (child_cap, child_pred, length + 1)
            if sig in seen:
                continue
            seen.add(sig)
            child_err = err + err_new
            child_uncap = notcap ^ new_cap
            child_lb = (child_err + (floor_bits & child_uncap).bit_count()) / n + cfg.lam * (
                length + 1
            )
            if child_lb < z_best:
                heapq.heappush(
                    heap,
                    (
                        child_lb,
                        counter,
                        rules + ((aid, q),),
                        child_cap,
                        child_pred,
                        child_err,
                        used | (1 << aid),
                    ),
                )
                counter += 1
                stats["nodes_pushed"] += 1

    stats["wall_time"] = time.monotonic() - t_start
    if best_rules is None:
        best_prefix = initial
    else:
        best_prefix = Prefix(tuple((universe.antecedents[aid], q) for aid, q in best_rules))
    if audit:
        audit.emit({"event": "done", "objective": z_best, "optimal": optimal, **stats})
        audit.close()
    return SearchResult(prefix=best_prefix, objective=z_best, optimal=optimal, stats=stats)


def finalize_pre(
    ds: BinaryDataset,
    rows,
    prefix: Prefix,
    forest_cfg: ForestConfig,
    fingerprint_indices=None,
    provenance: Provenance | None = None,
) -> HybridModel:
    """Assemble the hybrid model for a prefix-first run.

    The black box is trained only on the training rows the prefix does not
    capture; a fully-capturing prefix gets a constant fallback that is never
    consulted.
    """
    rows = np.asarray(list(rows), dtype=np.int64)
    captured = prefix.capture_mask(ds, rows)
    remainder = rows[~captured]
    if fingerprint_indices is None:
        fingerprint_indices = sorted(set(int(i) for i in rows))
    if len(remainder) == 0:
        majority = 1 if 2 * int(ds.labels[rows].sum()) >= len(rows) else 0
        bb: Predictor = ConstantPredictor(ds, fingerprint_indices, majority)
    else:
        bb = train_forest(ds, remainder, forest_cfg, fingerprint_indices=fingerprint_indices)
    if provenance is None:
        provenance = Provenance.make("exact_pre", {}, forest_cfg.seed)
    return HybridModel(prefix=prefix, blackbox=bb, provenance=provenance)
