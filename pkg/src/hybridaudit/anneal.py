"""Heuristic hybrid learner: simulated annealing over rule subsets.

Stands in for annealing-style baseline learners in the multiplicity
pipeline. Given a pre-trained black box, it locally searches the rule
universe for a prefix minimizing the post-mode objective under the
configured sparsity (``lam``) and deferral (``beta``) weights. It offers no
optimality guarantee; it exists to produce hyperparameter-driven
transparency variation from a non-exact learner.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .hybrid import HybridModel, Prefix, Provenance
from .rules import RuleUniverse
from .search import TrainView, _AuditLog, _bb_wrong_bits


# default weight grids for the two sweep roles: deferral-weight sweeps for
# the unordered-set learner, per-rule-weight sweeps for the ordered-list one
SET_MODE_BETA_GRID = tuple(float(x) for x in np.logspace(-3, 0, 10))
LIST_MODE_LAM_GRID = tuple(float(x) for x in np.logspace(-3, -1, 10))


@dataclass(frozen=True)
class AnnealConfig:
    beta: float = 0.0  # deferral weight (larger favors more transparency)
    lam: float = 0.0  # per-rule weight (larger favors sparser prefixes)
    iterations: int = 2000
    t_initial: float = 0.05
    cooling: float = 0.995
    seed: int = 0
    ordered: bool = False  # ordered-list mode adds reorder moves

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.t_initial <= 0:
            raise ValueError("initial temperature must be > 0")
        if not (0.0 < self.cooling < 1.0):
            raise ValueError("cooling rate must be in (0, 1)")


def _objective(view, supports, supports_pos, bb_wrong, order, lam, beta):
    """Post-mode objective of an antecedent-id sequence with greedy consequents."""
    capture = 0
    err = 0
    consequents = []
    for aid in order:
        new_cap = supports[aid] & ~capture
        tot = new_cap.bit_count()
        pos = (supports_pos[aid] & ~capture).bit_count()
        if 2 * pos >= tot:
            q, e = 1, tot - pos
        else:
            q, e = 0, pos
        consequents.append(q)
        err += e
        capture |= new_cap
    uncap = view.full_bits & ~capture
    obj = (err + (bb_wrong & uncap).bit_count()) / view.n
    obj += lam * len(order) + beta * uncap.bit_count() / view.n
    return obj, tuple(consequents)


def anneal_train(
    ds,
    rows,
    universe: RuleUniverse,
    blackbox,
    cfg: AnnealConfig,
    provenance: Provenance | None = None,
    log=None,
) -> HybridModel:
    """Anneal a rule prefix for a pre-trained black box.

    Moves: add, remove, or replace one rule (plus relocation in ordered
    mode). Worse states are accepted with probability exp(-delta/T) under a
    geometric cooling schedule. Deterministic for a fixed seed; returns the
    best state visited.
    """
    if len(universe) == 0:
        raise ValueError("empty rule universe")
    view = ds if isinstance(ds, TrainView) else TrainView(ds, rows)
    supports = [view.antecedent_bits(a) for a in universe.antecedents]
    supports_pos = [s & view.label_bits for s in supports]
    bb_wrong = _bb_wrong_bits(view, blackbox)
    k = len(supports)
    rng = np.random.default_rng(cfg.seed)
    audit = _AuditLog(log) if log is not None else None
    t_start = time.monotonic()

    def canon(order):
        return order if cfg.ordered else tuple(sorted(order))

    def evaluate(order):
        return _objective(view, supports, supports_pos, bb_wrong, order, cfg.lam, cfg.beta)

    state: tuple[int, ...] = ()
    state_obj, _ = evaluate(state)
    best, best_obj = state, state_obj
    temp = cfg.t_initial
    if audit:
        audit.emit(
            {"event": "start", "mode": "anneal", "n": view.n, "universe": k,
             "initial_objective": state_obj}
        )

    for iteration in range(cfg.iterations):
        move = rng.integers(0, 4 if cfg.ordered and len(state) > 1 else 3)
        candidate = None
        if move == 0 and len(state) < k:  # add
            unused = [a for a in range(k) if a not in state]
            if unused:
                aid = unused[int(rng.integers(0, len(unused)))]
                at = int(rng.integers(0, len(state) + 1)) if cfg.ordered else 0
                candidate = canon(state[:at] + (aid,) + state[at:])
        elif move == 1 and state:  # remove
            at = int(rng.integers(0, len(state)))
            candidate = canon(state[:at] + state[at + 1 :])
        elif move == 2 and state:  # replace
            unused = [a for a in range(k) if a not in state]
            if unused:
                at = int(rng.integers(0, len(state)))
                aid = unused[int(rng.integers(0, len(unused)))]
                candidate = canon(state[:at] + (aid,) + state[at + 1 :])
        elif move == 3 and len(state) > 1:  # relocate (ordered mode only)
            src = int(rng.integers(0, len(state)))
            rest = state[:src] + state[src + 1 :]
            dst = int(rng.integers(0, len(rest) + 1))
            candidate = rest[:dst] + (state[src],) + rest[dst:]
        if candidate is None or candidate == state:
            temp *= cfg.cooling
            continue
        cand_obj, _ = evaluate(candidate)
        delta = cand_obj - state_obj
        if delta <= 0 or rng.random() < math.exp(-delta / temp):
            state, state_obj = candidate, cand_obj
            if state_obj < best_obj:
                best, best_obj = state, state_obj
                if audit:
                    cap = 0
                    for aid in best:
                        cap |= supports[aid]
                    audit.emit(
                        {"event": "incumbent", "objective": best_obj,
                         "transparency": cap.bit_count() / view.n, "rules": len(best),
                         "iteration": iteration, "wall_time": time.monotonic() - t_start}
                    )
        temp *= cfg.cooling

    _, consequents = evaluate(best)
    if audit:
        audit.emit(
            {"event": "done", "objective": best_obj, "optimal": False,
             "iterations": cfg.iterations, "wall_time": time.monotonic() - t_start}
        )
        audit.close()
    prefix = Prefix(tuple((universe.antecedents[aid], q) for aid, q in zip(best, consequents)))
    if provenance is None:
        method = "anneal_list" if cfg.ordered else "anneal_set"
        provenance = Provenance.make(
            method, {"beta": cfg.beta, "lam": cfg.lam, "iterations": cfg.iterations}, cfg.seed
        )
    return HybridModel(prefix=prefix, blackbox=blackbox, provenance=provenance)
