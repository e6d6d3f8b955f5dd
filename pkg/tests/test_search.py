import itertools

import numpy as np
import pytest

from hybridaudit import bitset
from hybridaudit.blackbox import TablePredictor
from hybridaudit.hybrid import Prefix
from hybridaudit.rules import RuleUniverse, constant_true, mine_antecedents
from hybridaudit.search import (
    SearchConfig,
    TrainView,
    best_consequent,
    incons,
    lower_bound,
    objective_post,
    objective_pre,
    prefix_icd,
    search,
)

from conftest import dataset_from_arrays, synthetic_dataset


def toy_universe(ds, rows, k=8, min_support=0.05):
    return mine_antecedents(ds, rows, min_support=min_support, max_card=2, max_rules=k)


def exhaustive_optimum(view, universe, cfg, mode, bb_preds=None, include_initial=True):
    """Oracle: enumerate every antecedent sequence up to max_prefix_len with
    greedy consequents, filter by feasibility, return the minimum objective."""
    n = view.n
    supports = [view.antecedent_bits(a) for a in universe.antecedents]
    bb_wrong = None
    if mode == "post":
        bb_wrong = bitset.from_bools(np.asarray(bb_preds, dtype=bool) != view.labels)
    groups = view.groups(cfg.attribute) if cfg.attribute else None

    def feasible(capture):
        if capture.bit_count() / n < cfg.c_min:
            return False
        if groups:
            rates = [(capture & g).bit_count() / size for _, g, size in groups]
            if max(rates) - min(rates) > cfg.eta:
                return False
        return True

    def objective(capture, err, length):
        uncap = view.full_bits & ~capture
        tail = (bb_wrong & uncap).bit_count() if mode == "post" else incons(view, uncap)
        return (err + tail) / n + cfg.lam * length + cfg.beta * uncap.bit_count() / n

    best = np.inf
    if include_initial:
        q0 = 1 if 2 * view.n_pos >= n else 0
        err0 = n - view.n_pos if q0 else view.n_pos
        best = err0 / n + cfg.lam  # constant-true prefix: transparency 1, gap 0

    def visit(capture, err, used, length):
        nonlocal best
        if feasible(capture):
            z = objective(capture, err, length)
            best = min(best, z)
        if length >= cfg.max_prefix_len:
            return
        for aid in range(len(supports)):
            if aid in used:
                continue
            new_cap = supports[aid] & ~capture
            tot = new_cap.bit_count()
            pos = (new_cap & view.label_bits).bit_count()
            err_new = tot - pos if 2 * pos >= tot else pos
            visit(capture | new_cap, err + err_new, used | {aid}, length + 1)

    visit(0, 0, set(), 0)
    return best


# --- incons ------------------------------------------------------------------


def test_incons_empty_set_is_zero():
    ds = synthetic_dataset(seed=1, n=20)
    view = TrainView(ds, range(20))
    assert incons(view, 0) == 0


def test_incons_two_identical_rows_conflicting_labels():
    ds = dataset_from_arrays(np.array([[1, 0], [1, 0]], dtype=bool), [0, 1])
    view = TrainView(ds, range(2))
    assert incons(view, view.full_bits) == 1


def exhaustive_labeling_errors(view, subset_positions):
    """Min errors over all 2^#distinct labelings of the distinct vectors."""
    classes = sorted({int(view.class_ids[i]) for i in subset_positions})
    best = len(subset_positions) + 1
    for assignment in itertools.product([0, 1], repeat=len(classes)):
        label_of = dict(zip(classes, assignment))
        errors = sum(
            1 for i in subset_positions if label_of[int(view.class_ids[i])] != bool(view.labels[i])
        )
        best = min(best, errors)
    return best


def test_incons_matches_exhaustive_labeling_oracle():
    features = np.array([[1, 0], [1, 0], [1, 0], [0, 1], [0, 1], [1, 1]], dtype=bool)
    labels = [1, 0, 0, 1, 1, 0]
    ds = dataset_from_arrays(features, labels)
    view = TrainView(ds, range(6))
    for subset in [range(6), [0, 1, 2], [0, 3, 5], [1, 2, 3, 4], []]:
        positions = list(subset)
        bits = bitset.from_indices(positions, 6)
        assert incons(view, bits) == exhaustive_labeling_errors(view, positions)


def test_incons_random_subsets_match_oracle():
    rng = np.random.default_rng(7)
    ds = synthetic_dataset(seed=7, n=24, d=3)  # few features force duplicates
    view = TrainView(ds, range(24))
    for _ in range(25):
        positions = [i for i in range(24) if rng.random() < 0.5]
        bits = bitset.from_indices(positions, 24)
        assert incons(view, bits) == exhaustive_labeling_errors(view, positions)


def test_minority_bits_shortcut_agrees_on_capture_complements():
    ds = synthetic_dataset(seed=8, n=40, d=4)
    view = TrainView(ds, range(40))
    universe = toy_universe(ds, range(40))
    for a in universe.antecedents:
        capture = view.antecedent_bits(a)
        uncap = view.full_bits & ~capture
        assert (view.minority_bits & uncap).bit_count() == incons(view, uncap)


# --- objectives and bounds ----------------------------------------------------


def test_objective_pre_empty_prefix_collapses_to_incons():
    ds = synthetic_dataset(seed=2, n=30, d=3)
    view = TrainView(ds, range(30))
    cfg = SearchConfig(lam=0.0, beta=0.0)
    assert objective_pre(view, Prefix(()), cfg) == pytest.approx(incons(view, view.full_bits) / 30)


def test_objective_pre_constant_true_majority_is_minority_fraction():
    ds = synthetic_dataset(seed=3, n=30, d=3)
    view = TrainView(ds, range(30))
    q0 = 1 if 2 * view.n_pos >= 30 else 0
    prefix = Prefix(((constant_true(30), q0),))
    minority = min(view.n_pos, 30 - view.n_pos) / 30
    cfg = SearchConfig(lam=0.0, beta=0.0)
    assert objective_pre(view, prefix, cfg) == pytest.approx(minority)


def naive_objective(view, prefix, cfg, mode, bb_preds=None):
    """Recount oracle with per-row loops."""
    n = view.n
    captured = np.zeros(n, dtype=bool)
    err = 0
    taken = np.zeros(n, dtype=bool)
    for antecedent, q in prefix.rules:
        for i in range(n):
            if taken[i]:
                continue
            row = view.rows[i]
            if all(
                bool(view.ds.features[row, view.ds.feature_index(f)]) == bool(v)
                for f, v in antecedent.literals
            ):
                taken[i] = True
                captured[i] = True
                if bool(q) != bool(view.labels[i]):
                    err += 1
    uncap_positions = [i for i in range(n) if not captured[i]]
    if mode == "pre":
        tail = exhaustive_labeling_errors(view, uncap_positions)
    else:
        tail = sum(1 for i in uncap_positions if bool(bb_preds[i]) != bool(view.labels[i]))
    return (err + tail) / n + cfg.lam * len(prefix.rules) + cfg.beta * len(uncap_positions) / n


def test_objectives_match_recount_oracle():
    ds = synthetic_dataset(seed=4, n=20, d=3)
    view = TrainView(ds, range(20))
    universe = toy_universe(ds, range(20), k=6)
    rng = np.random.default_rng(4)
    bb_preds = rng.random(20) < 0.5
    bb = TablePredictor(ds, range(20), bb_preds)
    cfg = SearchConfig(lam=0.01, beta=0.05)
    for _ in range(10):
        ids = rng.choice(len(universe), size=3, replace=False)
        rules = []
        capture = 0
        for aid in ids:
            a = universe.antecedents[int(aid)]
            new_cap = view.antecedent_bits(a) & ~capture
            capture |= new_cap
            rules.append((a, best_consequent(view, new_cap)))
        prefix = Prefix(tuple(rules))
        assert objective_pre(view, prefix, cfg) == pytest.approx(
            naive_objective(view, prefix, cfg, "pre")
        )
        assert objective_post(view, prefix, bb, cfg) == pytest.approx(
            naive_objective(view, prefix, cfg, "post", bb_preds)
        )


def test_objective_post_empty_prefix_is_blackbox_error():
    ds = synthetic_dataset(seed=5, n=25, d=3)
    view = TrainView(ds, range(25))
    rng = np.random.default_rng(5)
    bb_preds = rng.random(25) < 0.5
    bb = TablePredictor(ds, range(25), bb_preds)
    cfg = SearchConfig(lam=0.0, beta=0.0)
    assert objective_post(view, Prefix(()), bb, cfg) == pytest.approx(
        float((bb_preds != ds.labels[:25]).mean())
    )


def test_lower_bound_is_below_objective_and_admissible():
    ds = synthetic_dataset(seed=6, n=30, d=4)
    view = TrainView(ds, range(30))
    universe = toy_universe(ds, range(30), k=6)
    rng = np.random.default_rng(6)
    bb_preds = rng.random(30) < 0.5
    bb = TablePredictor(ds, range(30), bb_preds)
    cfg = SearchConfig(lam=0.02, beta=0.1)

    def greedy_prefix(ids):
        rules, capture = [], 0
        for aid in ids:
            a = universe.antecedents[aid]
            new_cap = view.antecedent_bits(a) & ~capture
            capture |= new_cap
            rules.append((a, best_consequent(view, new_cap)))
        return Prefix(tuple(rules))

    k = len(universe)
    for ids in itertools.chain(
        [()], itertools.permutations(range(k), 1), itertools.permutations(range(k), 2)
    ):
        prefix = greedy_prefix(list(ids))
        for mode, black in (("pre", None), ("post", bb)):
            lb = lower_bound(view, prefix, cfg, mode, black)
            obj = (
                objective_pre(view, prefix, cfg)
                if mode == "pre"
                else objective_post(view, prefix, bb, cfg)
            )
            assert lb <= obj + 1e-12
            # admissible against every one-rule extension
            for aid in range(k):
                if aid in ids:
                    continue
                ext = greedy_prefix(list(ids) + [aid])
                ext_obj = (
                    objective_pre(view, ext, cfg)
                    if mode == "pre"
                    else objective_post(view, ext, bb, cfg)
                )
                assert lb <= ext_obj + 1e-12


def test_lower_bound_empty_prefix_pre():
    ds = synthetic_dataset(seed=7, n=30, d=3)
    view = TrainView(ds, range(30))
    cfg = SearchConfig(lam=0.5, beta=0.0)
    assert lower_bound(view, Prefix(()), cfg, "pre") == pytest.approx(
        incons(view, view.full_bits) / 30
    )


# --- best_consequent and prefix_icd -------------------------------------------


def test_best_consequent_majorities_and_tie():
    labels = np.array([1, 1, 1, 0, 1, 0, 0, 0], dtype=bool)
    ds = dataset_from_arrays(np.zeros((8, 1), dtype=bool), labels)
    view = TrainView(ds, range(8))
    assert best_consequent(view, bitset.from_indices([0, 1, 2, 3], 8)) == 1  # 3 pos 1 neg
    assert best_consequent(view, bitset.from_indices([3, 4, 5, 6], 8)) == 0  # 1 pos 3 neg
    assert best_consequent(view, bitset.from_indices([0, 1, 5, 6], 8)) == 1  # 2-2 tie
    assert best_consequent(view, 0) == 1  # empty: tie rule


def test_prefix_icd_matches_hybrid_icd():
    from hybridaudit import hybrid
    from conftest import synthetic_dataset as mk

    ds = mk(seed=9, n=50, d=5, groups=("A", "B", "C"))
    view = TrainView(ds, range(50))
    universe = toy_universe(ds, range(50), k=5)
    for a in universe.antecedents:
        prefix = Prefix(((a, 1),))
        m = hybrid.HybridModel(prefix, TablePredictor(ds, range(50), np.zeros(50, bool)),
                               hybrid.Provenance.make("t", {}, 0))
        capture = view.antecedent_bits(a)
        assert prefix_icd(view, capture, "attr") == pytest.approx(
            hybrid.icd(m, ds, range(50), "attr")
        )


# --- search -------------------------------------------------------------------


def test_search_empty_universe_returns_initial():
    ds = synthetic_dataset(seed=10, n=20, d=3)
    empty = RuleUniverse(antecedents=(), min_support=0.1, max_rules=10, n_train=20)
    cfg = SearchConfig(lam=0.01, beta=0.0, c_min=0.5)
    result = search(ds, range(20), empty, cfg, mode="pre")
    view = TrainView(ds, range(20))
    minority = min(view.n_pos, 20 - view.n_pos) / 20
    assert result.objective == pytest.approx(minority + 0.01)
    assert len(result.prefix) == 1 and result.prefix.rules[0][0].literals == ()
    assert result.optimal


@pytest.mark.parametrize("mode", ["pre", "post"])
def test_search_matches_exhaustive_enumeration_unconstrained(mode):
    for seed in range(4):
        ds = synthetic_dataset(seed=20 + seed, n=30, d=4)
        view = TrainView(ds, range(30))
        universe = toy_universe(ds, range(30), k=8)
        cfg = SearchConfig(lam=0.0, beta=0.0, c_min=0.0, eta=1.0, max_prefix_len=3)
        rng = np.random.default_rng(seed)
        bb_preds = rng.random(30) < 0.5
        bb = TablePredictor(ds, range(30), bb_preds) if mode == "post" else None
        result = search(ds, range(30), universe, cfg, mode=mode, blackbox=bb)
        oracle = exhaustive_optimum(view, universe, cfg, mode, bb_preds)
        assert result.objective == pytest.approx(oracle, abs=0)
        assert result.optimal


def test_search_respects_constraints_on_engineered_case():
    # group A is perfectly predictable and fully covered by one antecedent, so
    # with a coverage floor of 0.5 the unconstrained optimum captures exactly A
    # (coverage gap 1.0); f1 splits both groups evenly and offers a gap-free
    # alternative at the same transparency
    n = 40
    features = np.zeros((n, 2), dtype=bool)
    features[:20, 0] = True  # f0 marks group A
    features[:, 1] = np.arange(n) % 2 == 0
    labels = np.zeros(n, dtype=bool)
    labels[:20] = True  # A all positive
    labels[20:] = np.arange(20) % 3 == 0  # B mixed
    gids = [0] * 20 + [1] * 20
    ds = dataset_from_arrays(features, labels, gids)
    universe = mine_antecedents(ds, range(n), min_support=0.1, max_card=1, max_rules=8)
    view = TrainView(ds, range(n))

    free = SearchConfig(lam=0.001, beta=0.0, c_min=0.5, eta=1.0, max_prefix_len=2)
    unconstrained = search(ds, range(n), universe, free, mode="pre")
    cap_free = bitset.from_bools(unconstrained.prefix.capture_mask(ds, np.arange(n)))
    assert prefix_icd(view, cap_free, "attr") > 0.4

    tight = SearchConfig(lam=0.001, beta=0.0, c_min=0.5, eta=0.05, attribute="attr", max_prefix_len=2)
    constrained = search(ds, range(n), universe, tight, mode="pre")
    cap = bitset.from_bools(constrained.prefix.capture_mask(ds, np.arange(n)))
    assert cap.bit_count() / n >= 0.5
    assert prefix_icd(view, cap, "attr") <= 0.05
    oracle = exhaustive_optimum(view, universe, tight, "pre")
    assert constrained.objective == pytest.approx(oracle, abs=0)
    assert constrained.objective > unconstrained.objective


@pytest.mark.parametrize("eta,c_min", [(1.0, 0.0), (0.1, 0.0), (1.0, 0.5), (0.1, 0.5)])
def test_search_constrained_matches_filtered_enumeration(eta, c_min):
    ds = synthetic_dataset(seed=31, n=36, d=4, groups=("A", "B"))
    view = TrainView(ds, range(36))
    universe = toy_universe(ds, range(36), k=7)
    cfg = SearchConfig(
        lam=0.01, beta=0.02, c_min=c_min, eta=eta, attribute="attr", max_prefix_len=3
    )
    result = search(ds, range(36), universe, cfg, mode="pre")
    assert result.objective == pytest.approx(exhaustive_optimum(view, universe, cfg, "pre"), abs=0)
    cap = bitset.from_bools(result.prefix.capture_mask(ds, np.arange(36)))
    assert cap.bit_count() / 36 >= c_min
    assert prefix_icd(view, cap, "attr") <= eta


def test_search_is_deterministic():
    ds = synthetic_dataset(seed=12, n=40, d=5)
    universe = toy_universe(ds, range(40), k=8)
    cfg = SearchConfig(lam=0.005, beta=0.01, max_prefix_len=3)
    r1 = search(ds, range(40), universe, cfg, mode="pre")
    r2 = search(ds, range(40), universe, cfg, mode="pre")
    assert r1.objective == r2.objective
    assert [(a.id, q) for a, q in r1.prefix.rules] == [(a.id, q) for a, q in r2.prefix.rules]


def test_search_time_limit_returns_best_so_far_flagged():
    ds = synthetic_dataset(seed=13, n=40, d=6)
    universe = toy_universe(ds, range(40), k=8)
    cfg = SearchConfig(lam=0.0, time_limit=0.0, max_prefix_len=4)
    result = search(ds, range(40), universe, cfg, mode="pre")
    assert not result.optimal
    assert result.objective <= min(ds.labels.mean(), 1 - ds.labels.mean()) + 1e-9


def test_search_memory_limit_returns_best_so_far_flagged():
    ds = synthetic_dataset(seed=13, n=40, d=6)
    universe = toy_universe(ds, range(40), k=8)
    cfg = SearchConfig(lam=0.0, memory_limit=1, max_prefix_len=4)
    result = search(ds, range(40), universe, cfg, mode="pre")
    assert not result.optimal


def test_search_audit_log(tmp_path):
    ds = synthetic_dataset(seed=14, n=30, d=4)
    universe = toy_universe(ds, range(30), k=6)
    log_path = tmp_path / "audit.jsonl"
    search(ds, range(30), universe, SearchConfig(max_prefix_len=2), mode="pre", log=str(log_path))
    import json

    events = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert events[0]["event"] == "start"
    assert events[-1]["event"] == "done"
    assert events[-1]["optimal"] is True
    assert any(e["event"] == "incumbent" for e in events)


def test_infeasible_initial_prefix_rejected():
    ds = synthetic_dataset(seed=15, n=20, d=3)
    universe = toy_universe(ds, range(20), k=4)
    cfg = SearchConfig(c_min=0.5)
    with pytest.raises(ValueError, match="initial prefix"):
        search(ds, range(20), universe, cfg, mode="pre", initial=Prefix(()))


# --- finalize_pre ---------------------------------------------------------


def test_finalize_pre_full_transparency_gets_constant_fallback():
    from hybridaudit.blackbox import ConstantPredictor
    from hybridaudit.rules import constant_true
    from hybridaudit.search import finalize_pre
    from hybridaudit.blackbox import ForestConfig

    ds = synthetic_dataset(seed=16, n=30, d=3)
    prefix = Prefix(((constant_true(30), 1),))
    model = finalize_pre(ds, range(30), prefix, ForestConfig(n_trees=3, seed=0))
    assert isinstance(model.blackbox, ConstantPredictor)


def test_finalize_pre_empty_prefix_trains_on_everything():
    from hybridaudit.blackbox import ForestConfig, train_forest
    from hybridaudit.search import finalize_pre

    ds = synthetic_dataset(seed=17, n=40, d=4)
    cfg = ForestConfig(n_trees=4, seed=9)
    model = finalize_pre(ds, range(40), Prefix(()), cfg, fingerprint_indices=range(40))
    direct = train_forest(ds, range(40), cfg, fingerprint_indices=range(40))
    assert model.blackbox.fingerprint_bits == direct.fingerprint_bits


def test_finalize_pre_trains_forest_on_uncaptured_complement():
    from hybridaudit.blackbox import ForestConfig, train_forest
    from hybridaudit.search import finalize_pre

    ds = synthetic_dataset(seed=18, n=50, d=4)
    universe = toy_universe(ds, range(50), k=4)
    a = universe.antecedents[0]
    prefix = Prefix(((a, 1),))
    cfg = ForestConfig(n_trees=4, seed=3)
    model = finalize_pre(ds, range(50), prefix, cfg, fingerprint_indices=range(50))
    rows = np.arange(50)
    complement = rows[~prefix.capture_mask(ds, rows)]
    assert 0 < len(complement) < 50
    direct = train_forest(ds, complement, cfg, fingerprint_indices=range(50))
    assert model.blackbox.fingerprint_bits == direct.fingerprint_bits


def test_icd_invariant_to_rule_order_with_same_cumulative_capture():
    from hybridaudit import hybrid
    from hybridaudit.blackbox import TablePredictor
    from hybridaudit.hybrid import HybridModel, Provenance

    ds = synthetic_dataset(seed=19, n=40, d=5)
    universe = toy_universe(ds, range(40), k=6)
    a, b = universe.antecedents[0], universe.antecedents[1]
    bb = TablePredictor(ds, range(40), np.zeros(40, dtype=bool))
    m1 = HybridModel(Prefix(((a, 1), (b, 0))), bb, Provenance.make("t", {}, 0))
    m2 = HybridModel(Prefix(((b, 1), (a, 0))), bb, Provenance.make("t", {}, 0))
    rows = np.arange(40)
    assert np.array_equal(m1.prefix.capture_mask(ds, rows), m2.prefix.capture_mask(ds, rows))
    assert hybrid.icd(m1, ds, range(40), "attr") == hybrid.icd(m2, ds, range(40), "attr")
