"""Acceptance criteria, one test per criterion, each printing a PASS line.

Criterion 7 needs the real COMPAS two-year export, which this environment
cannot download; the test implements the full desk-scale protocol and skips
with instructions when the file is absent (see README).
"""

import itertools
import os
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.stats

from hybridaudit import bitset, data, hybrid, rashomon, stats
from hybridaudit.blackbox import ForestConfig, TablePredictor
from hybridaudit.hybrid import HybridModel, Prefix, Provenance
from hybridaudit.rashomon import LearnerSpec, ModelRecord, RashomonCollection
from hybridaudit.rules import Antecedent, mine_antecedents
from hybridaudit.search import SearchConfig, TrainView, search

from conftest import dataset_from_arrays


def report(criterion, text):
    print(f"[ACCEPTANCE] criterion {criterion}: PASS ({text})")


# -----------------------------------------------------------------------------
# criterion 1: exact-solver oracle equivalence


def random_instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(15, 41))
    d = int(rng.integers(3, 6))
    features = rng.random((n, d)) < rng.uniform(0.3, 0.7)
    labels = rng.random(n) < rng.uniform(0.3, 0.7)
    if labels.all():
        labels[0] = False
    if not labels.any():
        labels[0] = True
    n_groups = int(rng.integers(2, 4))
    gids = rng.integers(0, n_groups, size=n)
    for g in range(n_groups):
        gids[g] = g
    ds = dataset_from_arrays(features, labels, gids, groups=tuple("ABC"[:n_groups]))
    universe = mine_antecedents(ds, range(n), min_support=0.1, max_card=2, max_rules=8)
    return ds, universe


def enumerate_entries(view, universe, mode, bb_preds, max_len):
    """Every antecedent sequence up to max_len: (capture, err, len, tail, rates)."""
    supports = [view.antecedent_bits(a) for a in universe.antecedents]
    bb_wrong = (
        bitset.from_bools(np.asarray(bb_preds, dtype=bool) != view.labels)
        if mode == "post"
        else None
    )
    groups = view.groups("attr")

    def tail_of(capture):
        uncap = view.full_bits & ~capture
        if mode == "post":
            return (bb_wrong & uncap).bit_count()
        from hybridaudit.search import incons

        return incons(view, uncap)

    entries = []

    def visit(capture, err, used, length):
        rates = tuple((capture & g).bit_count() / size for _, g, size in groups)
        entries.append((capture.bit_count(), err, length, tail_of(capture), rates))
        if length >= max_len:
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
    return entries


def oracle_minimum(entries, n, n_pos, cfg):
    q0_err = min(n_pos, n - n_pos)
    best = q0_err / n + cfg.lam  # initial constant-majority incumbent
    for cap_count, err, length, tail, rates in entries:
        if cap_count / n < cfg.c_min:
            continue
        if rates and max(rates) - min(rates) > cfg.eta:
            continue
        z = (err + tail) / n + cfg.lam * length + cfg.beta * (n - cap_count) / n
        best = min(best, z)
    return best


def test_criterion_1_exact_solver_matches_enumeration():
    t_start = time.monotonic()
    checked = 0
    for seed in range(50):
        ds, universe = random_instance(seed)
        n = ds.n
        view = TrainView(ds, range(n))
        rng = np.random.default_rng(1000 + seed)
        bb_preds = rng.random(n) < 0.5
        bb = TablePredictor(ds, range(n), bb_preds)
        for mode in ("pre", "post"):
            entries = enumerate_entries(view, universe, mode, bb_preds, max_len=3)
            for eta, c_min in itertools.product((1.0, 0.1), (0.0, 0.5)):
                cfg = SearchConfig(
                    lam=0.01, beta=0.01, c_min=c_min, eta=eta, attribute="attr",
                    max_prefix_len=3,
                )
                result = search(
                    ds, range(n), universe, cfg, mode=mode,
                    blackbox=bb if mode == "post" else None,
                )
                expected = oracle_minimum(entries, n, view.n_pos, cfg)
                assert result.objective == expected, (seed, mode, eta, c_min)
                assert result.optimal
                checked += 1
    elapsed = time.monotonic() - t_start
    assert elapsed < 60.0, f"criterion 1 took {elapsed:.1f}s, budget is 60s"
    report(1, f"{checked} searches equal exhaustive optima in {elapsed:.1f}s")


# -----------------------------------------------------------------------------
# criterion 2: hard-constraint satisfaction end to end


def structured_dataset(seed=0, n=500):
    """Synthetic data where predictable regions are group-skewed."""
    rng = np.random.default_rng(seed)
    group = rng.random(n) < 0.55  # True = A
    x1 = group ^ (rng.random(n) < 0.2)  # strongly group-correlated
    x2 = rng.random(n) < 0.5
    x3 = rng.random(n) < 0.4
    noise = rng.random(n) < 0.15
    labels = ((x1 & x2) | x3) ^ noise
    features = np.column_stack([x1, x2, x3, group ^ (rng.random(n) < 0.35)])
    return dataset_from_arrays(
        features, labels, np.where(group, 0, 1), groups=("A", "B")
    )


@pytest.fixture(scope="module")
def constrained_run():
    ds = structured_dataset(seed=3, n=500)
    split = data.split(ds, seed=0)
    universe = mine_antecedents(ds, split.train_indices, min_support=0.05, max_rules=16)
    forest = ForestConfig(n_trees=5, max_depth=5, min_samples_split=10)
    specs = []
    for method in ("exact_pre", "exact_post"):
        for c_min in (0.4, 0.95):  # 0.95 makes fully-transparent optima common
            specs.append(
                LearnerSpec(
                    name=f"{method}_eta005_c{c_min:g}",
                    method=method,
                    search=SearchConfig(
                        lam=0.005, beta=0.0, c_min=c_min, eta=0.05, attribute="attr",
                        max_prefix_len=3, time_limit=30.0,
                    ),
                    forest=forest,
                )
            )
    collection = rashomon.build(ds, split, universe, specs, n_bootstrap=50, base_seed=11)
    return ds, split, universe, collection


def test_criterion_2_mitigated_models_respect_the_cap(constrained_run):
    ds, split, universe, collection = constrained_run
    assert len(collection.records) == 4 * 51, collection.failures
    for record in collection.records:
        assert record.fit_icd is not None
        assert record.fit_icd <= 0.05, (record.spec_name, record.run_index, record.fit_icd)
    report(2, f"{len(collection.records)}/204 bootstrap models have training gap <= 0.05")


# -----------------------------------------------------------------------------
# criterion 3: degenerate-transparency law


def test_criterion_3_degenerate_transparency(constrained_run):
    ds, split, universe, collection = constrained_run
    checked = 0
    for record in collection.records:
        for subset in (split.train_indices, split.test_indices):
            t = hybrid.transparency(record.model, ds, subset)
            if t in (0.0, 1.0):
                assert hybrid.icd(record.model, ds, subset, "attr") == 0.0
                checked += 1
    # handcrafted degenerate models: fully covering and fully deferring
    bb = TablePredictor(ds, split.train_indices, np.zeros(ds.n, dtype=bool))
    full = ModelRecord(
        model=HybridModel(Prefix(((Antecedent(literals=(), support=0), 1),)), bb,
                          Provenance.make("exact_post", {}, 0)),
        spec_name="full", method="exact_post", run_index=0, seed=0, objective=0.0,
        optimal=True, train_transparency=1.0, train_accuracy=0.5,
        fit_transparency=1.0, fit_icd=0.0,
    )
    none = ModelRecord(
        model=HybridModel(Prefix(()), bb, Provenance.make("exact_post", {}, 1)),
        spec_name="none", method="exact_post", run_index=1, seed=1, objective=0.0,
        optimal=True, train_transparency=0.0, train_accuracy=0.5,
        fit_transparency=0.0, fit_icd=0.0,
    )
    for record, t_expect in ((full, 1.0), (none, 0.0)):
        for subset in (split.train_indices, split.test_indices):
            assert hybrid.transparency(record.model, ds, subset) == t_expect
            assert hybrid.icd(record.model, ds, subset, "attr") == 0.0
        solo = rashomon.assign_bins(
            RashomonCollection(ds=ds, split=split, records=(record,))
        )
        bin_label = solo.records[0].bin
        freqs = rashomon.icf_vector(solo, bin_label, split.test_indices)
        assert all(rashomon.ica(float(f)) == 0.0 for f in freqs)
        checked += 1
    assert checked >= 2
    report(3, f"{checked} degenerate-transparency checks, all gaps and arbitrariness zero")


# -----------------------------------------------------------------------------
# criterion 4: metric formula fidelity on 1000 randomized cases


def naive_group_rates(gids, subset, indicator):
    rates = {}
    for g in sorted(set(gids[i] for i in subset)):
        members = [i for i in subset if gids[i] == g]
        rates[g] = (sum(1 for i in members if indicator(i)), len(members))
    return rates


def test_criterion_4_metric_fidelity():
    rng = np.random.default_rng(99)
    cases = 0
    icd_cases = sp_cases = eo_cases = icf_cases = 0
    while cases < 1000:
        n = int(rng.integers(10, 31))
        d = int(rng.integers(2, 5))
        n_groups = int(rng.integers(2, 4))
        features = rng.random((n, d)) < 0.5
        labels = rng.random(n) < 0.5
        gids = rng.integers(0, n_groups, size=n)
        for g in range(n_groups):
            gids[g] = g
        ds = dataset_from_arrays(features, labels, gids, groups=tuple("ABC"[:n_groups]))
        subset = sorted(rng.choice(n, size=int(rng.integers(5, n + 1)), replace=False).tolist())
        cases += 1

        feat = int(rng.integers(0, d))
        prefix = Prefix(((Antecedent(literals=((f"f{feat}", 1),), support=0), 1),))
        bb_values = rng.random(n) < 0.5
        m = HybridModel(prefix, TablePredictor(ds, range(n), bb_values),
                        Provenance.make("t", {}, 0))

        captured = {i: bool(features[i, feat]) for i in subset}
        cov = naive_group_rates(gids, subset, lambda i: captured[i])
        if len(cov) >= 2:
            fracs = [num / den for num, den in cov.values()]
            expected = max(fracs) - min(fracs)
            got = hybrid.icd(m, ds, subset, "attr")
            assert abs(got - expected) <= 1e-12
            icd_cases += 1

        preds = hybrid.predict(m, ds, subset)
        pred_of = dict(zip(subset, preds))
        pos_rates = naive_group_rates(gids, subset, lambda i: pred_of[i])
        if len(pos_rates) >= 2:
            fracs = [num / den for num, den in pos_rates.values()]
            expected = max(fracs) - min(fracs)
            got = hybrid.statistical_parity(preds, ds, subset, "attr")
            assert abs(got - expected) <= 1e-12
            sp_cases += 1

        positives = [i for i in subset if labels[i]]
        tprs = naive_group_rates(
            np.asarray([gids[i] for i in positives]), list(range(len(positives))),
            lambda k: pred_of[positives[k]],
        )
        if len(tprs) >= 2:
            fracs = [num / den for num, den in tprs.values()]
            expected = max(fracs) - min(fracs)
            got = hybrid.equal_opportunity(preds, ds, subset, "attr")
            assert abs(got - expected) <= 1e-12
            eo_cases += 1

        k = int(rng.integers(1, 6))
        feats = rng.integers(0, d, size=k)
        models = [
            ModelRecord(
                model=HybridModel(
                    Prefix(((Antecedent(literals=((f"f{f}", 1),), support=0), 1),)),
                    TablePredictor(ds, range(n), bb_values), Provenance.make("t", {}, j),
                ),
                spec_name="s", method="exact_post", run_index=j, seed=j, objective=0.0,
                optimal=True, train_transparency=0.5, train_accuracy=0.5,
                fit_transparency=0.5, fit_icd=None, bin="Q3",
            )
            for j, f in enumerate(feats)
        ]
        split = data.SplitSpec(tuple(range(n)), tuple(subset), 0)
        c = RashomonCollection(ds=ds, split=split, records=tuple(models))
        idx = subset[int(rng.integers(0, len(subset)))]
        count = sum(1 for f in feats if features[idx, f])
        expected_icf = count / k
        got_icf = rashomon.icf(c, "Q3", idx)
        assert abs(got_icf - expected_icf) <= 1e-12
        expected_ica = 1 - 2 * abs(expected_icf - 0.5)
        assert abs(rashomon.ica(got_icf) - expected_ica) <= 1e-12
        icf_cases += 1
    assert min(icd_cases, sp_cases, eo_cases, icf_cases) > 500
    report(4, f"1000 cases (ICD {icd_cases}, SP {sp_cases}, EO {eo_cases}, ICF/ICA {icf_cases})")


# -----------------------------------------------------------------------------
# criterion 5: statistics oracle


def full_enumeration_p(a, b):
    pooled = np.concatenate([a, b])
    n1 = len(a)
    ranks = scipy.stats.rankdata(pooled)
    mean = n1 * len(b) / 2.0
    u_obs = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    spread = abs(u_obs - mean)
    hits = total = 0
    for pos in itertools.combinations(range(len(pooled)), n1):
        total += 1
        if abs(ranks[list(pos)].sum() - n1 * (n1 + 1) / 2.0 - mean) >= spread - 1e-9:
            hits += 1
    return hits / total


def test_criterion_5_statistics_oracle():
    rng = np.random.default_rng(5)
    pairs = 0
    for n1 in range(1, 12):
        for n2 in range(1, 12):
            if n1 + n2 > 12:
                continue
            for tied in (False, True):
                if tied:
                    a = rng.integers(0, 3, size=n1).astype(float)
                    b = rng.integers(0, 3, size=n2).astype(float)
                else:
                    a = rng.random(n1)
                    b = rng.random(n2)
                _, p = stats.mann_whitney_u(a, b)
                assert p == pytest.approx(full_enumeration_p(a, b), abs=1e-12), (n1, n2, tied)
                pairs += 1
    assert stats.holm_adjust([0.01, 0.04, 0.03]) == pytest.approx([0.03, 0.06, 0.06])
    report(5, f"{pairs} sample-size pairs match full permutation enumeration; Holm example exact")


# -----------------------------------------------------------------------------
# criterion 6: growth-curve monotonicity in epsilon


def test_criterion_6_growth_curves_nondecreasing(constrained_run):
    ds, split, universe, collection = constrained_run
    binned = rashomon.assign_bins(rashomon.dedup(collection, 0.99))
    epsilons = [0.0, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.3, 1.0]
    rows = rashomon.growth_curve(binned, epsilons)
    by_bin = {}
    for bin_label, eps, count in rows:
        by_bin.setdefault(bin_label, []).append((eps, count))
    runs = 0
    for bin_label, series in by_bin.items():
        counts = [c for _, c in sorted(series)]
        assert counts == sorted(counts), bin_label
        runs += 1
    assert runs == 4
    report(6, f"growth counts non-decreasing over {len(epsilons)} tolerances in all 4 bins")


# -----------------------------------------------------------------------------
# criterion 7: desk-scale COMPAS qualitative reproduction (gated on the dataset)

COMPAS_ENV = "HYBRIDAUDIT_COMPAS"
COMPAS_COLUMNS = [
    "age", "sex", "race", "priors_count", "juv_fel_count", "juv_misd_count",
    "juv_other_count", "c_charge_degree", "two_year_recid",
]


def compas_path():
    candidate = os.environ.get(COMPAS_ENV)
    if candidate and Path(candidate).exists():
        return Path(candidate)
    default = Path(__file__).resolve().parent.parent / "data" / "compas-scores-two-years.csv"
    return default if default.exists() else None


def compas_manifest(path):
    return {
        "name": "compas",
        "csv": str(path),
        "label_column": "two_year_recid",
        "positive_value": "1",
        "n_bins": 3,
        "numeric_columns": ["age", "priors_count", "juv_fel_count", "juv_misd_count",
                            "juv_other_count"],
        "sensitive": [
            {"column": "race", "top": ["African-American", "Caucasian"]},
            {"column": "sex", "top_k": 2},
            {"column": "age"},
        ],
    }


def _narrow_csv(src, dst):
    """Project the raw export onto the modeling columns."""
    import csv as _csv

    with open(src, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        rows = [{k: row.get(k, "") for k in COMPAS_COLUMNS} for row in reader]
    with open(dst, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(fh, fieldnames=COMPAS_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return dst


def test_criterion_7_compas_qualitative_reproduction(tmp_path):
    path = compas_path()
    if path is None:
        pytest.skip(
            "COMPAS two-year export not available in this environment (no general "
            f"network access); place compas-scores-two-years.csv under data/ or set "
            f"{COMPAS_ENV} to run the desk-scale reproduction"
        )
    narrowed = _narrow_csv(path, tmp_path / "compas.csv")
    manifest = compas_manifest(narrowed)
    table = data.load_csv(narrowed, "two_year_recid", "1")
    assert table.n_rows == 7214  # raw two-year export size
    ds = data.dataset_from_manifest(manifest)
    split = data.split(ds, seed=0)
    universe = mine_antecedents(ds, split.train_indices, min_support=0.01,
                                max_card=2, max_rules=300)
    assert len(universe) <= 300

    forest = ForestConfig(n_trees=100, max_depth=10, min_samples_split=10)
    workers = int(os.environ.get("HYBRIDAUDIT_WORKERS", "8"))
    grid = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)

    def specs_for(method, eta, attribute):
        tag = "" if attribute is None else f"_eta{eta:g}_{attribute}"
        return [
            LearnerSpec(
                name=f"{method}{tag}_cmin{c:g}", method=method,
                search=SearchConfig(lam=0.001, beta=0.0, c_min=c, eta=eta,
                                    attribute=attribute, max_prefix_len=10,
                                    time_limit=300.0),
                forest=forest,
            )
            for c in grid
        ]

    results = {}
    for method in ("exact_pre", "exact_post"):
        for eta, attribute in ((1.0, None), (0.05, "race")):
            specs = specs_for(method, eta, attribute)
            collection = rashomon.build(ds, split, universe, specs, n_bootstrap=100,
                                        base_seed=42, workers=workers)
            deduped = rashomon.assign_bins(rashomon.dedup(collection, 0.99))
            results[(method, eta)] = rashomon.filter_epsilon(deduped, 0.01)

    # (a) directional bell tendency for at least one exact method
    bell_tendency = False
    for method in ("exact_pre", "exact_post"):
        dist = rashomon.bin_metric_distribution(
            results[(method, 1.0)], "ICD", subset="test", attribute="race"
        )
        means = {b: s["mean"] for b, s in dist.items()}
        mids = [means[b] for b in ("Q2", "Q3") if b in means]
        if mids and "Q1" in means and "Q4" in means:
            if max(mids) > means["Q1"] and max(mids) > means["Q4"]:
                bell_tendency = True
    assert bell_tendency, "no exact method shows the mid-bin ICD peak"

    # (b) mitigation halves ICD where it matters, at bounded accuracy/sparsity cost
    for method in ("exact_pre", "exact_post"):
        base = results[(method, 1.0)]
        mitigated = results[(method, 0.05)]
        for bin_label in rashomon.BIN_LABELS:
            mem_u, mem_m = base.members(bin_label), mitigated.members(bin_label)
            if not mem_u or not mem_m:
                continue
            test_idx = split.test_indices
            icd_u = np.mean([rashomon.model_metric(r, ds, test_idx, "ICD", "race") for r in mem_u])
            icd_m = np.mean([rashomon.model_metric(r, ds, test_idx, "ICD", "race") for r in mem_m])
            acc_u = np.mean([rashomon.model_metric(r, ds, test_idx, "accuracy") for r in mem_u])
            acc_m = np.mean([rashomon.model_metric(r, ds, test_idx, "accuracy") for r in mem_m])
            spars_u = np.mean([rashomon.model_metric(r, ds, test_idx, "sparsity") for r in mem_u])
            spars_m = np.mean([rashomon.model_metric(r, ds, test_idx, "sparsity") for r in mem_m])
            if icd_u > 0.1:
                assert icd_m <= 0.5 * icd_u, (method, bin_label, icd_u, icd_m)
            assert acc_u - acc_m <= 0.03, (method, bin_label, acc_u, acc_m)
            assert spars_m - spars_u <= 2.0, (method, bin_label, spars_u, spars_m)
    report(7, "COMPAS desk-scale reproduction: bell tendency and mitigation bounds hold")


# -----------------------------------------------------------------------------
# criterion 8: end-to-end determinism


def test_criterion_8_pipeline_determinism(tmp_path):
    # separate processes with different hash seeds: catches any accidental
    # dependence on set/dict hash order, not just in-process repeatability
    import subprocess
    import sys

    from test_cli import make_config

    outputs = []
    for run_tag, hash_seed in (("a", "1"), ("b", "31337")):
        run_dir = tmp_path / run_tag
        run_dir.mkdir()
        config_path, out = make_config(run_dir, n=150, n_bootstrap=3, seed=0)
        env = dict(os.environ, PYTHONHASHSEED=hash_seed)
        for cmd in ("prepare", "mine", "bootstrap", "audit", "report"):
            proc = subprocess.run(
                [sys.executable, "-m", "hybridaudit.cli", cmd, "--config", str(config_path)],
                capture_output=True, text=True, env=env,
            )
            assert proc.returncode == 0, (cmd, proc.stderr)
        bundle = {}
        for sub in ("audit", "report"):
            for p in sorted((out / sub).glob("*.csv")):
                bundle[f"{sub}/{p.name}"] = p.read_bytes()
        outputs.append(bundle)
    assert outputs[0].keys() == outputs[1].keys()
    for name in outputs[0]:
        assert outputs[0][name] == outputs[1][name], f"{name} differs between runs"
    report(8, f"{len(outputs[0])} audit/report CSVs byte-identical across two full runs")
