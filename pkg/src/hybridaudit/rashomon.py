"""Approximate sets of near-optimal hybrid models via bootstrap retraining.

For each learner configuration we train one reference model on the original
train split plus one model per bootstrap resample, drop duplicates, bin the
survivors by training transparency, and keep the models within an accuracy
tolerance of the best model in their bin. Everything downstream (coverage
frequency and arbitrariness per example, per-bin metric distributions, the
growth of the set as the tolerance loosens) is computed over the filtered
collection.

A collection normally holds one learner family (one method, all its
hyperparameter grid points); duplicate detection never merges across
methods either way.
"""

from __future__ import annotations

import numpy as np

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from . import hybrid
from .anneal import AnnealConfig, anneal_train
from .blackbox import ForestConfig, TablePredictor, agreement, train_forest
from .data import BinaryDataset, SplitSpec, bootstrap_sample
from .hybrid import HybridModel, Provenance
from .rules import RuleUniverse
from .search import SearchConfig, TrainView, finalize_pre, prefix_icd, search

BIN_LABELS = ("Q1", "Q2", "Q3", "Q4")

EXACT_METHODS = ("exact_pre", "exact_post")
ANNEAL_METHODS = ("anneal_set", "anneal_list")


def transparency_bin(t: float) -> str:
    """Q1 [0,.25), Q2 [.25,.5), Q3 [.5,.75), Q4 [.75,1]."""
    if t < 0.25:
        return "Q1"
    if t < 0.5:
        return "Q2"
    if t < 0.75:
        return "Q3"
    return "Q4"


@dataclass(frozen=True)
class LearnerSpec:
    """One trainable configuration: a method plus its hyperparameters."""

    name: str
    method: str  # exact_pre | exact_post | anneal_set | anneal_list
    search: SearchConfig | None = None
    anneal: AnnealConfig | None = None
    forest: ForestConfig = ForestConfig()

    def __post_init__(self):
        if self.method in EXACT_METHODS and self.search is None:
            raise ValueError(f"{self.method} spec needs a search config")
        if self.method in ANNEAL_METHODS and self.anneal is None:
            raise ValueError(f"{self.method} spec needs an anneal config")
        if self.method not in EXACT_METHODS + ANNEAL_METHODS:
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class ModelRecord:
    model: HybridModel
    spec_name: str
    method: str
    run_index: int  # 0 = reference model on the unresampled train split
    seed: int
    objective: float
    optimal: bool
    train_transparency: float  # on the original train split
    train_accuracy: float  # on the original train split
    fit_transparency: float  # on the rows the model was fitted on
    fit_icd: float | None  # on the fit rows, for the constrained attribute
    bin: str | None = None


@dataclass(frozen=True)
class RashomonCollection:
    ds: BinaryDataset
    split: SplitSpec
    records: tuple[ModelRecord, ...]
    epsilon: float | None = None
    bin_reference_accuracy: tuple[tuple[str, float], ...] = ()
    failures: tuple[tuple[str, int, str], ...] = ()  # (spec name, run index, error)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def binned(self) -> bool:
        return all(r.bin is not None for r in self.records)

    def members(self, bin_label: str) -> tuple[ModelRecord, ...]:
        return tuple(r for r in self.records if r.bin == bin_label)

    def subset_indices(self, subset: str):
        if subset == "train":
            return self.split.train_indices
        if subset == "test":
            return self.split.test_indices
        raise ValueError(f"unknown subset {subset!r}, expected 'train' or 'test'")


def _derive_seeds(base_seed: int, spec_index: int, run_index: int) -> tuple[int, int]:
    state = np.random.SeedSequence([base_seed, spec_index, run_index]).generate_state(2)
    return int(state[0]), int(state[1])


def _freeze_blackbox(model: HybridModel, ds: BinaryDataset, fingerprint_indices) -> HybridModel:
    """Replace the black box with a prediction table over the full dataset.

    Keeps collections light: audits only ever need the predictions on this
    dataset, and the provenance seed allows exact retraining.
    """
    values = model.blackbox.predict(range(ds.n))
    return HybridModel(
        prefix=model.prefix,
        blackbox=TablePredictor(ds, fingerprint_indices, values),
        provenance=model.provenance,
    )


def train_one(
    ds: BinaryDataset,
    split: SplitSpec,
    universe: RuleUniverse,
    spec: LearnerSpec,
    rows,
    seed: int,
    run_index: int = 0,
    log=None,
) -> ModelRecord:
    """Train one hybrid model on the given rows and compute its record stats."""
    view = TrainView(ds, rows)
    forest_cfg = replace(spec.forest, seed=seed)
    if spec.method == "exact_pre":
        result = search(view, None, universe, spec.search, mode="pre", log=log)
        prov = Provenance.make(spec.method, _spec_params(spec), seed, run_index)
        model = finalize_pre(
            ds, rows, result.prefix, forest_cfg,
            fingerprint_indices=split.train_indices, provenance=prov,
        )
        objective, optimal = result.objective, result.optimal
    elif spec.method == "exact_post":
        bb = train_forest(ds, rows, forest_cfg, fingerprint_indices=split.train_indices)
        result = search(view, None, universe, spec.search, mode="post", blackbox=bb, log=log)
        prov = Provenance.make(spec.method, _spec_params(spec), seed, run_index)
        model = HybridModel(prefix=result.prefix, blackbox=bb, provenance=prov)
        objective, optimal = result.objective, result.optimal
    else:
        bb = train_forest(ds, rows, forest_cfg, fingerprint_indices=split.train_indices)
        cfg = replace(spec.anneal, seed=seed)
        prov = Provenance.make(spec.method, _spec_params(spec), seed, run_index)
        model = anneal_train(view, None, universe, bb, cfg, provenance=prov, log=log)
        from .search import objective_post

        objective = objective_post(
            view, model.prefix, bb, SearchConfig(lam=cfg.lam, beta=cfg.beta)
        )
        optimal = False

    model = _freeze_blackbox(model, ds, split.train_indices)
    train_idx = split.train_indices
    fit_icd = None
    if spec.search is not None and spec.search.attribute is not None:
        capture = view_capture_bits(view, model)
        fit_icd = prefix_icd(view, capture, spec.search.attribute)
    return ModelRecord(
        model=model,
        spec_name=spec.name,
        method=spec.method,
        run_index=run_index,
        seed=seed,
        objective=float(objective),
        optimal=optimal,
        train_transparency=hybrid.transparency(model, ds, train_idx),
        train_accuracy=hybrid.accuracy(model, ds, train_idx),
        fit_transparency=float(view_capture_bits(view, model).bit_count()) / view.n,
        fit_icd=fit_icd,
    )


def view_capture_bits(view: TrainView, model: HybridModel) -> int:
    from . import bitset

    return bitset.from_bools(model.prefix.capture_mask(view.ds, view.rows))


def _spec_params(spec: LearnerSpec) -> dict:
    params: dict = {"spec": spec.name}
    if spec.search is not None:
        params.update(
            lam=spec.search.lam, beta=spec.search.beta, c_min=spec.search.c_min,
            eta=spec.search.eta, attribute=spec.search.attribute,
        )
    if spec.anneal is not None:
        params.update(
            beta=spec.anneal.beta, lam=spec.anneal.lam,
            iterations=spec.anneal.iterations, ordered=spec.anneal.ordered,
        )
    return params


_POOL_CTX: dict = {}


def _pool_init(ds, split, universe, specs):
    _POOL_CTX.update(ds=ds, split=split, universe=universe, specs=list(specs))


def _pool_run(task):
    spec_index, run_index, base_seed = task
    ds, split = _POOL_CTX["ds"], _POOL_CTX["split"]
    spec = _POOL_CTX["specs"][spec_index]
    resample_seed, model_seed = _derive_seeds(base_seed, spec_index, run_index)
    rows = (
        list(split.train_indices)
        if run_index == 0
        else bootstrap_sample(ds, split.train_indices, resample_seed)
    )
    try:
        record = train_one(
            ds, split, _POOL_CTX["universe"], spec, rows, model_seed, run_index
        )
        return spec_index, run_index, record, None
    except Exception as exc:  # individual failures are recorded, not fatal
        return spec_index, run_index, None, f"{type(exc).__name__}: {exc}"


def build(
    ds: BinaryDataset,
    split: SplitSpec,
    universe: RuleUniverse,
    specs,
    n_bootstrap: int,
    base_seed: int,
    workers: int = 1,
) -> RashomonCollection:
    """Train 1 + n_bootstrap models per spec (reference plus resamples).

    Model and resample seeds derive from (base_seed, spec index, run index),
    so the collection is identical no matter how many workers run it.
    Individual run failures are recorded on the collection and skipped.
    """
    if n_bootstrap < 0:
        raise ValueError("n_bootstrap must be >= 0")
    specs = list(specs)
    tasks = [(i, k, base_seed) for i in range(len(specs)) for k in range(n_bootstrap + 1)]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_pool_init, initargs=(ds, split, universe, specs)
        ) as pool:
            results = list(pool.map(_pool_run, tasks, chunksize=1))
    else:
        _pool_init(ds, split, universe, specs)
        results = [_pool_run(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1]))
    records = tuple(r[2] for r in results if r[2] is not None)
    for record in records:  # unpickled records carry dataset copies; share one
        record.model.blackbox.ds = ds
    failures = tuple((specs[r[0]].name, r[1], r[3]) for r in results if r[3] is not None)
    return RashomonCollection(ds=ds, split=split, records=records, failures=failures)


def dedup(c: RashomonCollection, agreement_threshold: float = 0.99) -> RashomonCollection:
    """Drop later models duplicating an earlier one of the same method.

    Duplicates have identical prefixes (same rules, order, and consequents)
    and black boxes agreeing on at least ``agreement_threshold`` of the
    training split.
    """
    if not (0.0 < agreement_threshold <= 1.0):
        raise ValueError("agreement threshold must be in (0, 1]")
    kept: list[ModelRecord] = []
    by_key: dict[tuple, list[ModelRecord]] = {}
    for record in c.records:
        key = (
            record.method,
            tuple((a.literals, q) for a, q in record.model.prefix.rules),
        )
        dup = False
        for other in by_key.get(key, ()):
            if agreement(record.model.blackbox, other.model.blackbox) >= agreement_threshold:
                dup = True
                break
        if not dup:
            kept.append(record)
            by_key.setdefault(key, []).append(record)
    return replace(c, records=tuple(kept))


def assign_bins(c: RashomonCollection) -> RashomonCollection:
    records = tuple(replace(r, bin=transparency_bin(r.train_transparency)) for r in c.records)
    return replace(c, records=records)


def filter_epsilon(c: RashomonCollection, epsilon: float) -> RashomonCollection:
    """Keep, per bin, models with train accuracy >= (1 - epsilon) * bin best."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if not c.binned:
        c = assign_bins(c)
    reference: dict[str, float] = {}
    for r in c.records:
        reference[r.bin] = max(reference.get(r.bin, 0.0), r.train_accuracy)
    kept = tuple(
        r for r in c.records if r.train_accuracy >= (1.0 - epsilon) * reference[r.bin]
    )
    return replace(
        c,
        records=kept,
        epsilon=epsilon,
        bin_reference_accuracy=tuple(sorted(reference.items())),
    )


def icf(c: RashomonCollection, bin_label: str, idx: int) -> float:
    """Fraction of the bin's models whose capture region contains the example."""
    members = c.members(bin_label)
    if not members:
        raise ValueError(f"bin {bin_label} is empty")
    hits = sum(int(r.model.prefix.capture_mask(c.ds, [idx])[0]) for r in members)
    return hits / len(members)


def ica(icf_value: float) -> float:
    """0 = always routed the same way across the set, 1 = a coin flip."""
    if not (0.0 <= icf_value <= 1.0):
        raise ValueError(f"coverage frequency must be in [0, 1], got {icf_value}")
    return 1.0 - 2.0 * abs(icf_value - 0.5)


def icf_vector(c: RashomonCollection, bin_label: str, indices) -> np.ndarray:
    """Coverage frequency of every index at once (rows align with indices)."""
    members = c.members(bin_label)
    if not members:
        raise ValueError(f"bin {bin_label} is empty")
    rows = np.asarray(list(indices), dtype=np.int64)
    acc = np.zeros(len(rows), dtype=np.float64)
    for r in members:
        acc += r.model.prefix.capture_mask(c.ds, rows)
    return acc / len(members)


METRICS = ("ICD", "SP", "EO", "accuracy", "sparsity", "transparency")


def model_metric(
    record: ModelRecord, ds: BinaryDataset, indices, metric: str, attribute: str | None = None
) -> float:
    if metric in ("ICD", "SP", "EO") and attribute is None:
        raise ValueError(f"metric {metric} needs a sensitive attribute")
    m = record.model
    if metric == "ICD":
        return hybrid.icd(m, ds, indices, attribute)
    if metric == "SP":
        return hybrid.statistical_parity(hybrid.predict(m, ds, indices), ds, indices, attribute)
    if metric == "EO":
        return hybrid.equal_opportunity(hybrid.predict(m, ds, indices), ds, indices, attribute)
    if metric == "accuracy":
        return hybrid.accuracy(m, ds, indices)
    if metric == "sparsity":
        return float(hybrid.sparsity(m))
    if metric == "transparency":
        return hybrid.transparency(m, ds, indices)
    raise ValueError(f"unknown metric {metric!r}")


def summarize(values) -> dict:
    """Sort-based five-number summary plus the mean and the raw values."""
    vals = sorted(float(v) for v in values)
    if not vals:
        raise ValueError("cannot summarize an empty value list")
    arr = np.asarray(vals)
    return {
        "n": len(vals),
        "min": vals[0],
        "q1": float(np.quantile(arr, 0.25)),
        "median": float(np.quantile(arr, 0.5)),
        "mean": float(arr.mean()),
        "q3": float(np.quantile(arr, 0.75)),
        "max": vals[-1],
        "values": vals,
    }


def bin_metric_distribution(
    c: RashomonCollection, metric: str, subset: str = "test", attribute: str | None = None
) -> dict[str, dict]:
    """Per-bin descriptive statistics of a model metric over the collection."""
    indices = c.subset_indices(subset)
    out: dict[str, dict] = {}
    for bin_label in BIN_LABELS:
        members = c.members(bin_label)
        if not members:
            continue
        out[bin_label] = summarize(
            model_metric(r, c.ds, indices, metric, attribute) for r in members
        )
    return out


def growth_curve(c: RashomonCollection, epsilons) -> list[tuple[str, float, int]]:
    """(bin, epsilon, surviving unique models) for each tolerance value.

    The counts are non-decreasing in epsilon within each bin.
    """
    if not c.binned:
        c = assign_bins(c)
    rows = []
    for eps in sorted(float(e) for e in epsilons):
        filtered = filter_epsilon(c, eps)
        for bin_label in BIN_LABELS:
            rows.append((bin_label, eps, len(filtered.members(bin_label))))
    return rows
