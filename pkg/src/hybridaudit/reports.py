"""Tidy CSV builders for audit results and plot-ready report bundles.

Every row carries enough provenance to trace the number back to its run:
dataset, learner group, method, spec (hyperparameter point), seed, run
index, subset, epsilon, attribute, and bin where applicable. Floats are
written with repr so reruns are byte-identical.
"""

from __future__ import annotations

import csv

import numpy as np

from . import hybrid, rashomon, stats
from .rashomon import BIN_LABELS, RashomonCollection


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def attribute_defined(c: RashomonCollection, subset: str, attribute: str, metric: str) -> bool:
    """Whether a group metric is well-defined on the subset (same for all models)."""
    rows = np.asarray(c.subset_indices(subset), dtype=np.int64)
    ids = c.ds.group_ids[attribute][rows]
    names = c.ds.group_names[attribute]
    if metric == "EO":
        y = c.ds.labels[rows]
        groups = sum(1 for g in range(len(names)) if (y & (ids == g)).any())
    else:
        groups = sum(1 for g in range(len(names)) if (ids == g).any())
    return groups >= 2


def model_metric_rows(
    c: RashomonCollection,
    dataset: str,
    group: str,
    epsilon: float,
    subset: str,
    attributes,
) -> list[list]:
    """One row per (model, metric): the core tidy table for all plots."""
    indices = c.subset_indices(subset)
    rows = []
    for record in c.records:
        base = [
            dataset, group, record.method, record.spec_name, record.seed,
            record.run_index, subset, epsilon, record.bin,
        ]
        rows.append(base + ["accuracy", "", rashomon.model_metric(record, c.ds, indices, "accuracy")])
        rows.append(base + ["sparsity", "", rashomon.model_metric(record, c.ds, indices, "sparsity")])
        rows.append(
            base + ["transparency", "", rashomon.model_metric(record, c.ds, indices, "transparency")]
        )
        for attribute in attributes:
            for metric in ("ICD", "SP", "EO"):
                if not attribute_defined(c, subset, attribute, metric):
                    continue
                value = rashomon.model_metric(record, c.ds, indices, metric, attribute)
                rows.append(base + [metric, attribute, value])
    return rows


MODEL_METRIC_HEADER = [
    "dataset", "group", "method", "spec", "seed", "run_index",
    "subset", "epsilon", "bin", "metric", "attribute", "value",
]


def group_coverage_rows(
    c: RashomonCollection, dataset: str, group: str, epsilon: float, subset: str, attribute: str
) -> list[list]:
    """Per-group coverage distribution per bin (per-group curves plot data)."""
    indices = c.subset_indices(subset)
    rows = []
    for bin_label in BIN_LABELS:
        members = c.members(bin_label)
        if not members:
            continue
        per_group: dict[str, list[float]] = {}
        gaps = []
        for record in members:
            cov = hybrid.group_coverage(record.model, c.ds, indices, attribute)
            for name, value in cov.items():
                per_group.setdefault(name, []).append(value)
            gaps.append(max(cov.values()) - min(cov.values()))
        for name in sorted(per_group):
            vals = np.asarray(per_group[name])
            rows.append(
                [dataset, group, epsilon, subset, attribute, bin_label, name,
                 len(vals), float(vals.mean()), float(vals.std()),
                 float(vals.min()), float(vals.max())]
            )
        gaps_arr = np.asarray(gaps)
        rows.append(
            [dataset, group, epsilon, subset, attribute, bin_label, "<gap>",
             len(gaps), float(gaps_arr.mean()), float(gaps_arr.std()),
             float(gaps_arr.min()), float(gaps_arr.max())]
        )
    return rows


GROUP_COVERAGE_HEADER = [
    "dataset", "group", "epsilon", "subset", "attribute", "bin", "group_name",
    "n_models", "mean", "std", "min", "max",
]


def icf_rows(c: RashomonCollection, dataset: str, group: str, epsilon: float, subset: str) -> list[list]:
    """Coverage frequency and arbitrariness per example per bin."""
    indices = list(c.subset_indices(subset))
    rows = []
    for bin_label in BIN_LABELS:
        if not c.members(bin_label):
            continue
        freqs = rashomon.icf_vector(c, bin_label, indices)
        for idx, f in zip(indices, freqs):
            rows.append(
                [dataset, group, epsilon, subset, bin_label, idx, float(f), rashomon.ica(float(f))]
            )
    return rows


ICF_HEADER = ["dataset", "group", "epsilon", "subset", "bin", "example", "icf", "ica"]


def distribution_summary_rows(
    c: RashomonCollection,
    dataset: str,
    group: str,
    epsilon: float,
    subset: str,
    metric: str,
    attribute: str | None,
) -> list[list]:
    """Box-plot quantiles per bin for one metric (whiskers are min and max)."""
    rows = []
    dist = rashomon.bin_metric_distribution(c, metric, subset=subset, attribute=attribute)
    for bin_label, summary in dist.items():
        rows.append(
            [dataset, group, epsilon, subset, metric, attribute or "", bin_label,
             summary["n"], summary["min"], summary["q1"], summary["median"],
             summary["mean"], summary["q3"], summary["max"]]
        )
    return rows


DISTRIBUTION_HEADER = [
    "dataset", "group", "epsilon", "subset", "metric", "attribute", "bin",
    "n_models", "min", "q1", "median", "mean", "q3", "max",
]


def verdict_rows(
    c: RashomonCollection,
    dataset: str,
    group: str,
    epsilon: float,
    subset: str,
    attribute: str,
    alpha: float = 0.05,
) -> tuple[list[list], list[str]]:
    """Adjacent-bin test verdicts for the coverage-gap metric; returns rows and directions."""
    indices = c.subset_indices(subset)
    bin_values = []
    for bin_label in BIN_LABELS:
        members = c.members(bin_label)
        bin_values.append(
            [rashomon.model_metric(r, c.ds, indices, "ICD", attribute) for r in members]
        )
    verdicts = stats.classify_transitions(bin_values, alpha=alpha, bin_labels=list(BIN_LABELS))
    rows = []
    for v in verdicts:
        rows.append(
            [dataset, group, epsilon, subset, attribute, f"{v.pair[0]}->{v.pair[1]}",
             v.u_statistic, v.p_raw, v.p_adjusted, v.direction]
        )
    return rows, [v.direction for v in verdicts]


VERDICT_HEADER = [
    "dataset", "group", "epsilon", "subset", "attribute", "transition",
    "U", "p_raw", "p_adj", "direction",
]


def prevalence_rows(dataset: str, per_group_sequences: dict) -> list[list]:
    """Bell-like pattern prevalence per (group, epsilon) over attribute settings."""
    rows = []
    for (group, epsilon), sequences in sorted(per_group_sequences.items()):
        classifiable = [s for s in sequences if any(d != stats.UNDEFINED for d in s)]
        if not classifiable:
            rows.append([dataset, group, epsilon, 0, "", ""])
            continue
        bell, mixed = stats.bell_prevalence(classifiable)
        rows.append([dataset, group, epsilon, len(classifiable), bell, mixed])
    return rows


PREVALENCE_HEADER = ["dataset", "group", "epsilon", "n_settings", "bell_fraction", "mixed_fraction"]


def growth_rows(c: RashomonCollection, dataset: str, group: str, epsilons) -> list[list]:
    return [
        [dataset, group, bin_label, eps, count]
        for bin_label, eps, count in rashomon.growth_curve(c, epsilons)
    ]


GROWTH_HEADER = ["dataset", "group", "bin", "epsilon", "unique_models"]


def sweep_rows(
    collections: dict,
    dataset: str,
    subset: str,
    epsilon: float,
    attributes,
) -> list[list]:
    """Constraint-strength sweep: pooled means over all filtered models.

    ``collections`` maps (method, attribute, eta) -> filtered collection,
    with eta = 1.0 (or attribute None) meaning unconstrained.
    """
    rows = []
    for (method, attribute, eta), c in sorted(
        collections.items(), key=lambda kv: (kv[0][0], str(kv[0][1]), kv[0][2])
    ):
        indices = c.subset_indices(subset)
        if not len(c.records):
            continue
        metrics: dict[str, list[float]] = {"accuracy": [], "sparsity": []}
        audit_attr = attribute if attribute is not None else (list(attributes)[0] if attributes else None)
        for record in c.records:
            metrics["accuracy"].append(rashomon.model_metric(record, c.ds, indices, "accuracy"))
            metrics["sparsity"].append(rashomon.model_metric(record, c.ds, indices, "sparsity"))
            if audit_attr is not None:
                for metric in ("ICD", "SP", "EO"):
                    if attribute_defined(c, subset, audit_attr, metric):
                        metrics.setdefault(metric, []).append(
                            rashomon.model_metric(record, c.ds, indices, metric, audit_attr)
                        )
        for metric in sorted(metrics):
            vals = np.asarray(metrics[metric], dtype=float)
            if len(vals) == 0:
                continue
            rows.append(
                [dataset, method, audit_attr or "", eta, epsilon, subset, metric,
                 len(vals), float(vals.mean()), float(vals.std())]
            )
    return rows


SWEEP_HEADER = [
    "dataset", "method", "attribute", "eta", "epsilon", "subset", "metric",
    "n_models", "mean", "std",
]


def mitigation_rows(
    unconstrained: RashomonCollection,
    mitigated: RashomonCollection,
    dataset: str,
    method: str,
    attribute: str,
    eta: float,
    epsilon: float,
    subset: str,
) -> list[list]:
    """Per-bin before/after comparison for one (method, attribute, eta)."""
    indices_u = unconstrained.subset_indices(subset)
    indices_m = mitigated.subset_indices(subset)
    rows = []
    for metric in ("ICD", "SP", "EO", "accuracy", "sparsity"):
        attr = attribute if metric in ("ICD", "SP", "EO") else None
        if attr is not None and not attribute_defined(unconstrained, subset, attr, metric):
            continue
        for bin_label in BIN_LABELS:
            mem_u = unconstrained.members(bin_label)
            mem_m = mitigated.members(bin_label)
            if not mem_u or not mem_m:
                continue
            vals_u = [rashomon.model_metric(r, unconstrained.ds, indices_u, metric, attr) for r in mem_u]
            vals_m = [rashomon.model_metric(r, mitigated.ds, indices_m, metric, attr) for r in mem_m]
            rows.append(
                [dataset, method, attribute, eta, epsilon, subset, metric, bin_label,
                 len(vals_u), float(np.mean(vals_u)),
                 len(vals_m), float(np.mean(vals_m))]
            )
    return rows


MITIGATION_HEADER = [
    "dataset", "method", "attribute", "eta", "epsilon", "subset", "metric", "bin",
    "n_unconstrained", "mean_unconstrained", "n_mitigated", "mean_mitigated",
]
