"""Hybrid models: an ordered rule prefix backed by a black-box fallback.

An example is predicted by the first prefix rule whose antecedent matches
it; examples no rule captures are deferred to the black box. The capture
region is also what every audit metric in this module is about:
transparency is its size, group coverage is its per-group rate, and the
coverage-disparity metric is the largest gap between those rates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .blackbox import Predictor, predictor_from_json, predictor_to_json
from .data import BinaryDataset
from .rules import Antecedent, antecedent_mask


@dataclass(frozen=True)
class Prefix:
    """Ordered list of (antecedent, consequent label) rules."""

    rules: tuple[tuple[Antecedent, int], ...]

    def __len__(self) -> int:
        return len(self.rules)

    def capture_masks(self, ds: BinaryDataset, rows) -> tuple[list[np.ndarray], np.ndarray]:
        """Per-rule captured masks over ``rows`` plus the cumulative capture mask.

        Rule i captures exactly the rows its antecedent matches that no
        earlier rule captured.
        """
        rows = np.asarray(list(rows), dtype=np.int64)
        taken = np.zeros(len(rows), dtype=bool)
        per_rule = []
        for antecedent, _ in self.rules:
            captured = antecedent_mask(ds, rows, antecedent) & ~taken
            per_rule.append(captured)
            taken |= captured
        return per_rule, taken

    def capture_mask(self, ds: BinaryDataset, rows) -> np.ndarray:
        return self.capture_masks(ds, rows)[1]

    def predict_captured(self, ds: BinaryDataset, rows) -> tuple[np.ndarray, np.ndarray]:
        """(capture mask, predicted labels) with arbitrary labels off-capture."""
        rows = np.asarray(list(rows), dtype=np.int64)
        per_rule, taken = self.capture_masks(ds, rows)
        labels = np.zeros(len(rows), dtype=bool)
        for (_, q), captured in zip(self.rules, per_rule):
            if q:
                labels[captured] = True
        return taken, labels


EMPTY_PREFIX = Prefix(rules=())


@dataclass(frozen=True)
class Provenance:
    method: str
    params: tuple[tuple[str, object], ...]  # sorted (name, value) pairs
    seed: int
    run_index: int = 0

    @staticmethod
    def make(method: str, params: dict, seed: int, run_index: int = 0) -> "Provenance":
        return Provenance(method, tuple(sorted(params.items())), int(seed), run_index)

    def params_dict(self) -> dict:
        return dict(self.params)


@dataclass(frozen=True)
class HybridModel:
    prefix: Prefix
    blackbox: Predictor
    provenance: Provenance


def predict(m: HybridModel, ds: BinaryDataset, indices) -> np.ndarray:
    """Route each index through the prefix, deferring the rest to the black box."""
    rows = np.asarray(list(indices), dtype=np.int64)
    captured, rule_labels = m.prefix.predict_captured(ds, rows)
    out = np.asarray(m.blackbox.predict(rows), dtype=bool).copy()
    out[captured] = rule_labels[captured]
    return out


def predict_one(m: HybridModel, ds: BinaryDataset, idx: int) -> int:
    return int(predict(m, ds, [idx])[0])


def transparency(m: HybridModel, ds: BinaryDataset, subset) -> float:
    subset = list(subset)
    if not subset:
        raise ValueError("transparency is undefined on an empty subset")
    return float(m.prefix.capture_mask(ds, subset).sum()) / len(subset)


def _group_submasks(ds, subset, attribute):
    """Nonempty group masks over the subset; raises if fewer than 2 remain."""
    rows = np.asarray(list(subset), dtype=np.int64)
    ids = ds.group_ids[attribute][rows]
    names = ds.group_names[attribute]
    out = [(name, ids == g) for g, name in enumerate(names) if (ids == g).any()]
    if len(out) < 2:
        raise ValueError(
            f"disparity undefined: attribute {attribute!r} has {len(out)} nonempty group(s) on this subset"
        )
    return rows, out


def group_coverage(m: HybridModel, ds: BinaryDataset, subset, attribute: str) -> dict[str, float]:
    """Per-group fraction of examples inside the capture region."""
    rows, groups = _group_submasks(ds, subset, attribute)
    captured = m.prefix.capture_mask(ds, rows)
    return {name: float(captured[mask].sum()) / int(mask.sum()) for name, mask in groups}


def icd(m: HybridModel, ds: BinaryDataset, subset, attribute: str) -> float:
    """Largest pairwise gap in group coverage rates (0 = parity)."""
    cov = group_coverage(m, ds, subset, attribute)
    vals = list(cov.values())
    return max(vals) - min(vals)


def icd_max(m: HybridModel, ds: BinaryDataset, subset, attributes=None) -> float:
    """Convenience aggregate: the worst coverage gap over several attributes.

    Constraints and per-attribute reporting stay attribute-specific; this is
    only a summary number.
    """
    attrs = list(attributes) if attributes is not None else sorted(ds.group_names)
    if not attrs:
        raise ValueError("no sensitive attributes configured")
    return max(icd(m, ds, subset, a) for a in attrs)


def accuracy(m: HybridModel, ds: BinaryDataset, subset) -> float:
    rows = np.asarray(list(subset), dtype=np.int64)
    if len(rows) == 0:
        raise ValueError("accuracy is undefined on an empty subset")
    return float((predict(m, ds, rows) == ds.labels[rows]).mean())


def statistical_parity(pred: np.ndarray, ds: BinaryDataset, subset, attribute: str) -> float:
    """Largest gap in positive-prediction rates across groups.

    ``pred`` is aligned with ``subset`` (pred[i] is the prediction for
    subset[i]).
    """
    rows, groups = _group_submasks(ds, subset, attribute)
    pred = np.asarray(pred, dtype=bool)
    rates = [float(pred[mask].sum()) / int(mask.sum()) for _, mask in groups]
    return max(rates) - min(rates)


def equal_opportunity(pred: np.ndarray, ds: BinaryDataset, subset, attribute: str) -> float:
    """Largest gap in true-positive rates across groups with positives.

    Groups without a positive example on the subset are skipped; fewer than
    two remaining groups is an error.
    """
    rows, groups = _group_submasks(ds, subset, attribute)
    pred = np.asarray(pred, dtype=bool)
    y = ds.labels[rows]
    rates = []
    for _, mask in groups:
        pos = mask & y
        if not pos.any():
            continue
        rates.append(float(pred[pos].sum()) / int(pos.sum()))
    if len(rates) < 2:
        raise ValueError(
            f"equal opportunity undefined: fewer than 2 groups of {attribute!r} have positives"
        )
    return max(rates) - min(rates)


def sparsity(m: HybridModel) -> int:
    return len(m.prefix)


# ---------------------------------------------------------------------------
# serialization and rendering


def render(m: HybridModel) -> str:
    """Human-readable if / else if / else form of the model."""
    lines = []
    for i, (antecedent, q) in enumerate(m.prefix.rules):
        head = "if" if i == 0 else "else if"
        lines.append(f"{head} ({antecedent.describe()}) then predict {q}")
    tail = "defer to black box"
    lines.append(f"else: {tail}" if lines else tail + " (empty prefix)")
    return "\n".join(lines)


def model_to_json(m: HybridModel) -> dict:
    return {
        "rules": [
            {"literals": [[f, v] for f, v in a.literals], "q": q} for a, q in m.prefix.rules
        ],
        "blackbox_ref": predictor_to_json(m.blackbox),
        "provenance": {
            "method": m.provenance.method,
            "params": [[k, v] for k, v in m.provenance.params],
            "seed": m.provenance.seed,
            "run_index": m.provenance.run_index,
        },
    }


def model_from_json(obj: dict, ds: BinaryDataset, fingerprint_indices) -> HybridModel:
    from .rules import _conjunction_bits, constant_true

    rows = np.asarray(list(fingerprint_indices), dtype=np.int64)
    rules = []
    for entry in obj["rules"]:
        literals = tuple((f, int(v)) for f, v in entry["literals"])
        if literals:
            antecedent = Antecedent(literals=literals, support=_conjunction_bits(ds, rows, literals))
        else:
            antecedent = constant_true(len(rows))
        rules.append((antecedent, int(entry["q"])))
    prov = obj["provenance"]
    return HybridModel(
        prefix=Prefix(tuple(rules)),
        blackbox=predictor_from_json(obj["blackbox_ref"], ds, fingerprint_indices),
        provenance=Provenance(
            method=prov["method"],
            params=tuple((k, v) for k, v in prov["params"]),
            seed=int(prov["seed"]),
            run_index=int(prov.get("run_index", 0)),
        ),
    )


def save_model(m: HybridModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(m), fh)


def load_model(path, ds: BinaryDataset, fingerprint_indices) -> HybridModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh), ds, fingerprint_indices)
