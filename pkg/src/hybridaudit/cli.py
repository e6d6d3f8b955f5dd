"""Pipeline driver: prepare -> mine -> train / bootstrap -> audit -> report.

Each subcommand consumes the previous one's artifacts from the output
directory. Configuration comes from a JSON run config (--config), with
environment variables (HYBRIDAUDIT_*) overriding the file and command-line
flags overriding both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import data, hybrid, rashomon, reports, rules
from .anneal import LIST_MODE_LAM_GRID, SET_MODE_BETA_GRID, AnnealConfig
from .blackbox import ForestConfig
from .rashomon import LearnerSpec, RashomonCollection
from .search import SearchConfig

ENV_PREFIX = "HYBRIDAUDIT_"

DEFAULT_CMIN_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
DEFAULT_GROWTH_EPSILONS = tuple(round(0.005 * k, 3) for k in range(21))  # 0 .. 0.1


class ConfigError(Exception):
    pass


def _env(name: str):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))


def _setting(args, name: str, config: dict, default, cast):
    flag = getattr(args, name.replace("-", "_"), None)
    if flag is not None:
        return cast(flag)
    env = _env(name)
    if env is not None:
        return cast(env)
    if name.replace("-", "_") in config:
        return cast(config[name.replace("-", "_")])
    return default


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read run config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"run config {path!r} is not valid JSON: {exc}") from exc


def _search_defaults(config: dict, args) -> dict:
    section = dict(config.get("search", {}))
    return {
        "lam": float(section.get("lambda", section.get("lam", 1e-3))),
        "beta": float(section.get("beta", 0.0)),
        "max_prefix_len": int(section.get("max_prefix_len", 10)),
        "time_limit": _setting(args, "time-limit", section, float(section.get("time_limit", 300.0)), float),
        "memory_limit": _setting(args, "memory-limit", section, int(section.get("memory_limit", 8 << 30)), int),
    }


def _forest_config(config: dict) -> ForestConfig:
    section = dict(config.get("forest", {}))
    return ForestConfig(
        n_trees=int(section.get("n_trees", 100)),
        max_depth=int(section.get("max_depth", 10)),
        min_samples_split=int(section.get("min_samples_split", 10)),
        seed=0,
    )


def _anneal_defaults(config: dict) -> dict:
    section = dict(config.get("anneal", {}))
    return {
        "iterations": int(section.get("iterations", 2000)),
        "t_initial": float(section.get("t_initial", 0.05)),
        "cooling": float(section.get("cooling", 0.995)),
    }


def group_definitions(config: dict, args) -> list[dict]:
    """Learner groups: one approximate Rashomon set is built per group."""
    groups = config.get("groups")
    if groups is None:
        groups = [
            {"method": "exact_pre"},
            {"method": "exact_post"},
            {"method": "anneal_set"},
            {"method": "anneal_list"},
        ]
        eta = _setting(args, "eta", config, None, float)
        attribute = _setting(args, "attribute", config, None, str)
        if eta is not None and attribute is not None:
            groups += [
                {"method": "exact_pre", "eta": eta, "attribute": attribute},
                {"method": "exact_post", "eta": eta, "attribute": attribute},
            ]
    out = []
    for g in groups:
        method = g.get("method")
        if method not in rashomon.EXACT_METHODS + rashomon.ANNEAL_METHODS:
            raise ConfigError(f"unknown learner method {method!r} in groups")
        eta = float(g.get("eta", 1.0))
        attribute = g.get("attribute")
        if eta < 1.0 and attribute is None:
            raise ConfigError(f"group {method}: a coverage-gap cap (eta={eta}) needs an attribute")
        if method in rashomon.ANNEAL_METHODS and attribute is not None:
            raise ConfigError(f"group {method}: only exact methods support the coverage-gap cap")
        name = method if attribute is None else f"{method}_eta{eta:g}_{attribute}"
        out.append(
            {"name": name, "method": method, "eta": eta, "attribute": attribute, "grid": g.get("grid")}
        )
    names = [g["name"] for g in out]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate learner groups: {names}")
    return out


def expand_specs(group: dict, config: dict, args) -> list[LearnerSpec]:
    method = group["method"]
    sdef = _search_defaults(config, args)
    adef = _anneal_defaults(config)
    forest = _forest_config(config)
    specs = []
    if method in rashomon.EXACT_METHODS:
        grid = [float(v) for v in (group.get("grid") or {"c_min": DEFAULT_CMIN_GRID})["c_min"]]
        for c_min in grid:
            cfg = SearchConfig(
                lam=sdef["lam"], beta=sdef["beta"], c_min=c_min,
                eta=group["eta"], attribute=group["attribute"],
                max_prefix_len=sdef["max_prefix_len"],
                time_limit=sdef["time_limit"], memory_limit=sdef["memory_limit"],
            )
            specs.append(
                LearnerSpec(name=f"{group['name']}_cmin{c_min:g}", method=method, search=cfg, forest=forest)
            )
    elif method == "anneal_set":
        grid = [float(v) for v in (group.get("grid") or {"beta": SET_MODE_BETA_GRID})["beta"]]
        for beta in grid:
            cfg = AnnealConfig(beta=beta, lam=0.0, ordered=False, **adef)
            specs.append(
                LearnerSpec(name=f"{group['name']}_beta{beta:.6g}", method=method, anneal=cfg, forest=forest)
            )
    else:  # anneal_list
        grid = [float(v) for v in (group.get("grid") or {"lam": LIST_MODE_LAM_GRID})["lam"]]
        for lam in grid:
            cfg = AnnealConfig(beta=0.0, lam=lam, ordered=True, **adef)
            specs.append(
                LearnerSpec(name=f"{group['name']}_lam{lam:.6g}", method=method, anneal=cfg, forest=forest)
            )
    return specs


def validate_config(config: dict, args) -> None:
    mining = dict(config.get("mining", {}))
    min_support = float(mining.get("min_support", 0.01))
    if not (0 < min_support < 1):
        raise ConfigError(f"mining.min_support must be in (0, 1), got {min_support}")
    if int(mining.get("max_card", 2)) not in (1, 2):
        raise ConfigError("mining.max_card must be 1 or 2")
    if int(mining.get("max_rules", 300)) < 1:
        raise ConfigError("mining.max_rules must be >= 1")
    if int(config.get("n_bootstrap", 0)) < 0:
        raise ConfigError("n_bootstrap must be >= 0")
    for eps in _epsilons(config, args):
        if eps < 0:
            raise ConfigError(f"epsilon must be >= 0, got {eps}")
    threshold = float(config.get("agreement_threshold", 0.99))
    if not (0 < threshold <= 1):
        raise ConfigError("agreement_threshold must be in (0, 1]")
    group_definitions(config, args)  # raises on bad groups


def _epsilons(config: dict, args) -> list[float]:
    override = _setting(args, "epsilon", config, None, float)
    if override is not None:
        return [override]
    return [float(e) for e in config.get("epsilons", [0.01, 0.05])]


def _attributes(config: dict, ds) -> list[str]:
    attrs = config.get("attributes")
    if attrs is None:
        attrs = sorted(ds.group_names)
    for a in attrs:
        if a not in ds.group_names:
            raise ConfigError(f"audited attribute {a!r} has no group partition in the dataset")
    return list(attrs)


def _dataset_name(config: dict) -> str:
    manifest = config.get("dataset", {})
    if "name" in manifest:
        return manifest["name"]
    if "manifest" in manifest:
        return Path(manifest["manifest"]).stem
    return "dataset"


# ---------------------------------------------------------------------------
# artifact paths and loading


def _out_dir(args, config) -> Path:
    out = _setting(args, "out", config, None, str)
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing artifact {path}; run '{producer}' first")
    return path


def _load_prepared(out: Path):
    ds = data.load_dataset(_need(out / "dataset.bin", "prepare"))
    split = data.load_split(_need(out / "split.json", "prepare"))
    return ds, split


def _load_universe(out: Path, ds, split):
    return rules.load_universe(_need(out / "rules.json", "mine"), ds, split.train_indices)


def _spec_to_json(spec: LearnerSpec) -> dict:
    return {
        "name": spec.name,
        "method": spec.method,
        "search": asdict(spec.search) if spec.search else None,
        "anneal": asdict(spec.anneal) if spec.anneal else None,
        "forest": asdict(spec.forest),
    }


def _record_meta(record: rashomon.ModelRecord, model_file: str) -> dict:
    return {
        "file": model_file,
        "spec_name": record.spec_name,
        "method": record.method,
        "run_index": record.run_index,
        "seed": record.seed,
        "objective": record.objective,
        "optimal": record.optimal,
        "train_transparency": record.train_transparency,
        "train_accuracy": record.train_accuracy,
        "fit_transparency": record.fit_transparency,
        "fit_icd": record.fit_icd,
    }


def save_collection(c: RashomonCollection, specs, group: dict, directory: Path) -> None:
    models_dir = directory / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    record_meta = []
    for record in c.records:
        fname = f"{record.spec_name}_r{record.run_index:04d}.json"
        hybrid.save_model(record.model, models_dir / fname)
        record_meta.append(_record_meta(record, f"models/{fname}"))
    manifest = {
        "group": group["name"],
        "method": group["method"],
        "eta": group["eta"],
        "attribute": group["attribute"],
        "specs": [_spec_to_json(s) for s in specs],
        "records": record_meta,
        "failures": [list(f) for f in c.failures],
    }
    with open(directory / "collection.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_collection(directory: Path, ds, split) -> tuple[dict, RashomonCollection]:
    with open(_need(directory / "collection.json", "bootstrap"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    records = []
    for meta in manifest["records"]:
        model = hybrid.load_model(directory / meta["file"], ds, split.train_indices)
        records.append(
            rashomon.ModelRecord(
                model=model,
                spec_name=meta["spec_name"],
                method=meta["method"],
                run_index=int(meta["run_index"]),
                seed=int(meta["seed"]),
                objective=float(meta["objective"]),
                optimal=bool(meta["optimal"]),
                train_transparency=float(meta["train_transparency"]),
                train_accuracy=float(meta["train_accuracy"]),
                fit_transparency=float(meta["fit_transparency"]),
                fit_icd=None if meta["fit_icd"] is None else float(meta["fit_icd"]),
            )
        )
    collection = RashomonCollection(
        ds=ds,
        split=split,
        records=tuple(records),
        failures=tuple(tuple(f) for f in manifest.get("failures", ())),
    )
    return manifest, collection


# ---------------------------------------------------------------------------
# subcommands


def cmd_prepare(args, config: dict) -> None:
    out = _out_dir(args, config)
    section = config.get("dataset")
    if not section:
        raise ConfigError("run config has no 'dataset' section")
    if "manifest" in section:
        manifest = data.load_manifest(section["manifest"])
    else:
        manifest = dict(section)
    ds = data.dataset_from_manifest(manifest)
    seed = _setting(args, "seed", config, int(config.get("split_seed", 0)), int)
    split = data.split(ds, seed)
    data.save_dataset(ds, out / "dataset.bin")
    data.save_split(split, out / "split.json")
    print(
        f"prepared {_dataset_name(config)}: {ds.n} examples, {ds.n_features} binary features, "
        f"{len(split.train_indices)} train / {len(split.test_indices)} test"
    )


def cmd_mine(args, config: dict) -> None:
    out = _out_dir(args, config)
    ds, split = _load_prepared(out)
    mining = dict(config.get("mining", {}))
    universe = rules.mine_antecedents(
        ds,
        split.train_indices,
        min_support=float(mining.get("min_support", 0.01)),
        max_card=int(mining.get("max_card", 2)),
        max_rules=int(mining.get("max_rules", 300)),
    )
    rules.save_universe(universe, out / "rules.json")
    print(f"mined {len(universe)} antecedents (support >= {universe.min_support:g})")


def cmd_train(args, config: dict) -> None:
    out = _out_dir(args, config)
    ds, split = _load_prepared(out)
    universe = _load_universe(out, ds, split)
    base_seed = _setting(args, "seed", config, int(config.get("base_seed", 42)), int)
    train_dir = out / "train"
    (train_dir / "audit").mkdir(parents=True, exist_ok=True)
    (train_dir / "models").mkdir(parents=True, exist_ok=True)
    summary = []
    spec_index = 0
    for group in group_definitions(config, args):
        for spec in expand_specs(group, config, args):
            _, model_seed = rashomon._derive_seeds(base_seed, spec_index, 0)
            log = train_dir / "audit" / f"{spec.name}.jsonl"
            record = rashomon.train_one(
                ds, split, universe, spec, list(split.train_indices), model_seed, 0, log=str(log)
            )
            hybrid.save_model(record.model, train_dir / "models" / f"{spec.name}.json")
            summary.append(
                [spec.name, spec.method, record.seed, record.objective, record.optimal,
                 record.train_transparency, record.train_accuracy,
                 hybrid.accuracy(record.model, ds, split.test_indices), len(record.model.prefix)]
            )
            spec_index += 1
    reports.write_csv(
        train_dir / "summary.csv",
        ["spec", "method", "seed", "objective", "optimal",
         "train_transparency", "train_accuracy", "test_accuracy", "rules"],
        summary,
    )
    print(f"trained {len(summary)} reference models -> {train_dir}")


def cmd_bootstrap(args, config: dict) -> None:
    out = _out_dir(args, config)
    ds, split = _load_prepared(out)
    universe = _load_universe(out, ds, split)
    base_seed = _setting(args, "seed", config, int(config.get("base_seed", 42)), int)
    n_bootstrap = int(config.get("n_bootstrap", 0))
    workers = _setting(args, "workers", config, int(config.get("workers", 1)), int)
    for group in group_definitions(config, args):
        specs = expand_specs(group, config, args)
        collection = rashomon.build(
            ds, split, universe, specs, n_bootstrap, base_seed, workers=workers
        )
        group_dir = out / "boot" / group["name"]
        group_dir.mkdir(parents=True, exist_ok=True)
        save_collection(collection, specs, group, group_dir)
        print(
            f"group {group['name']}: {len(collection.records)} models "
            f"({len(collection.failures)} failures) -> {group_dir}"
        )


def _iter_collections(out: Path, config: dict, args, ds, split):
    for group in group_definitions(config, args):
        group_dir = out / "boot" / group["name"]
        manifest, collection = load_collection(group_dir, ds, split)
        yield group, manifest, collection


def cmd_audit(args, config: dict) -> None:
    out = _out_dir(args, config)
    ds, split = _load_prepared(out)
    dataset = _dataset_name(config)
    attributes = _attributes(config, ds)
    epsilons = _epsilons(config, args)
    threshold = float(config.get("agreement_threshold", 0.99))
    audit_dir = out / "audit"
    audit_dir.mkdir(parents=True, exist_ok=True)

    metric_rows, icf_table, verdict_table = [], [], []
    prevalence_sequences: dict[tuple, list] = {}
    for group, _, collection in _iter_collections(out, config, args, ds, split):
        deduped = rashomon.assign_bins(rashomon.dedup(collection, threshold))
        for eps in epsilons:
            filtered = rashomon.filter_epsilon(deduped, eps)
            for subset in ("train", "test"):
                metric_rows += reports.model_metric_rows(
                    filtered, dataset, group["name"], eps, subset, attributes
                )
            icf_table += reports.icf_rows(filtered, dataset, group["name"], eps, "test")
            for attribute in attributes:
                if not reports.attribute_defined(filtered, "test", attribute, "ICD"):
                    continue
                rows, directions = reports.verdict_rows(
                    filtered, dataset, group["name"], eps, "test", attribute
                )
                verdict_table += rows
                prevalence_sequences.setdefault((group["name"], eps), []).append(directions)
    reports.write_csv(audit_dir / "metrics.csv", reports.MODEL_METRIC_HEADER, metric_rows)
    reports.write_csv(audit_dir / "icf.csv", reports.ICF_HEADER, icf_table)
    reports.write_csv(audit_dir / "verdicts.csv", reports.VERDICT_HEADER, verdict_table)
    reports.write_csv(
        audit_dir / "prevalence.csv",
        reports.PREVALENCE_HEADER,
        reports.prevalence_rows(dataset, prevalence_sequences),
    )
    print(f"audited {len(metric_rows)} model-metric rows -> {audit_dir}")


def cmd_report(args, config: dict) -> None:
    out = _out_dir(args, config)
    ds, split = _load_prepared(out)
    dataset = _dataset_name(config)
    attributes = _attributes(config, ds)
    epsilons = _epsilons(config, args)
    threshold = float(config.get("agreement_threshold", 0.99))
    growth_eps = [float(e) for e in config.get("growth_epsilons", DEFAULT_GROWTH_EPSILONS)]
    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    box_rows, coverage_rows, ica_rows, growth_rows = [], [], [], []
    filtered_by_key: dict[tuple, dict] = {}
    for group, _, collection in _iter_collections(out, config, args, ds, split):
        deduped = rashomon.assign_bins(rashomon.dedup(collection, threshold))
        growth_rows += reports.growth_rows(deduped, dataset, group["name"], growth_eps)
        for eps in epsilons:
            filtered = rashomon.filter_epsilon(deduped, eps)
            filtered_by_key.setdefault(eps, {})[
                (group["method"], group["attribute"], group["eta"])
            ] = filtered
            for attribute in attributes:
                if reports.attribute_defined(filtered, "test", attribute, "ICD"):
                    box_rows += reports.distribution_summary_rows(
                        filtered, dataset, group["name"], eps, "test", "ICD", attribute
                    )
                    coverage_rows += reports.group_coverage_rows(
                        filtered, dataset, group["name"], eps, "test", attribute
                    )
            for metric in ("accuracy", "sparsity"):
                box_rows += reports.distribution_summary_rows(
                    filtered, dataset, group["name"], eps, "test", metric, None
                )
            for bin_label in rashomon.BIN_LABELS:
                if not filtered.members(bin_label):
                    continue
                freqs = rashomon.icf_vector(filtered, bin_label, split.test_indices)
                summary = rashomon.summarize(rashomon.ica(float(f)) for f in freqs)
                ica_rows.append(
                    [dataset, group["name"], eps, "test", bin_label, summary["n"],
                     summary["min"], summary["q1"], summary["median"], summary["mean"],
                     summary["q3"], summary["max"]]
                )

    mitigation_table, sweep_table = [], []
    for eps, by_key in sorted(filtered_by_key.items()):
        sweep_table += reports.sweep_rows(by_key, dataset, "test", eps, attributes)
        for (method, attribute, eta), mitigated in sorted(
            by_key.items(), key=lambda kv: (kv[0][0], str(kv[0][1]), kv[0][2])
        ):
            if attribute is None:
                continue
            base = by_key.get((method, None, 1.0))
            if base is None:
                continue
            mitigation_table += reports.mitigation_rows(
                base, mitigated, dataset, method, attribute, eta, eps, "test"
            )

    reports.write_csv(report_dir / "box_quantiles.csv", reports.DISTRIBUTION_HEADER, box_rows)
    reports.write_csv(report_dir / "group_coverage.csv", reports.GROUP_COVERAGE_HEADER, coverage_rows)
    reports.write_csv(
        report_dir / "ica_box.csv",
        ["dataset", "group", "epsilon", "subset", "bin", "n_examples",
         "min", "q1", "median", "mean", "q3", "max"],
        ica_rows,
    )
    reports.write_csv(report_dir / "mitigation.csv", reports.MITIGATION_HEADER, mitigation_table)
    reports.write_csv(report_dir / "eta_sweep.csv", reports.SWEEP_HEADER, sweep_table)
    reports.write_csv(report_dir / "growth.csv", reports.GROWTH_HEADER, growth_rows)
    print(f"report bundle -> {report_dir}")


COMMANDS = {
    "prepare": cmd_prepare,
    "mine": cmd_mine,
    "train": cmd_train,
    "bootstrap": cmd_bootstrap,
    "audit": cmd_audit,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridaudit",
        description="Learn constrained hybrid rule-list models and audit interpretability allocation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=_env("config") is None, default=_env("config"))
        p.add_argument("--out", help="artifact directory")
        p.add_argument("--workers", type=int, help="parallel training workers (bootstrap only)")
        p.add_argument("--seed", type=int, help="base seed override")
        p.add_argument("--time-limit", type=float, dest="time_limit", help="per-search seconds")
        p.add_argument("--memory-limit", type=int, dest="memory_limit", help="per-search bytes")
        p.add_argument("--eta", type=float, help="coverage-gap cap for mitigation groups")
        p.add_argument("--epsilon", type=float, help="single tolerance overriding the config list")
        p.add_argument("--attribute", help="sensitive attribute for mitigation groups")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        validate_config(config, args)
        COMMANDS[args.command](args, config)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
