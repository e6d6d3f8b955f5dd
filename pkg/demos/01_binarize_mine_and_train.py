"""Walkthrough: from a raw CSV to a trained hybrid rule-list model.

Generates a small tabular dataset, binarizes it (quantile bins + one-hot),
mines candidate rule antecedents, and trains both exact learners: one that
fits the prefix before the black box exists, and one that fits it around a
pre-trained black box.
"""

import tempfile
from pathlib import Path

import numpy as np

from hybridaudit import (
    ForestConfig,
    SearchConfig,
    accuracy,
    binarize,
    finalize_pre,
    load_csv,
    mine_antecedents,
    render,
    search,
    split,
    train_forest,
    transparency,
)
from hybridaudit.data import GroupSpec
from hybridaudit.hybrid import HybridModel, Provenance

rng = np.random.default_rng(7)
n = 400

# A loan-style table: age and income drive the label, region is sensitive.
age = rng.integers(18, 75, n)
income = np.round(rng.lognormal(10.3, 0.5, n), 2)
region = rng.choice(["north", "south", "east", "west"], n, p=[0.4, 0.3, 0.2, 0.1])
prior_default = (rng.random(n) < 0.25).astype(int)
score = 0.03 * (age - 40) + 0.9 * (income > 30000) - 1.5 * prior_default
label = (score + rng.normal(0, 0.8, n) > 0).astype(int)

csv_path = Path(tempfile.mkdtemp()) / "loans.csv"
with open(csv_path, "w") as fh:
    fh.write("age,income,region,prior_default,approved\n")
    for row in zip(age, income, region, prior_default, label):
        fh.write(",".join(str(v) for v in row) + "\n")

table = load_csv(csv_path, label_column="approved", positive_value="1")
print(f"loaded {table.n_rows} rows; numeric columns: {table.numeric_columns}")

ds = binarize(table, n_bins=3, group_specs=(GroupSpec(column="region", top_k=2),))
print(f"binarized into {ds.n_features} indicator features")
print(f"region groups: {ds.group_names['region']}")

sp = split(ds, seed=0)
universe = mine_antecedents(ds, sp.train_indices, min_support=0.05, max_card=2, max_rules=40)
print(f"\nmined {len(universe)} antecedents; the five with largest support:")
for a in universe.antecedents[:5]:
    print(f"  {a.describe()}  (support {a.count}/{universe.n_train})")

# Learner 1: prefix first. Uncaptured examples are charged the best error any
# future classifier could achieve on them, then a forest is fit on the rest.
cfg = SearchConfig(lam=0.005, c_min=0.4, max_prefix_len=4, time_limit=30.0)
result = search(ds, sp.train_indices, universe, cfg, mode="pre")
model_pre = finalize_pre(ds, sp.train_indices, result.prefix,
                         ForestConfig(n_trees=50, seed=1),
                         fingerprint_indices=sp.train_indices)
print(f"\nprefix-first model (objective {result.objective:.4f}, "
      f"proven optimal: {result.optimal}):")
print(render(model_pre))

# Learner 2: black box first, prefix fitted around its actual mistakes.
bb = train_forest(ds, sp.train_indices, ForestConfig(n_trees=50, seed=2),
                  fingerprint_indices=sp.train_indices)
result_post = search(ds, sp.train_indices, universe, cfg, mode="post", blackbox=bb)
model_post = HybridModel(result_post.prefix, bb, Provenance.make("exact_post", {}, 2))
print(f"\nblack-box-first model (objective {result_post.objective:.4f}):")
print(render(model_post))

for name, model in (("prefix-first", model_pre), ("black-box-first", model_post)):
    print(f"\n{name}:")
    print(f"  train transparency {transparency(model, ds, sp.train_indices):.3f}")
    print(f"  test transparency  {transparency(model, ds, sp.test_indices):.3f}")
    print(f"  test accuracy      {accuracy(model, ds, sp.test_indices):.3f}")
