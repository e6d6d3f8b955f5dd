"""Walkthrough: bootstrap collections of near-optimal models and their audits.

One trained model is a single draw from a pool of similarly accurate
alternatives. This demo retrains one configuration across bootstrap
resamples, organizes the survivors into transparency bins, filters them to
an accuracy tolerance, and then asks the questions that matter: how unevenly
does interpretability fall across groups (per-model coverage gap), and how
arbitrary is each individual's routing across the whole collection?
"""

import numpy as np

from hybridaudit import (
    AnnealConfig,
    ForestConfig,
    LearnerSpec,
    SearchConfig,
    assign_bins,
    bin_metric_distribution,
    build,
    classify_transitions,
    dedup,
    filter_epsilon,
    growth_curve,
    mine_antecedents,
    split,
)
from hybridaudit import rashomon
from hybridaudit.data import BinaryDataset
from hybridaudit.stats import is_bell

rng = np.random.default_rng(1)
n = 500

group = rng.integers(0, 2, n)
x1 = (group == 0) ^ (rng.random(n) < 0.25)
x2 = rng.random(n) < 0.5
x3 = rng.random(n) < 0.5
label = ((x1 & x2) | (x3 & (rng.random(n) < 0.8))).astype(bool)

ds = BinaryDataset(
    feature_names=("x1", "x2", "x3"),
    features=np.column_stack([x1, x2, x3]),
    labels=label,
    group_names={"group": ("A", "B")},
    group_ids={"group": group.astype(np.int64)},
)
sp = split(ds, seed=0)
universe = mine_antecedents(ds, sp.train_indices, min_support=0.05, max_rules=25)

forest = ForestConfig(n_trees=10, max_depth=6, min_samples_split=10)
specs = [
    LearnerSpec(
        name=f"exact_post_cmin{c:g}", method="exact_post",
        search=SearchConfig(lam=0.005, c_min=c, max_prefix_len=3, time_limit=20.0),
        forest=forest,
    )
    for c in (0.2, 0.4, 0.6, 0.8)
] + [
    LearnerSpec(
        name=f"anneal_set_beta{b:g}", method="anneal_set",
        anneal=AnnealConfig(beta=b, iterations=300), forest=forest,
    )
    for b in (0.05, 0.3)
]

print("training 1 reference + 40 bootstrap models per configuration...")
collection = build(ds, sp, universe, specs, n_bootstrap=40, base_seed=9)
print(f"raw collection: {len(collection.records)} models, {len(collection.failures)} failures")

unique = dedup(collection, agreement_threshold=0.99)
print(f"after duplicate removal: {len(unique.records)} unique models")

binned = assign_bins(unique)
for b in rashomon.BIN_LABELS:
    print(f"  {b}: {len(binned.members(b))} models")

filtered = filter_epsilon(binned, epsilon=0.02)
print(f"\nwithin 2% of the best train accuracy in their bin: {len(filtered.records)} models")
print("per-bin reference accuracy:", dict(filtered.bin_reference_accuracy))

print("\nhow the collection grows as the tolerance loosens (Q-bins x epsilon):")
for bin_label, eps, count in growth_curve(binned, [0.0, 0.01, 0.02, 0.05, 0.1]):
    if bin_label == "Q1":
        print()
    print(f"  {bin_label} eps={eps:<5g} -> {count:3d} models", end="")
print("\n")

print("test-set coverage-gap distribution per transparency bin:")
dist = bin_metric_distribution(filtered, "ICD", subset="test", attribute="group")
for bin_label, summary in dist.items():
    print(
        f"  {bin_label}: n={summary['n']:3d} min={summary['min']:.3f} "
        f"median={summary['median']:.3f} mean={summary['mean']:.3f} max={summary['max']:.3f}"
    )

print("\nadjacent-bin transitions (Mann-Whitney U, Holm-corrected):")
bin_values = [
    [rashomon.model_metric(r, ds, sp.test_indices, "ICD", "group") for r in filtered.members(b)]
    for b in rashomon.BIN_LABELS
]
verdicts = classify_transitions(bin_values, alpha=0.05)
for v in verdicts:
    print(f"  {v.pair[0]}->{v.pair[1]}: U={v.u_statistic:.1f} p_adj={v.p_adjusted:.4f} {v.direction}")
directions = [v.direction for v in verdicts]
print(f"bell-like pattern: {is_bell(directions)}")

print("\nindividual routing arbitrariness on the test set (0 = stable, 1 = coin flip):")
for bin_label in rashomon.BIN_LABELS:
    if not filtered.members(bin_label):
        continue
    freqs = rashomon.icf_vector(filtered, bin_label, sp.test_indices)
    arb = np.array([rashomon.ica(float(f)) for f in freqs])
    print(f"  {bin_label}: mean {arb.mean():.3f}, share above 0.5: {(arb > 0.5).mean():.2%}")
