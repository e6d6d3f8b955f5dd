import numpy as np
import pytest

from hybridaudit.data import BinaryDataset


def synthetic_dataset(seed=0, n=60, d=6, groups=("A", "B"), p_label=0.5) -> BinaryDataset:
    """Random binary dataset with one sensitive attribute ("attr")."""
    rng = np.random.default_rng(seed)
    features = rng.random((n, d)) < 0.5
    labels = rng.random(n) < p_label
    if not labels.any():
        labels[0] = True
    if labels.all():
        labels[0] = False
    gids = rng.integers(0, len(groups), size=n)
    for g in range(len(groups)):  # keep every group nonempty
        gids[g % n] = g
    return BinaryDataset(
        feature_names=tuple(f"f{j}" for j in range(d)),
        features=features,
        labels=labels,
        group_names={"attr": tuple(groups)},
        group_ids={"attr": gids.astype(np.int64)},
    )


def dataset_from_arrays(features, labels, group_ids=None, groups=("A", "B")) -> BinaryDataset:
    features = np.asarray(features, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    n, d = features.shape
    group_maps = {}
    id_maps = {}
    if group_ids is not None:
        group_maps["attr"] = tuple(groups)
        id_maps["attr"] = np.asarray(group_ids, dtype=np.int64)
    return BinaryDataset(
        feature_names=tuple(f"f{j}" for j in range(d)),
        features=features,
        labels=labels,
        group_names=group_maps,
        group_ids=id_maps,
    )


@pytest.fixture
def toy_ds():
    return synthetic_dataset(seed=1, n=40, d=5)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    return path
