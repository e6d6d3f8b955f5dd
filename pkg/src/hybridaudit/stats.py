"""Nonparametric comparison of metric distributions across transparency bins.

Adjacent bins are compared with the Mann-Whitney U test (exact permutation
distribution for small samples, tie-corrected normal approximation with
continuity correction otherwise), the three-test family is Holm-corrected,
and each transition is labeled UP, DOWN, or FLAT. A sequence of transitions
is "bell-like" when the metric rises at least once and never falls before
its last rise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EXACT_MAX_N = 20  # combined sample size at or below which the exact p is used

UP, DOWN, FLAT, UNDEFINED = "UP", "DOWN", "FLAT", "UNDEFINED"


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _u_statistic(a: np.ndarray, b: np.ndarray) -> float:
    combined = np.concatenate([a, b])
    ranks = _midranks(combined)
    r1 = float(ranks[: len(a)].sum())
    return r1 - len(a) * (len(a) + 1) / 2.0


def _exact_p(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sided p from the full permutation distribution of U.

    Counts, over all ways to choose |a| of the pooled midranks, the
    assignments whose U is at least as far from its mean as the observed
    one. Uses a subset-sum table over doubled midranks, which are integers.
    """
    n1, n2 = len(a), len(b)
    combined = np.concatenate([a, b])
    doubled = np.rint(2.0 * _midranks(combined)).astype(np.int64)
    total = int(doubled.sum())
    # count[k][s] = number of k-subsets of the doubled ranks with sum s
    count = np.zeros((n1 + 1, total + 1), dtype=np.float64)
    count[0][0] = 1.0
    for r in doubled:
        for k in range(n1, 0, -1):
            count[k][r:] += count[k - 1][: total + 1 - r]
    dist = count[n1]  # index s: doubled rank sum of the chosen subset
    u_obs_doubled = int(round(2.0 * _u_statistic(a, b)))
    mean_doubled = n1 * n2  # 2 * (n1*n2/2)
    spread = abs(u_obs_doubled - mean_doubled)
    sums = np.arange(total + 1)
    u_doubled = sums - n1 * (n1 + 1)
    hits = dist[np.abs(u_doubled - mean_doubled) >= spread].sum()
    return float(hits / dist.sum())


def _normal_p(a: np.ndarray, b: np.ndarray) -> float:
    """Tie-corrected normal approximation with continuity correction."""
    n1, n2 = len(a), len(b)
    n = n1 + n2
    u = _u_statistic(a, b)
    mean = n1 * n2 / 2.0
    _, tie_counts = np.unique(np.concatenate([a, b]), return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts).sum())) / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * (n + 1 - tie_term)
    if var <= 0:
        return 1.0  # all pooled values identical
    z = (abs(u - mean) - 0.5) / math.sqrt(var)
    if z < 0:
        z = 0.0
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def mann_whitney_u(a, b) -> tuple[float, float]:
    """U statistic of the first sample and the two-sided p value.

    Midranks handle ties; the p value comes from the exact permutation
    distribution when the combined size is at most 20 and from the
    tie-corrected normal approximation with continuity correction above
    that.
    """
    a = np.asarray(list(a), dtype=np.float64)
    b = np.asarray(list(b), dtype=np.float64)
    if len(a) < 1 or len(b) < 1:
        raise ValueError("both samples must be nonempty")
    u = _u_statistic(a, b)
    if len(a) + len(b) <= EXACT_MAX_N:
        p = _exact_p(a, b)
    else:
        p = _normal_p(a, b)
    return u, p


def holm_adjust(p_values) -> list[float]:
    """Step-down family-wise adjustment; output order matches the input."""
    ps = [float(p) for p in p_values]
    for p in ps:
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"p value out of [0, 1]: {p}")
    m = len(ps)
    order = sorted(range(m), key=ps.__getitem__)
    adjusted = [0.0] * m
    running = 0.0
    for j, idx in enumerate(order):
        running = max(running, min(1.0, (m - j) * ps[idx]))
        adjusted[idx] = running
    return adjusted


@dataclass(frozen=True)
class TransitionVerdict:
    pair: tuple[str, str]
    u_statistic: float
    p_raw: float
    p_adjusted: float
    direction: str  # UP | DOWN | FLAT | UNDEFINED


def classify_transitions(bin_values, alpha: float = 0.05, bin_labels=None) -> list[TransitionVerdict]:
    """Label each adjacent-bin transition UP, DOWN, or FLAT.

    ``bin_values`` is the ordered list of per-bin value lists. Transitions
    touching an empty bin come back UNDEFINED and are excluded from the
    family-wise correction.
    """
    bins = [list(v) for v in bin_values]
    if bin_labels is None:
        bin_labels = [f"Q{i + 1}" for i in range(len(bins))]
    pairs = list(zip(bin_labels[:-1], bin_labels[1:]))
    defined = []
    raw = []
    for i in range(len(bins) - 1):
        if bins[i] and bins[i + 1]:
            u, p = mann_whitney_u(bins[i], bins[i + 1])
            defined.append(i)
            raw.append((u, p))
    adjusted = holm_adjust([p for _, p in raw])
    verdicts: list[TransitionVerdict] = []
    k = 0
    for i, pair in enumerate(pairs):
        if i not in defined:
            verdicts.append(TransitionVerdict(pair, math.nan, math.nan, math.nan, UNDEFINED))
            continue
        u, p = raw[k]
        p_adj = adjusted[k]
        k += 1
        if p_adj <= alpha:
            lo = float(np.median(bins[i]))
            hi = float(np.median(bins[i + 1]))
            if hi > lo:
                direction = UP
            elif hi < lo:
                direction = DOWN
            else:
                direction = FLAT  # significant with tied medians: guard
        else:
            direction = FLAT
        verdicts.append(TransitionVerdict(pair, u, p, p_adj, direction))
    return verdicts


def is_bell(directions) -> bool:
    """At least one UP, with no DOWN before the last UP.

    UNDEFINED transitions are ignored; a sequence with no defined
    transitions is not bell-like.
    """
    seq = [d for d in directions if d != UNDEFINED]
    if UP not in seq:
        return False
    last_up = max(i for i, d in enumerate(seq) if d == UP)
    return DOWN not in seq[:last_up]


def bell_prevalence(verdict_sequences) -> tuple[float, float]:
    """(bell-like fraction, mixed fraction) over classifiable settings.

    Each element is one setting's transition directions. Settings whose
    transitions are all UNDEFINED cannot be classified and are dropped from
    the denominator.
    """
    bell = 0
    total = 0
    for directions in verdict_sequences:
        seq = [d for d in directions if d != UNDEFINED]
        if not seq:
            continue
        total += 1
        if is_bell(seq):
            bell += 1
    if total == 0:
        raise ValueError("no classifiable settings")
    return bell / total, (total - bell) / total
