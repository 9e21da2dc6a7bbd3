"""Shared builders for random comparison sets."""

import numpy as np

from poerank.core import ComparisonRecord, all_pairs, sample_subset, validate_set


def random_connected_set(rng, n, k, directed=True, p_low=0.05, p_high=0.95):
    """Comparison set over a random covering subset with uniform probabilities."""
    pairs = sample_subset(n, k, rng, directed=directed)
    p = rng.uniform(p_low, p_high, len(pairs))
    return validate_set([ComparisonRecord(i, j, float(q)) for (i, j), q in zip(pairs, p)], n, directed=directed)


def symmetric_full_set(rng, n, directed=True):
    """Full set with consistent probabilities: p_ji = 1 - p_ij."""
    recs = []
    for i, j in all_pairs(n):
        q = float(rng.uniform(0.05, 0.95))
        recs.append(ComparisonRecord(i, j, q))
        if directed:
            recs.append(ComparisonRecord(j, i, 1.0 - q))
    return validate_set(recs, n, directed=directed)
