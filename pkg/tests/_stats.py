"""Shared statistical helpers for the test suite."""

import numpy as np
from scipy import stats


def chi_square_pvalue(counts, probs, min_expected=5.0):
    """Goodness-of-fit p-value with deterministic pooling of sparse bins.

    Bins whose expected count falls below min_expected are merged into the
    smallest-expectation pool until every bin clears the threshold.
    """
    counts = np.asarray(counts, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    total = counts.sum()
    expected = probs * total
    order = np.argsort(expected, kind="stable")
    pooled_counts, pooled_expected = [], []
    acc_c = acc_e = 0.0
    for k in order:
        acc_c += counts[k]
        acc_e += expected[k]
        if acc_e >= min_expected:
            pooled_counts.append(acc_c)
            pooled_expected.append(acc_e)
            acc_c = acc_e = 0.0
    if acc_e > 0:
        if pooled_counts:
            pooled_counts[-1] += acc_c
            pooled_expected[-1] += acc_e
        else:
            pooled_counts.append(acc_c)
            pooled_expected.append(acc_e)
    if len(pooled_counts) < 2:
        return 1.0
    stat, p = stats.chisquare(pooled_counts, pooled_expected)
    return float(p)


def empirical_distribution(samples, strides, num_states):
    """Flat empirical configuration distribution in enumeration order."""
    idx = samples @ strides
    return np.bincount(idx, minlength=num_states) / samples.shape[0]
