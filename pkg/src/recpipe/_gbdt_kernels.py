"""Numba kernels for histogram gradient boosting.

Bin layout: real bins 0..n_bins-1, nulls always in bin 255.  Histograms are
per-feature, accumulated in row order, so results are bit-reproducible even
with feature-parallel execution.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

NULL_BIN = 255


@njit(cache=True, parallel=True)
def build_histograms(binned_t, rows, g, h, hist_g, hist_h, hist_c):
    n_features = binned_t.shape[0]
    for f in prange(n_features):
        hg = hist_g[f]
        hh = hist_h[f]
        hc = hist_c[f]
        col = binned_t[f]
        for i in range(len(rows)):
            r = rows[i]
            b = col[r]
            hg[b] += g[r]
            hh[b] += h[r]
            hc[b] += 1


@njit(cache=True)
def find_best_split(
    hist_g, hist_h, hist_c, n_bins, lam, min_samples_leaf,
    total_g, total_h, total_c,
):
    """Best (gain, feature, bin, missing_left) with deterministic tie-break:
    lowest feature, then lowest bin, then missing-left first."""
    best_gain = -np.inf
    best_f = -1
    best_bin = -1
    best_ml = True
    parent = total_g * total_g / (total_h + lam)
    n_features = hist_g.shape[0]
    for f in range(n_features):
        gn = hist_g[f, NULL_BIN]
        hn = hist_h[f, NULL_BIN]
        cn = hist_c[f, NULL_BIN]
        gl = 0.0
        hl = 0.0
        cl = 0
        for t in range(n_bins[f] - 1):
            gl += hist_g[f, t]
            hl += hist_h[f, t]
            cl += hist_c[f, t]
            for m in range(2):
                missing_left = m == 0
                if missing_left:
                    g_left = gl + gn
                    h_left = hl + hn
                    c_left = cl + cn
                else:
                    g_left = gl
                    h_left = hl
                    c_left = cl
                c_right = total_c - c_left
                if c_left < min_samples_leaf or c_right < min_samples_leaf:
                    continue
                g_right = total_g - g_left
                h_right = total_h - h_left
                gain = (
                    g_left * g_left / (h_left + lam)
                    + g_right * g_right / (h_right + lam)
                    - parent
                )
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_bin = t
                    best_ml = missing_left
    return best_gain, best_f, best_bin, best_ml


@njit(cache=True)
def partition_rows(col, rows, threshold_bin, missing_left):
    """Stable split of rows by bin <= threshold_bin (nulls per direction)."""
    n_left = 0
    for i in range(len(rows)):
        b = col[rows[i]]
        if (b == NULL_BIN and missing_left) or (b != NULL_BIN and b <= threshold_bin):
            n_left += 1
    left = np.empty(n_left, dtype=np.int64)
    right = np.empty(len(rows) - n_left, dtype=np.int64)
    li = 0
    ri = 0
    for i in range(len(rows)):
        r = rows[i]
        b = col[r]
        if (b == NULL_BIN and missing_left) or (b != NULL_BIN and b <= threshold_bin):
            left[li] = r
            li += 1
        else:
            right[ri] = r
            ri += 1
    return left, right


@njit(cache=True, parallel=True)
def predict_margin(
    x, base_score, tree_offsets, feature, threshold, missing_left, left, right, value, is_leaf,
):
    """Sum of tree outputs + base score per row; NaN routes per node default."""
    n = x.shape[0]
    out = np.full(n, base_score, dtype=np.float64)
    n_trees = len(tree_offsets) - 1
    for i in prange(n):
        for t in range(n_trees):
            node = tree_offsets[t]
            while not is_leaf[node]:
                v = x[i, feature[node]]
                if np.isnan(v):
                    node = left[node] if missing_left[node] else right[node]
                elif v <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] += value[node]
    return out
