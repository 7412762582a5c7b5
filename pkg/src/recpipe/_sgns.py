"""Numba kernel for skip-gram training with negative sampling.

Single-threaded and driven by an explicit xorshift64* state, so runs are
bit-reproducible for a given seed regardless of numba threading config.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_XSMULT = np.uint64(0x2545F4914F6CDD1D)
_INV53 = 1.0 / (1 << 53)


@njit(cache=True, inline="always")
def _xorshift(state):
    state ^= state >> np.uint64(12)
    state ^= state << np.uint64(25)
    state &= np.uint64(0xFFFFFFFFFFFFFFFF)
    state ^= state >> np.uint64(27)
    return state


@njit(cache=True, inline="always")
def _rand_f64(state):
    # 53-bit uniform in [0, 1)
    return float((state * _XSMULT) >> np.uint64(11)) * _INV53


@njit(cache=True)
def _sample_negative(cum, r):
    lo = 0
    hi = len(cum) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] < r:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _pair_loss(u, v, sign):
    # -log sigmoid(sign * u.v), computed stably
    d = sign * np.dot(u, v)
    if d > 0.0:
        return np.log1p(np.exp(-d))
    return -d + np.log1p(np.exp(d))


@njit(cache=True)
def probe_loss(syn0, syn1, centers, contexts, negatives):
    """Average negative-sampling objective over a fixed probe batch."""
    total = 0.0
    n = len(centers)
    for i in range(n):
        u = syn0[centers[i]]
        total += _pair_loss(u, syn1[contexts[i]], 1.0)
        for j in range(negatives.shape[1]):
            total += _pair_loss(u, syn1[negatives[i, j]], -1.0)
    return total / n


@njit(cache=True)
def train_sgns(
    tokens,
    offsets,
    keep_prob,
    neg_cum,
    dims,
    window,
    negatives,
    epochs,
    lr_initial,
    lr_final,
    seed,
    probe_centers,
    probe_contexts,
    probe_negatives,
):
    """Train skip-gram/negative-sampling; returns (syn0, syn1, epoch_losses).

    ``tokens``/``offsets`` are the CSR-flattened sentences.  ``keep_prob``
    is the per-token subsampling keep probability.  LR decays linearly with
    raw token progress from lr_initial to lr_final.
    """
    n_vocab = len(keep_prob)
    state = np.uint64(seed * 2 + 1)
    for _ in range(16):
        state = _xorshift(state)

    syn0 = np.empty((n_vocab, dims), dtype=np.float64)
    for i in range(n_vocab):
        for d in range(dims):
            state = _xorshift(state)
            syn0[i, d] = (_rand_f64(state) - 0.5) / dims
    syn1 = np.zeros((n_vocab, dims), dtype=np.float64)

    n_sentences = len(offsets) - 1
    total_tokens = float(len(tokens) * epochs)
    processed = 0.0
    lr_span = lr_initial - lr_final
    neu1e = np.empty(dims, dtype=np.float64)
    sent = np.empty(64, dtype=np.int64)
    epoch_losses = np.zeros(epochs, dtype=np.float64)

    for epoch in range(epochs):
        for s in range(n_sentences):
            start, end = offsets[s], offsets[s + 1]
            # subsample frequent tokens
            n_kept = 0
            for t in range(start, end):
                processed += 1.0
                w = tokens[t]
                state = _xorshift(state)
                if _rand_f64(state) < keep_prob[w]:
                    if n_kept < len(sent):
                        sent[n_kept] = w
                        n_kept += 1
            lr = lr_initial - lr_span * (processed / total_tokens)
            if lr < lr_final:
                lr = lr_final
            for i in range(n_kept):
                center = sent[i]
                state = _xorshift(state)
                b = 1 + int(_rand_f64(state) * window)
                lo = i - b if i - b > 0 else 0
                hi = i + b + 1 if i + b + 1 < n_kept else n_kept
                for j in range(lo, hi):
                    if j == i:
                        continue
                    context = sent[j]
                    if context == center:
                        continue
                    for d in range(dims):
                        neu1e[d] = 0.0
                    u = syn0[center]
                    for k in range(negatives + 1):
                        if k == 0:
                            target = context
                            label = 1.0
                        else:
                            state = _xorshift(state)
                            target = _sample_negative(neg_cum, _rand_f64(state))
                            if target == context:
                                continue
                            label = 0.0
                        v = syn1[target]
                        dot = 0.0
                        for d in range(dims):
                            dot += u[d] * v[d]
                        if dot > 8.0:
                            f = 1.0
                        elif dot < -8.0:
                            f = 0.0
                        else:
                            f = 1.0 / (1.0 + np.exp(-dot))
                        g = (label - f) * lr
                        for d in range(dims):
                            neu1e[d] += g * v[d]
                            v[d] += g * u[d]
                    for d in range(dims):
                        u[d] += neu1e[d]
        if len(probe_centers) > 0:
            epoch_losses[epoch] = probe_loss(
                syn0, syn1, probe_centers, probe_contexts, probe_negatives
            )
    return syn0, syn1, epoch_losses
