"""Hot numeric kernels: skip-gram SGD, boosted-tree split search, tree inference.

Each kernel has two implementations: a scalar-loop version compiled with
numba's ``@njit`` and a vectorized pure-numpy fallback.  The numba path
is used when numba imports cleanly, unless ``MEMLOG_NUMBA=0`` forces the
fallback.  Both implementations of every kernel are importable directly
(``benchmarks/bench_kernels.py`` times them side by side); the public
names bind to the selected backend at import time.

The split-search and inference kernels accumulate strictly sequentially
in both backends, so trained trees and predicted margins are bit-identical
whichever backend is active.  The skip-gram kernels draw all randomness
outside the kernel, so each backend is individually deterministic.
"""
from __future__ import annotations

import math
import os

import numpy as np


def _env_wants_numba() -> bool:
    return os.environ.get("MEMLOG_NUMBA", "1").strip().lower() not in ("0", "false", "no")


try:
    if not _env_wants_numba():
        raise ImportError("numba disabled by MEMLOG_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"

#: Gains within this relative band are treated as tied, making split
#: selection robust to summation-order noise; ties resolve to the lowest
#: feature index, then the lowest threshold.
GAIN_TIE_REL = 1e-12
GAIN_TIE_ABS = 1e-15


# --------------------------------------------------------------------------
# skip-gram with negative sampling
#
# One epoch over the corpus.  ``ids`` holds token ids for every sentence
# back to back; sentence s spans ids[offsets[s]:offsets[s+1]].  For the
# pair at global index t (continuing across epochs via ``pair_base``),
# the learning rate decays linearly from lr0 to lr_floor over
# ``total_pairs`` updates, and row t-pair_base of ``negatives`` supplies
# the pre-drawn negative token ids.  Negatives equal to the positive
# context are skipped.  Updates both matrices in place; returns the
# summed pair loss for diagnostics.


def _sgns_epoch_numpy(ids, offsets, vin, vout, negatives, window, lr0, lr_floor, pair_base, total_pairs):
    k = negatives.shape[1]
    pair = 0
    loss = 0.0
    for s in range(offsets.shape[0] - 1):
        start, stop = offsets[s], offsets[s + 1]
        for i in range(start, stop):
            center = ids[i]
            lo = max(i - window, start)
            hi = min(i + window, stop - 1)
            for j in range(lo, hi + 1):
                if j == i:
                    continue
                context = ids[j]
                lr = lr0 * (1.0 - (pair_base + pair) / total_pairs)
                if lr < lr_floor:
                    lr = lr_floor
                v = vin[center]
                grad_v = np.zeros_like(v)

                score = float(np.dot(vout[context], v))
                # sigmoid and softplus in overflow-safe form
                if score >= 0.0:
                    sig = 1.0 / (1.0 + math.exp(-score))
                    loss += math.log1p(math.exp(-score))
                else:
                    e = math.exp(score)
                    sig = e / (1.0 + e)
                    loss += math.log1p(e) - score
                g = np.float32((1.0 - sig) * lr)
                grad_v += g * vout[context]
                vout[context] += g * v

                for n in range(k):
                    target = negatives[pair, n]
                    if target == context:
                        continue
                    score = float(np.dot(vout[target], v))
                    if score >= 0.0:
                        e = math.exp(-score)
                        sig = 1.0 / (1.0 + e)
                        loss += math.log1p(e) + score
                    else:
                        e = math.exp(score)
                        sig = e / (1.0 + e)
                        loss += math.log1p(e)
                    g = np.float32(-sig * lr)
                    grad_v += g * vout[target]
                    vout[target] += g * v

                vin[center] += grad_v
                pair += 1
    return loss


def _sgns_epoch_scalar(ids, offsets, vin, vout, negatives, window, lr0, lr_floor, pair_base, total_pairs):
    dim = vin.shape[1]
    k = negatives.shape[1]
    grad_v = np.zeros(dim, dtype=np.float32)
    pair = 0
    loss = 0.0
    for s in range(offsets.shape[0] - 1):
        start, stop = offsets[s], offsets[s + 1]
        for i in range(start, stop):
            center = ids[i]
            lo = max(i - window, start)
            hi = min(i + window, stop - 1)
            for j in range(lo, hi + 1):
                if j == i:
                    continue
                context = ids[j]
                lr = lr0 * (1.0 - (pair_base + pair) / total_pairs)
                if lr < lr_floor:
                    lr = lr_floor
                for d in range(dim):
                    grad_v[d] = 0.0

                # float64 accumulator even under interpreted promotion rules
                score = np.float64(0.0)
                for d in range(dim):
                    score += vout[context, d] * vin[center, d]
                if score >= 0.0:
                    sig = 1.0 / (1.0 + math.exp(-score))
                    loss += math.log1p(math.exp(-score))
                else:
                    e = math.exp(score)
                    sig = e / (1.0 + e)
                    loss += math.log1p(e) - score
                g = np.float32((1.0 - sig) * lr)
                for d in range(dim):
                    grad_v[d] += g * vout[context, d]
                    vout[context, d] += g * vin[center, d]

                for n in range(k):
                    target = negatives[pair, n]
                    if target == context:
                        continue
                    score = np.float64(0.0)
                    for d in range(dim):
                        score += vout[target, d] * vin[center, d]
                    if score >= 0.0:
                        e = math.exp(-score)
                        sig = 1.0 / (1.0 + e)
                        loss += math.log1p(e) + score
                    else:
                        e = math.exp(score)
                        sig = e / (1.0 + e)
                        loss += math.log1p(e)
                    g = np.float32(-sig * lr)
                    for d in range(dim):
                        grad_v[d] += g * vout[target, d]
                        vout[target, d] += g * vin[center, d]

                for d in range(dim):
                    vin[center, d] += grad_v[d]
                pair += 1
    return loss


# --------------------------------------------------------------------------
# gradient-boosted tree split search
#
# Exact greedy search over all features and all midpoints between
# consecutive distinct sorted values.  Gain for a candidate split:
#
#     1/2 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam))
#
# Children below min_leaf rows and gains <= 0 are rejected.  Selection is
# two-pass: find the maximum gain, then take the first candidate (lowest
# feature, then lowest threshold) within the tie band of that maximum.
# Returns (feature, threshold, gain); feature is -1 when no split helps.


def _node_totals(g, h):
    gtot = 0.0
    htot = 0.0
    for i in range(g.shape[0]):
        gtot += g[i]
        htot += h[i]
    return gtot, htot


def _scan_feature_best(x, order, g, h, gtot, htot, lam, min_leaf, parent):
    """Best gain over this feature's candidate splits; -inf when none valid."""
    n = order.shape[0]
    best = -np.inf
    cg = 0.0
    ch = 0.0
    for i in range(n - 1):
        row = order[i]
        cg += g[row]
        ch += h[row]
        if x[order[i]] == x[order[i + 1]]:
            continue
        if i + 1 < min_leaf or n - i - 1 < min_leaf:
            continue
        gr = gtot - cg
        hr = htot - ch
        gain = 0.5 * (cg * cg / (ch + lam) + gr * gr / (hr + lam) - parent)
        if gain > best:
            best = gain
    return best


def _scan_feature_winner(x, order, g, h, gtot, htot, lam, min_leaf, parent, cutoff):
    """First candidate in threshold order whose gain reaches the cutoff."""
    n = order.shape[0]
    cg = 0.0
    ch = 0.0
    for i in range(n - 1):
        row = order[i]
        cg += g[row]
        ch += h[row]
        if x[order[i]] == x[order[i + 1]]:
            continue
        if i + 1 < min_leaf or n - i - 1 < min_leaf:
            continue
        gr = gtot - cg
        hr = htot - ch
        gain = 0.5 * (cg * cg / (ch + lam) + gr * gr / (hr + lam) - parent)
        if gain >= cutoff and gain > 0.0:
            return (x[order[i]] + x[order[i + 1]]) / 2.0, gain
    return np.nan, -np.inf


def _best_split_scalar(X, g, h, lam, min_leaf):
    n, n_features = X.shape
    if n < 2 * min_leaf:
        return -1, 0.0, 0.0
    gtot, htot = _node_totals(g, h)
    parent = gtot * gtot / (htot + lam)

    feature_best = np.full(n_features, -np.inf)
    for f in range(n_features):
        order = np.argsort(X[:, f], kind="mergesort")
        feature_best[f] = _scan_feature_best(X[:, f], order, g, h, gtot, htot, lam, min_leaf, parent)

    best = feature_best[0]
    for f in range(1, n_features):
        if feature_best[f] > best:
            best = feature_best[f]
    if not best > 0.0:
        return -1, 0.0, 0.0

    cutoff = best - (GAIN_TIE_REL * abs(best) + GAIN_TIE_ABS)
    for f in range(n_features):
        if feature_best[f] >= cutoff:
            order = np.argsort(X[:, f], kind="mergesort")
            threshold, gain = _scan_feature_winner(
                X[:, f], order, g, h, gtot, htot, lam, min_leaf, parent, cutoff
            )
            if gain > 0.0:
                return f, threshold, gain
    return -1, 0.0, 0.0


def _best_split_numpy(X, g, h, lam, min_leaf):
    n, n_features = X.shape
    if n < 2 * min_leaf:
        return -1, 0.0, 0.0
    gtot = float(np.cumsum(g)[-1])
    htot = float(np.cumsum(h)[-1])
    parent = gtot * gtot / (htot + lam)

    positions = np.arange(1, n)
    size_ok = (positions >= min_leaf) & (n - positions >= min_leaf)

    def feature_gains(f):
        order = np.argsort(X[:, f], kind="mergesort")
        xs = X[order, f]
        cg = np.cumsum(g[order])[:-1]
        ch = np.cumsum(h[order])[:-1]
        valid = (xs[:-1] != xs[1:]) & size_ok
        gains = np.full(n - 1, -np.inf)
        gl, hl = cg[valid], ch[valid]
        gr, hr = gtot - gl, htot - hl
        gains[valid] = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
        return xs, gains

    feature_best = np.full(n_features, -np.inf)
    for f in range(n_features):
        _, gains = feature_gains(f)
        if gains.size:
            feature_best[f] = gains.max()

    best = float(feature_best.max()) if n_features else -np.inf
    if not best > 0.0:
        return -1, 0.0, 0.0

    cutoff = best - (GAIN_TIE_REL * abs(best) + GAIN_TIE_ABS)
    for f in np.nonzero(feature_best >= cutoff)[0]:
        xs, gains = feature_gains(int(f))
        hits = np.nonzero((gains >= cutoff) & (gains > 0.0))[0]
        if hits.size:
            i = int(hits[0])
            return int(f), (xs[i] + xs[i + 1]) / 2.0, float(gains[i])
    return -1, 0.0, 0.0


# --------------------------------------------------------------------------
# boosted-tree inference
#
# A forest is flattened into parallel node arrays; ``features[node] < 0``
# marks a leaf.  Margin = base + shrinkage * sum of leaf values, trees
# visited in training order.


def _predict_margin_scalar(features, thresholds, lefts, rights, values, roots, X, base, shrinkage):
    n = X.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        margin = base
        for t in range(roots.shape[0]):
            node = roots[t]
            while features[node] >= 0:
                if X[i, features[node]] < thresholds[node]:
                    node = lefts[node]
                else:
                    node = rights[node]
            margin += shrinkage * values[node]
        out[i] = margin
    return out


def _predict_margin_numpy(features, thresholds, lefts, rights, values, roots, X, base, shrinkage):
    n = X.shape[0]
    out = np.full(n, base, dtype=np.float64)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        while True:
            f = features[node]
            internal = np.nonzero(f >= 0)[0]
            if internal.size == 0:
                break
            at = node[internal]
            go_left = X[internal, f[internal]] < thresholds[at]
            node[internal] = np.where(go_left, lefts[at], rights[at])
        out += shrinkage * values[node]
    return out


# --------------------------------------------------------------------------
# backend binding

if NUMBA_AVAILABLE:
    _sgns_epoch_numba = njit(cache=True)(_sgns_epoch_scalar)
    _scan_feature_best = njit(cache=True)(_scan_feature_best)
    _scan_feature_winner = njit(cache=True)(_scan_feature_winner)
    _node_totals = njit(cache=True)(_node_totals)
    _best_split_numba = njit(cache=True)(_best_split_scalar)
    _predict_margin_numba = njit(cache=True)(_predict_margin_scalar)

    sgns_epoch = _sgns_epoch_numba
    best_split = _best_split_numba
    predict_margin = _predict_margin_numba
else:
    _sgns_epoch_numba = None
    _best_split_numba = None
    _predict_margin_numba = None

    sgns_epoch = _sgns_epoch_numpy
    best_split = _best_split_numpy
    predict_margin = _predict_margin_numpy
