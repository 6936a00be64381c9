#!/usr/bin/env python3
"""Benchmark the compiled kernels against their pure-numpy fallbacks.

Builds workloads through the real pipeline (synthetic corpus, trained
forest), checks that both implementations agree, then reports best-of-N
wall times.  Run with MEMLOG_NUMBA=0 to confirm the fallback path alone.
"""
import argparse
import time

import numpy as np

from memlog import kernels
from memlog.embedding import (
    Hyperparams,
    _count_pairs,
    _negative_sampling_cdf,
    _sentences,
    build_vocab,
)
from memlog.gbdt import GbdtParams, train_classifier
from memlog.synthgen import GenSpec, generate_corpus
from memlog.tokenizer import tokenize
from memlog.vectorizer import vectorize_corpus


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def report(name, detail, numpy_s, numba_s):
    if numba_s is None:
        print(f"{name:<16} {detail:<28} numpy {numpy_s * 1e3:8.2f} ms")
    else:
        print(
            f"{name:<16} {detail:<28} numba {numba_s * 1e3:8.2f} ms | "
            f"numpy {numpy_s * 1e3:8.2f} ms | speedup {numpy_s / numba_s:5.1f}x"
        )


def build_workload(n_logs, seed):
    corpus = generate_corpus(GenSpec(n_logs // 2, n_logs - n_logs // 2, seed=seed))
    grouped = [tokenize(log) for log in corpus]
    vocab = build_vocab(grouped)
    ids, offsets = _sentences(grouped, vocab)
    return corpus, grouped, vocab, ids, offsets


def bench_sgns(vocab, ids, offsets, hp, repeats):
    rng = np.random.default_rng(11)
    vin0 = ((rng.random((len(vocab), 32), dtype=np.float32)) - 0.5) / 32
    vout0 = np.zeros((len(vocab), 32), dtype=np.float32)
    pairs = _count_pairs(offsets, hp.window)
    cdf = _negative_sampling_cdf(vocab)
    draws = rng.random((pairs, hp.negatives))
    negatives = np.searchsorted(cdf, draws, side="right").astype(np.int32)
    args = (negatives, hp.window, hp.initial_lr, hp.initial_lr * 1e-4, 0, pairs)

    def run(fn):
        # fresh matrices each call: the epoch mutates them in place
        return lambda: fn(ids, offsets, vin0.copy(), vout0.copy(), *args)

    numpy_s = best_of(run(kernels._sgns_epoch_numpy), repeats)
    if not kernels.NUMBA_AVAILABLE:
        report("sgns_epoch", f"vocab={len(vocab)} pairs={pairs}", numpy_s, None)
        return
    run(kernels._sgns_epoch_numba)()  # compile before timing
    # the two variants order their in-place updates differently; losses
    # agree only approximately
    loss_nb = kernels._sgns_epoch_numba(ids, offsets, vin0.copy(), vout0.copy(), *args)
    loss_np = kernels._sgns_epoch_numpy(ids, offsets, vin0.copy(), vout0.copy(), *args)
    assert np.isclose(loss_nb, loss_np, rtol=1e-5), (loss_nb, loss_np)
    numba_s = best_of(run(kernels._sgns_epoch_numba), repeats)
    report("sgns_epoch", f"vocab={len(vocab)} pairs={pairs}", numpy_s, numba_s)


def bench_split(X, y, repeats):
    margins = np.zeros(len(y))
    p = 1.0 / (1.0 + np.exp(-margins))
    g = p - y
    h = p * (1.0 - p)
    args = (X, g, h, 1.0, 5)

    numpy_s = best_of(lambda: kernels._best_split_numpy(*args), repeats)
    detail = f"rows={X.shape[0]} features={X.shape[1]}"
    if not kernels.NUMBA_AVAILABLE:
        report("best_split", detail, numpy_s, None)
        return
    kernels._best_split_numba(*args)
    assert kernels._best_split_numba(*args) == kernels._best_split_numpy(*args)
    numba_s = best_of(lambda: kernels._best_split_numba(*args), repeats)
    report("best_split", detail, numpy_s, numba_s)


def bench_predict(model, X, repeats):
    flat = model._flat()
    args = (*flat, X, model.base_score, model.params.shrinkage)

    numpy_s = best_of(lambda: kernels._predict_margin_numpy(*args), repeats)
    detail = f"trees={len(model.trees)} rows={X.shape[0]}"
    if not kernels.NUMBA_AVAILABLE:
        report("predict_margin", detail, numpy_s, None)
        return
    kernels._predict_margin_numba(*args)
    assert np.array_equal(
        kernels._predict_margin_numba(*args), kernels._predict_margin_numpy(*args)
    )
    numba_s = best_of(lambda: kernels._predict_margin_numba(*args), repeats)
    report("predict_margin", detail, numpy_s, numba_s)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--logs", type=int, default=600, help="corpus size")
    parser.add_argument("--trees", type=int, default=100)
    parser.add_argument("--repeats", type=int, default=5, help="best-of-N timing")
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    print(f"backend: {kernels.BACKEND}")
    corpus, grouped, vocab, ids, offsets = build_workload(args.logs, args.seed)
    hp = Hyperparams(seed=args.seed)
    bench_sgns(vocab, ids, offsets, hp, args.repeats)

    from memlog.embedding import train_embeddings

    embeddings = train_embeddings(grouped, vocab, Hyperparams(epochs=1, seed=args.seed))
    X, y = vectorize_corpus(corpus, embeddings)
    bench_split(X, y, args.repeats)

    model = train_classifier(X, y, GbdtParams(trees=args.trees))
    bench_predict(model, X, args.repeats)


if __name__ == "__main__":
    main()
