"""Time one training sweep and one fold-in pass with each kernel backend.

    python benchmarks/bench_kernels.py [--D 2000] [--sweeps 5]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from guidednest import guidance, kernels
from guidednest.estimators import estimate_phi
from guidednest.inference import fold_in
from guidednest.rng import stream
from guidednest.sampler import ModelState, initial_assignments, sweep_modality
from guidednest.synth import generate_corpus, planted_model


def bench(backend, sc, alpha, sweeps, fold_docs):
    kernels.set_backend(backend)
    z = initial_assignments(sc.corpus, sc.pmap, 3, 0)
    state = ModelState.from_corpus(sc.corpus, alpha, sc.pmap.K, 3, 0.01, 0.4, z)
    rngs = [stream(0, 3, t) for t in range(state.T)]
    t0 = time.perf_counter()
    for _ in range(sweeps):
        for t in range(state.T):
            sweep_modality(state, t, rngs[t])
    per_sweep = (time.perf_counter() - t0) / sweeps
    phi = [estimate_phi(state, t) for t in range(state.T)]
    sub = sc.corpus.subset(range(fold_docs))
    t0 = time.perf_counter()
    res = fold_in(phi, 0.4, sub, sc.pmap, alpha[:fold_docs], 3, seed=1)
    fold = time.perf_counter() - t0
    return per_sweep, fold, [zt.copy() for zt in state.z], res.theta


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--D", type=int, default=2000)
    ap.add_argument("--sweeps", type=int, default=5)
    ap.add_argument("--fold-docs", type=int, default=300)
    args = ap.parse_args(argv)
    pm = planted_model(K=10, M=3, vocab_sizes=(300, 200), seed=1)
    sc = generate_corpus(pm, args.D)
    alpha = guidance.init_alpha_cross_sectional(sc.corpus, sc.pmap, 3, 0)
    n_tokens = sum(d.n_tokens(t) for d in sc.corpus.documents for t in range(sc.corpus.T))
    print(f"D={args.D}, tokens={n_tokens}, K*M=30, backends={sorted(kernels.BACKENDS)}")
    results = {}
    for name in sorted(kernels.BACKENDS):
        results[name] = bench(name, sc, alpha, args.sweeps, args.fold_docs)
        sweep_s, fold_s = results[name][:2]
        print(f"{name:>7}: {1e3 * sweep_s:9.1f} ms/sweep ({n_tokens / sweep_s / 1e6:6.2f} M tokens/s), "
              f"fold-in of {args.fold_docs} docs {fold_s:6.2f} s")
    if len(results) == 2:
        a, b = results["cython"], results["python"]
        same = all(np.array_equal(x, y) for x, y in zip(a[2], b[2])) and np.array_equal(a[3], b[3])
        print(f"speedup: sweep x{b[0] / a[0]:.1f}, fold-in x{b[1] / a[1]:.1f}; identical results: {same}")


if __name__ == "__main__":
    main()
