#!/usr/bin/env python3
"""Benchmark the numba kernel against the numpy fallback.

Times the two workloads that dominate runtime: per-candidate education-value
sweeps (policy selection) and batched cohort E-step sweeps (EM). Run:

    python3 bench/bench_kernels.py [--leaves 30] [--students 500] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from treekt import _kernels
from treekt.engine import Tracer
from treekt.synth import generate_cohort, synthetic_params, synthetic_tree


def run_kernel(impl, tracer, log_ev, repeat):
    B, N = log_ev.shape[0], log_ev.shape[1]
    post = np.empty((B, N))
    eq10 = np.empty((B, N))
    ll = np.empty(B)
    impl(tracer.parents, tracer.order, tracer.log_g1, tracer.log_g0, log_ev, post, eq10, ll)
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        impl(tracer.parents, tracer.order, tracer.log_g1, tracer.log_g0, log_ev, post, eq10, ll)
        best = min(best, time.perf_counter() - start)
    return best, post


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--leaves", type=int, default=30)
    parser.add_argument("--students", type=int, default=500)
    parser.add_argument("--records", type=int, default=50)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    tree = synthetic_tree(args.leaves, branching=5)
    params = synthetic_params(tree, seed=0)
    tracer = Tracer(tree, params)
    cohort = generate_cohort(tree, params, args.students, args.records, seed=1)
    counts = tracer.counts_stack(cohort)

    selection_ev = np.ascontiguousarray(
        np.broadcast_to(
            tracer.log_evidence(counts[0]), (len(tracer.leaf_indices) + 1, tracer.n_nodes, 2)
        ).copy()
    )
    cohort_ev = np.ascontiguousarray(tracer.log_evidence(counts))

    impls = [("numpy ", _kernels.ud_batch_numpy)]
    if _kernels.USE_NUMBA:
        impls.insert(0, ("numba ", _kernels.ud_batch_loops))
    else:
        print("numba backend unavailable or disabled (TREEKT_KERNEL=numpy); "
              "benchmarking numpy only")

    print(f"tree: {tracer.n_nodes} nodes / {len(tracer.leaf_indices)} leaves; "
          f"cohort: {args.students} students x {args.records} records")
    print(f"active backend: {_kernels.backend()}\n")
    for label, workload in (("selection sweep", selection_ev), ("cohort E-step", cohort_ev)):
        print(f"{label}  (batch {workload.shape[0]})")
        times = {}
        reference = None
        for name, impl in impls:
            best, post = run_kernel(impl, tracer, workload, args.repeat)
            times[name] = best
            if reference is None:
                reference = post
            else:
                drift = float(np.max(np.abs(post - reference)))
                assert drift < 1e-9, f"kernel outputs diverged by {drift}"
            print(f"  {name}: {best * 1e3:9.3f} ms")
        if len(times) == 2:
            numba_t, numpy_t = times["numba "], times["numpy "]
            print(f"  speedup: {numpy_t / numba_t:5.1f}x\n")
        else:
            print()


if __name__ == "__main__":
    main()
