"""Hot inference kernels: batched upward-downward sweeps on binary mastery trees.

Two interchangeable implementations share one signature:

* ``ud_batch_loops`` - explicit loops, JIT-compiled with numba when available.
* ``ud_batch_numpy`` - the same recursion vectorized across the batch axis.

The active backend is numba unless the environment variable
``TREEKT_KERNEL=numpy`` is set (or numba is not importable). Both paths are
kept importable so tests and ``bench/bench_kernels.py`` can compare them.

Array conventions: nodes are indexed in document order; ``parents[u]`` is -1
for the root; ``order`` is a BFS order with the root first, so iterating it
in reverse visits children before parents. ``log_ev[b, u, k]`` is the summed
log-likelihood of node ``u``'s observations given mastery state ``k``.
Outputs per batch row: ``post[b, u] = p(K_u = 1 | evidence)``,
``eq10[b, u] = p(K_u = 1, K_parent(u) = 0 | evidence)`` (0 at the root), and
``ll[b]`` the log marginal likelihood.
"""

from __future__ import annotations

import math
import os

import numpy as np

__all__ = [
    "backend",
    "ud_batch",
    "ud_batch_loops",
    "ud_batch_numpy",
    "USE_NUMBA",
]


def _lse2(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


def _lse3(a: float, b: float, c: float) -> float:
    m = a
    if b > m:
        m = b
    if c > m:
        m = c
    if m == -math.inf:
        return m
    return m + math.log(math.exp(a - m) + math.exp(b - m) + math.exp(c - m))


def _ud_batch_loops(parents, order, log_g1, log_g0, log_ev, post, eq10, ll):
    B = log_ev.shape[0]
    N = parents.shape[0]
    for b in range(B):
        inside = np.empty((N, 2))
        upmsg = np.zeros((N, 2))
        outside = np.empty((N, 2))
        for u in range(N):
            inside[u, 0] = log_ev[b, u, 0]
            inside[u, 1] = log_ev[b, u, 1]
        acc = 0.0
        # Upward sweep: children precede parents in reversed BFS order.
        # Each node is normalized once; the normalizers sum to the log
        # marginal likelihood together with the root prior term.
        for i in range(N - 1, -1, -1):
            u = order[i]
            z = _lse2(inside[u, 0], inside[u, 1])
            inside[u, 0] -= z
            inside[u, 1] -= z
            acc += z
            p = parents[u]
            if p >= 0:
                # Parent mastered implies child mastered, so the message for
                # parent-state 1 is just inside[u, 1].
                m0 = _lse2(log_g0[u] + inside[u, 0], log_g1[u] + inside[u, 1])
                m1 = inside[u, 1]
                upmsg[u, 0] = m0
                upmsg[u, 1] = m1
                inside[p, 0] += m0
                inside[p, 1] += m1
        root = order[0]
        ll[b] = acc + _lse2(
            log_g0[root] + inside[root, 0], log_g1[root] + inside[root, 1]
        )
        outside[root, 0] = log_g0[root]
        outside[root, 1] = log_g1[root]
        a0 = outside[root, 0] + inside[root, 0]
        a1 = outside[root, 1] + inside[root, 1]
        z = _lse2(a0, a1)
        post[b, root] = math.exp(a1 - z)
        eq10[b, root] = 0.0
        # Downward sweep: parents precede children in BFS order, so the
        # parent's outside term is ready when each child is visited.
        for i in range(1, N):
            v = order[i]
            u = parents[v]
            c0 = outside[u, 0] + inside[u, 0] - upmsg[v, 0]
            c1 = outside[u, 1] + inside[u, 1] - upmsg[v, 1]
            outside[v, 0] = log_g0[v] + c0
            outside[v, 1] = _lse2(log_g1[v] + c0, c1)
            a0 = outside[v, 0] + inside[v, 0]
            a1 = outside[v, 1] + inside[v, 1]
            z = _lse2(a0, a1)
            post[b, v] = math.exp(a1 - z)
            # Edge posterior over (parent, child); (1, 0) has zero mass.
            e00 = c0 + log_g0[v] + inside[v, 0]
            e01 = c0 + log_g1[v] + inside[v, 1]
            e11 = c1 + inside[v, 1]
            z2 = _lse3(e00, e01, e11)
            eq10[b, v] = math.exp(e01 - z2)


def ud_batch_numpy(parents, order, log_g1, log_g0, log_ev, post, eq10, ll):
    """Batch-vectorized twin of the loop kernel (same outputs)."""
    B, N, _ = log_ev.shape
    inside = np.array(log_ev, dtype=np.float64, copy=True)
    upmsg = np.zeros((B, N, 2))
    outside = np.empty((B, N, 2))
    acc = np.zeros(B)
    for i in range(N - 1, -1, -1):
        u = order[i]
        z = np.logaddexp(inside[:, u, 0], inside[:, u, 1])
        inside[:, u, 0] -= z
        inside[:, u, 1] -= z
        acc += z
        p = parents[u]
        if p >= 0:
            m0 = np.logaddexp(log_g0[u] + inside[:, u, 0], log_g1[u] + inside[:, u, 1])
            m1 = inside[:, u, 1]
            upmsg[:, u, 0] = m0
            upmsg[:, u, 1] = m1
            inside[:, p, 0] += m0
            inside[:, p, 1] += m1
    root = order[0]
    ll[:] = acc + np.logaddexp(
        log_g0[root] + inside[:, root, 0], log_g1[root] + inside[:, root, 1]
    )
    outside[:, root, 0] = log_g0[root]
    outside[:, root, 1] = log_g1[root]
    a0 = outside[:, root, 0] + inside[:, root, 0]
    a1 = outside[:, root, 1] + inside[:, root, 1]
    post[:, root] = np.exp(a1 - np.logaddexp(a0, a1))
    eq10[:, root] = 0.0
    for i in range(1, N):
        v = order[i]
        u = parents[v]
        c0 = outside[:, u, 0] + inside[:, u, 0] - upmsg[:, v, 0]
        c1 = outside[:, u, 1] + inside[:, u, 1] - upmsg[:, v, 1]
        outside[:, v, 0] = log_g0[v] + c0
        outside[:, v, 1] = np.logaddexp(log_g1[v] + c0, c1)
        a0 = outside[:, v, 0] + inside[:, v, 0]
        a1 = outside[:, v, 1] + inside[:, v, 1]
        post[:, v] = np.exp(a1 - np.logaddexp(a0, a1))
        e00 = c0 + log_g0[v] + inside[:, v, 0]
        e01 = c0 + log_g1[v] + inside[:, v, 1]
        e11 = c1 + inside[:, v, 1]
        m = np.maximum(np.maximum(e00, e01), e11)
        z2 = m + np.log(np.exp(e00 - m) + np.exp(e01 - m) + np.exp(e11 - m))
        eq10[:, v] = np.exp(e01 - z2)


_requested = os.environ.get("TREEKT_KERNEL", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"TREEKT_KERNEL must be 'numba' or 'numpy', got {_requested!r}"
    )

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via TREEKT_KERNEL=numpy
    _HAVE_NUMBA = False

if _requested == "numba" and not _HAVE_NUMBA:
    raise RuntimeError("TREEKT_KERNEL=numba but numba is not importable")

USE_NUMBA = _HAVE_NUMBA and _requested != "numpy"

if USE_NUMBA:
    _lse2 = numba.njit(cache=True, inline="always")(_lse2)
    _lse3 = numba.njit(cache=True, inline="always")(_lse3)
    ud_batch_loops = numba.njit(cache=True)(_ud_batch_loops)
else:
    ud_batch_loops = _ud_batch_loops

_active = ud_batch_loops if USE_NUMBA else ud_batch_numpy


def backend() -> str:
    """Name of the kernel implementation selected at import time."""
    return "numba" if USE_NUMBA else "numpy"


def ud_batch(parents, order, log_g1, log_g0, log_ev):
    """Run the active upward-downward kernel; returns (post, eq10, ll)."""
    log_ev = np.ascontiguousarray(log_ev, dtype=np.float64)
    B, N = log_ev.shape[0], log_ev.shape[1]
    post = np.empty((B, N))
    eq10 = np.empty((B, N))
    ll = np.empty(B)
    _active(parents, order, log_g1, log_g0, log_ev, post, eq10, ll)
    return post, eq10, ll
