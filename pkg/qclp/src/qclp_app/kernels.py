"""Numba-compiled SGD kernels for skip-gram and LINE with negative sampling.

All kernels update their parameter arrays in place, draw from numba's own
generator seeded at entry, and are single-threaded so a given seed always
produces the same result.
"""

from __future__ import annotations

import numba
import numpy as np

MIN_LR_FRACTION = 1e-4


@numba.njit(cache=True)
def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


@numba.njit(cache=True)
def _dot(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    for k in range(a.shape[0]):
        total += a[k] * b[k]
    return total


@numba.njit(cache=True)
def _draw_noise(noise_cdf: np.ndarray) -> int:
    idx = np.searchsorted(noise_cdf, np.random.random(), side="right")
    if idx >= noise_cdf.shape[0]:
        idx = noise_cdf.shape[0] - 1
    return idx


@numba.njit(cache=True)
def sgns_epoch(
    walks: np.ndarray,
    lengths: np.ndarray,
    center: np.ndarray,
    context: np.ndarray,
    noise_cdf: np.ndarray,
    window: int,
    neg_k: int,
    lr0: float,
    step_offset: int,
    total_steps: int,
    seed: int,
) -> int:
    """One pass of skip-gram over every (center, context) pair within ``window``.

    Returns the updated global step counter used for linear learning-rate decay.
    """

    np.random.seed(seed)
    dim = center.shape[1]
    neu1e = np.zeros(dim)
    step = step_offset
    for w in range(walks.shape[0]):
        length = lengths[w]
        for i in range(length):
            lr = lr0 * max(MIN_LR_FRACTION, 1.0 - step / total_steps)
            step += 1
            c = walks[w, i]
            lo = max(0, i - window)
            hi = min(length, i + window + 1)
            for j in range(lo, hi):
                if j == i:
                    continue
                ctx = walks[w, j]
                neu1e[:] = 0.0
                g = lr * (1.0 - _sigmoid(_dot(center[c], context[ctx])))
                neu1e += g * context[ctx]
                context[ctx] += g * center[c]
                for _ in range(neg_k):
                    neg = _draw_noise(noise_cdf)
                    if neg == ctx:
                        continue
                    g = -lr * _sigmoid(_dot(center[c], context[neg]))
                    neu1e += g * context[neg]
                    context[neg] += g * center[c]
                center[c] += neu1e
    return step


@numba.njit(cache=True)
def line_epoch(
    edges: np.ndarray,
    vertex: np.ndarray,
    context: np.ndarray,
    noise_cdf: np.ndarray,
    neg_k: int,
    lr0: float,
    step_offset: int,
    total_steps: int,
    seed: int,
) -> int:
    """One pass over directed edges (i -> j) in a seeded random order.

    First-order proximity passes ``context`` as the very same array as
    ``vertex``; second-order proximity passes a separate context table.
    """

    np.random.seed(seed)
    dim = vertex.shape[1]
    err = np.zeros(dim)
    order = np.random.permutation(edges.shape[0])
    step = step_offset
    for e in order:
        lr = lr0 * max(MIN_LR_FRACTION, 1.0 - step / total_steps)
        step += 1
        i = edges[e, 0]
        j = edges[e, 1]
        err[:] = 0.0
        g = lr * (1.0 - _sigmoid(_dot(vertex[i], context[j])))
        err += g * context[j]
        context[j] += g * vertex[i]
        for _ in range(neg_k):
            neg = _draw_noise(noise_cdf)
            if neg == i or neg == j:
                continue
            g = -lr * _sigmoid(_dot(vertex[i], context[neg]))
            err += g * context[neg]
            context[neg] += g * vertex[i]
        vertex[i] += err
    return step
