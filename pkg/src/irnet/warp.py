"""Dynamic time warping with q-norm accumulation.

Each cell of the DP table holds

    D(i, j) = ( |a_i - b_j|^q + min(D(i-1, j-1), D(i, j-1), D(i-1, j))^q )^(1/q)

so ``D^q`` is the usual additive DTW over ``|a_i - b_j|^q`` costs. The table is
filled in that power space and the root is taken once at the end, which gives
the same value without repeated root/power round-trips.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptySequence, InvalidQ


def dtw_distance(a, b, q: int = 2) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySequence("DTW needs two non-empty sequences")
    if int(q) != q or q < 1:
        raise InvalidQ(f"q must be a positive integer, got {q!r}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("sequences must be finite")

    cost = np.abs(a[:, None] - b[None, :]) ** q
    n, m = cost.shape
    prev = np.empty(m)
    prev[0] = cost[0, 0]
    for j in range(1, m):
        prev[j] = cost[0, j] + prev[j - 1]
    for i in range(1, n):
        row = cost[i].tolist()
        cur = [0.0] * m
        cur[0] = row[0] + prev[0]
        up = prev.tolist()
        for j in range(1, m):
            best = up[j - 1]
            if up[j] < best:
                best = up[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = row[j] + best
        prev = np.asarray(cur)
    return math.pow(float(prev[-1]), 1.0 / q)
