"""Pure-Python kernels. Reference implementation and import-time fallback.

The Cython module ``_kernels`` mirrors these functions line for line,
including the floating-point summation order, so both backends return
bit-identical results.
"""

import math

import numpy as np


def _hungarian(a, n, m):
    # Shortest-augmenting-path Hungarian method, n <= m, 1-indexed potentials.
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    out = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            out[p[j] - 1] = j - 1
    return out


def _solve_sub(cost, allowed, rows, cols, big):
    """Max-cardinality, min-cost matching restricted to ``rows`` x ``cols``."""
    pairs = {}
    if not rows or not cols:
        return pairs
    if len(rows) <= len(cols):
        a = [[cost[r][c] if allowed[r][c] else big for c in cols] for r in rows]
        sol = _hungarian(a, len(rows), len(cols))
        for i, j in enumerate(sol):
            if allowed[rows[i]][cols[j]]:
                pairs[rows[i]] = cols[j]
    else:
        a = [[cost[r][c] if allowed[r][c] else big for r in rows] for c in cols]
        sol = _hungarian(a, len(cols), len(rows))
        for i, j in enumerate(sol):
            if allowed[rows[j]][cols[i]]:
                pairs[rows[j]] = cols[i]
    return pairs


def _pairs_cost(cost, pairs, rows):
    total = 0.0
    for r in rows:
        if r in pairs:
            total += cost[r][pairs[r]]
    return total


def solve_assignment(cost, allowed):
    """Optimal matching over allowed entries with lexicographic tie-breaking.

    Maximises the number of matched rows first, then minimises total cost.
    Among optimal matchings, returns the one whose row->column vector is
    lexicographically smallest (unmatched counts as +inf).

    Returns an int64 array ``row_to_col`` with -1 for unmatched rows.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    c = cost.tolist()
    ok = np.asarray(allowed, dtype=bool).tolist()
    scale = 0.0
    for i in range(n):
        for j in range(m):
            if ok[i][j]:
                scale += abs(c[i][j])
    big = 2.0 * scale + 1.0
    tol = 1e-9 * (1.0 + scale)

    best = _solve_sub(c, ok, list(range(n)), list(range(m)), big)
    card = len(best)
    total = _pairs_cost(c, best, range(n))

    used = [False] * m
    fixed_cost = 0.0
    fixed_card = 0
    for i in range(n):
        cur = best.get(i, m)
        rest = list(range(i + 1, n))
        for j in range(cur):
            if used[j] or not ok[i][j]:
                continue
            free = [k for k in range(m) if not used[k] and k != j]
            sub = _solve_sub(c, ok, rest, free, big)
            if fixed_card + 1 + len(sub) != card:
                continue
            cand = (fixed_cost + c[i][j]) + _pairs_cost(c, sub, rest)
            if abs(cand - total) <= tol:
                best = {r: best[r] for r in range(i) if r in best}
                best[i] = j
                best.update(sub)
                cur = j
                break
        if cur < m:
            used[cur] = True
            fixed_cost += c[i][cur]
            fixed_card += 1

    out = np.full(n, -1, dtype=np.int64)
    for r, col in best.items():
        out[r] = col
    return out


def _reflect(idx, n):
    period = 2 * n
    idx %= period
    if idx >= n:
        idx = period - 1 - idx
    return idx


def convolve_reflect(x, weights):
    """Direct convolution with a symmetric odd-length kernel, half-sample reflect padding."""
    xs = np.asarray(x, dtype=np.float64).tolist()
    w = np.asarray(weights, dtype=np.float64).tolist()
    n = len(xs)
    r = (len(w) - 1) // 2
    out = [0.0] * n
    for i in range(n):
        acc = 0.0
        for k in range(-r, r + 1):
            acc += w[k + r] * xs[_reflect(i + k, n)]
        out[i] = acc
    return np.array(out, dtype=np.float64)


def local_extrema(x):
    """Strict interior local maxima and minima; plateaus report their leftmost index."""
    xs = np.asarray(x, dtype=np.float64).tolist()
    n = len(xs)
    peaks = []
    valleys = []
    a = 0
    while a < n:
        b = a
        while b + 1 < n and xs[b + 1] == xs[a]:
            b += 1
        if a > 0 and b < n - 1:
            left, right, val = xs[a - 1], xs[b + 1], xs[a]
            if left < val and right < val:
                peaks.append(a)
            elif left > val and right > val:
                valleys.append(a)
        a = b + 1
    return np.array(peaks, dtype=np.int64), np.array(valleys, dtype=np.int64)
