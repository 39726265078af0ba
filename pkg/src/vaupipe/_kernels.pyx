# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled kernels. Line-for-line port of ``_kernels_py``; keep them in sync."""

import numpy as np

from libc.math cimport INFINITY, fabs
from libc.stdlib cimport free, malloc


cdef void _hungarian(const double* a, int n, int m, int* out,
                     double* u, double* v, int* p, int* way,
                     double* minv, char* used) noexcept nogil:
    cdef int i, j, j0, j1, i0
    cdef double delta, cur, ui
    for i in range(n + 1):
        u[i] = 0.0
    for j in range(m + 1):
        v[j] = 0.0
        p[j] = 0
        way[j] = 0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            ui = u[i0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = a[(i0 - 1) * m + j - 1] - ui - v[j]
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
    for i in range(n):
        out[i] = -1
    for j in range(1, m + 1):
        if p[j]:
            out[p[j] - 1] = j - 1


cdef struct Work:
    double* a
    int* sol
    double* u
    double* v
    int* p
    int* way
    double* minv
    char* used


cdef int _solve_sub(const double[:, ::1] c, const unsigned char[:, ::1] ok,
                    const int* rows, int nr, const int* cols, int nc,
                    double big, int* out, Work* w) noexcept nogil:
    cdef int ii, jj, cnt = 0
    if nr == 0 or nc == 0:
        return 0
    if nr <= nc:
        for ii in range(nr):
            for jj in range(nc):
                if ok[rows[ii], cols[jj]]:
                    w.a[ii * nc + jj] = c[rows[ii], cols[jj]]
                else:
                    w.a[ii * nc + jj] = big
        _hungarian(w.a, nr, nc, w.sol, w.u, w.v, w.p, w.way, w.minv, w.used)
        for ii in range(nr):
            jj = w.sol[ii]
            if ok[rows[ii], cols[jj]]:
                out[rows[ii]] = cols[jj]
                cnt += 1
    else:
        for ii in range(nc):
            for jj in range(nr):
                if ok[rows[jj], cols[ii]]:
                    w.a[ii * nr + jj] = c[rows[jj], cols[ii]]
                else:
                    w.a[ii * nr + jj] = big
        _hungarian(w.a, nc, nr, w.sol, w.u, w.v, w.p, w.way, w.minv, w.used)
        for ii in range(nc):
            jj = w.sol[ii]
            if ok[rows[jj], cols[ii]]:
                out[rows[jj]] = cols[ii]
                cnt += 1
    return cnt


def solve_assignment(cost, allowed):
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef const unsigned char[:, ::1] ok = np.ascontiguousarray(allowed, dtype=np.uint8)
    cdef int n = c.shape[0]
    cdef int m = c.shape[1]
    cdef int i, j, k, r, cur, card, cnt, nfree, fixed_card = 0
    cdef double scale = 0.0, big, tol, total, cand, total_sub, fixed_cost = 0.0
    cdef int size = (n if n > m else m) + 1
    cdef Work w
    out = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return out

    for i in range(n):
        for j in range(m):
            if ok[i, j]:
                scale += fabs(c[i, j])
    big = 2.0 * scale + 1.0
    tol = 1e-9 * (1.0 + scale)

    w.a = <double*> malloc(size * size * sizeof(double))
    w.sol = <int*> malloc(size * sizeof(int))
    w.u = <double*> malloc(size * sizeof(double))
    w.v = <double*> malloc(size * sizeof(double))
    w.p = <int*> malloc(size * sizeof(int))
    w.way = <int*> malloc(size * sizeof(int))
    w.minv = <double*> malloc(size * sizeof(double))
    w.used = <char*> malloc(size * sizeof(char))
    cdef int* rows = <int*> malloc(size * sizeof(int))
    cdef int* cols = <int*> malloc(size * sizeof(int))
    cdef int* best = <int*> malloc(size * sizeof(int))
    cdef int* sub = <int*> malloc(size * sizeof(int))
    cdef char* usedc = <char*> malloc(size * sizeof(char))
    try:
        with nogil:
            for i in range(n):
                rows[i] = i
                best[i] = -1
            for j in range(m):
                cols[j] = j
                usedc[j] = 0
            card = _solve_sub(c, ok, rows, n, cols, m, big, best, &w)
            total = 0.0
            for r in range(n):
                if best[r] >= 0:
                    total += c[r, best[r]]

            for i in range(n):
                cur = best[i] if best[i] >= 0 else m
                for j in range(cur):
                    if usedc[j] or not ok[i, j]:
                        continue
                    nfree = 0
                    for k in range(m):
                        if not usedc[k] and k != j:
                            cols[nfree] = k
                            nfree += 1
                    for r in range(i + 1, n):
                        sub[r] = -1
                    cnt = _solve_sub(c, ok, rows + i + 1, n - i - 1, cols, nfree, big, sub, &w)
                    if fixed_card + 1 + cnt != card:
                        continue
                    cand = fixed_cost + c[i, j]
                    total_sub = 0.0
                    for r in range(i + 1, n):
                        if sub[r] >= 0:
                            total_sub += c[r, sub[r]]
                    cand = cand + total_sub
                    if fabs(cand - total) <= tol:
                        best[i] = j
                        for r in range(i + 1, n):
                            best[r] = sub[r]
                        cur = j
                        break
                if cur < m:
                    usedc[cur] = 1
                    fixed_cost += c[i, cur]
                    fixed_card += 1
        for i in range(n):
            out[i] = best[i]
    finally:
        free(w.a); free(w.sol); free(w.u); free(w.v); free(w.p); free(w.way)
        free(w.minv); free(w.used)
        free(rows); free(cols); free(best); free(sub); free(usedc)
    return out


cdef inline Py_ssize_t _reflect(Py_ssize_t idx, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t period = 2 * n
    idx = idx % period
    if idx < 0:
        idx += period
    if idx >= n:
        idx = period - 1 - idx
    return idx


def convolve_reflect(x, weights):
    cdef const double[::1] xs = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t r = (w.shape[0] - 1) // 2
    cdef Py_ssize_t i, k
    cdef double acc
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(-r, r + 1):
                acc += w[k + r] * xs[_reflect(i + k, n)]
            o[i] = acc
    return out


def local_extrema(x):
    cdef const double[::1] xs = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t a = 0, b
    cdef double left, right, val
    peaks = []
    valleys = []
    while a < n:
        b = a
        while b + 1 < n and xs[b + 1] == xs[a]:
            b += 1
        if a > 0 and b < n - 1:
            left = xs[a - 1]
            right = xs[b + 1]
            val = xs[a]
            if left < val and right < val:
                peaks.append(a)
            elif left > val and right > val:
                valleys.append(a)
        a = b + 1
    return np.array(peaks, dtype=np.int64), np.array(valleys, dtype=np.int64)
