# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot numerical kernels.

Semantics mirror ``twophase._kernels_py`` exactly; the test suite asserts
agreement between the two backends to near machine precision.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, sqrt

cnp.import_array()

BACKEND = "c"


def local_linear_1d(x, y, w, grid, double bandwidth):
    """Local linear smoother with an Epanechnikov kernel (see numpy twin)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ga = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t g = ga.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.full(g, np.nan)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] lo = np.searchsorted(xa, ga - bandwidth, side="left")
    cdef cnp.ndarray[cnp.intp_t, ndim=1] hi = np.searchsorted(xa, ga + bandwidth, side="right")
    cdef Py_ssize_t j, i
    cdef double dx, u, k, s0, s1, s2, t0, t1, det
    for j in range(g):
        s0 = s1 = s2 = t0 = t1 = 0.0
        for i in range(lo[j], hi[j]):
            dx = xa[i] - ga[j]
            u = dx / bandwidth
            k = 0.75 * (1.0 - u * u)
            if k < 0.0:
                k = 0.0
            k *= wa[i]
            s0 += k
            s1 += k * dx
            s2 += k * dx * dx
            t0 += k * ya[i]
            t1 += k * ya[i] * dx
        if s0 <= 0.0:
            continue
        det = s0 * s2 - s1 * s1
        if det > 1e-12 * s0 * s2:
            out[j] = (s2 * t0 - s1 * t1) / det
        else:
            out[j] = t0 / s0
    return out


def local_linear_2d(x1, x2, y, w, grid, double bandwidth):
    """Local planar smoother on scattered 2-d data (see numpy twin)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x1a = np.ascontiguousarray(x1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x2a = np.ascontiguousarray(x2, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ga = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t g = ga.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.full((g, g), np.nan)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] lo = np.searchsorted(x1a, ga - bandwidth, side="left")
    cdef cnp.ndarray[cnp.intp_t, ndim=1] hi = np.searchsorted(x1a, ga + bandwidth, side="right")
    cdef Py_ssize_t a, b, i, start, stop, m, jj
    cdef double d1, d2, u1, u2, k1, k
    cdef double s00, s10, s01, s20, s11, s02, t0, t1, t2, det, det1, guard
    cdef cnp.ndarray[cnp.intp_t, ndim=1] order, lo2, hi2
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x2s, d1s, k1s, ys
    for a in range(g):
        start = lo[a]
        stop = hi[a]
        if start >= stop:
            continue
        m = stop - start
        order = np.argsort(x2a[start:stop], kind="stable")
        x2s = np.empty(m)
        d1s = np.empty(m)
        k1s = np.empty(m)
        ys = np.empty(m)
        for i in range(m):
            jj = start + order[i]
            x2s[i] = x2a[jj]
            d1 = x1a[jj] - ga[a]
            d1s[i] = d1
            u1 = d1 / bandwidth
            k1 = 0.75 * (1.0 - u1 * u1)
            if k1 < 0.0:
                k1 = 0.0
            k1s[i] = k1 * wa[jj]
            ys[i] = ya[jj]
        lo2 = np.searchsorted(x2s, ga - bandwidth, side="left")
        hi2 = np.searchsorted(x2s, ga + bandwidth, side="right")
        for b in range(g):
            if lo2[b] >= hi2[b]:
                continue
            s00 = s10 = s01 = s20 = s11 = s02 = t0 = t1 = t2 = 0.0
            for i in range(lo2[b], hi2[b]):
                d2 = x2s[i] - ga[b]
                u2 = d2 / bandwidth
                k = 0.75 * (1.0 - u2 * u2)
                if k < 0.0:
                    k = 0.0
                k *= k1s[i]
                d1 = d1s[i]
                s00 += k
                s10 += k * d1
                s01 += k * d2
                s20 += k * d1 * d1
                s11 += k * d1 * d2
                s02 += k * d2 * d2
                t0 += k * ys[i]
                t1 += k * ys[i] * d1
                t2 += k * ys[i] * d2
            if s00 <= 0.0:
                continue
            det = (s00 * (s20 * s02 - s11 * s11)
                   - s10 * (s10 * s02 - s11 * s01)
                   + s01 * (s10 * s11 - s20 * s01))
            guard = s00 * s20 * s02
            if guard < 1e-300:
                guard = 1e-300
            if fabs(det) > 1e-12 * guard:
                det1 = (t0 * (s20 * s02 - s11 * s11)
                        - s10 * (t1 * s02 - s11 * t2)
                        + s01 * (t1 * s11 - s20 * t2))
                out[a, b] = det1 / det
            else:
                out[a, b] = t0 / s00
    return out


def cox_breslow(event, w, eta, x, group_first, group_index):
    """Breslow partial-likelihood statistics (see numpy twin for the contract)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ev = np.ascontiguousarray(event, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wa = np.ascontiguousarray(w, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] et = np.ascontiguousarray(eta, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] gf = np.ascontiguousarray(group_first, dtype=np.intp)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] gi = np.ascontiguousarray(group_index, dtype=np.intp)
    cdef Py_ssize_t n = xa.shape[0], p = xa.shape[1]
    cdef Py_ssize_t n_groups = (gi[n - 1] + 1) if n > 0 else 0

    cdef cnp.ndarray[cnp.float64_t, ndim=1] r = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s0 = np.zeros(n_groups)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s1 = np.zeros((n_groups, p))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] m = np.zeros((n_groups, p))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ew = np.zeros(n_groups)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] score = np.zeros(p)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] info = np.zeros((p, p))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] resid = np.zeros((n, p))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] haz = np.zeros(n_groups)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cum_a = np.zeros(n_groups)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cum_b = np.zeros((n_groups, p))
    cdef double loglik = 0.0, run0, we, expeta, ai
    cdef cnp.ndarray[cnp.float64_t, ndim=1] run1 = np.zeros(p)
    cdef Py_ssize_t i, j, k, gidx

    for i in range(n):
        r[i] = wa[i] * exp(et[i])

    # Suffix sums per tie group, walking rows from the latest time back.
    run0 = 0.0
    i = n - 1
    while i >= 0:
        gidx = gi[i]
        while i >= 0 and gi[i] == gidx:
            run0 += r[i]
            for j in range(p):
                run1[j] += r[i] * xa[i, j]
            i -= 1
        s0[gidx] = run0
        for j in range(p):
            s1[gidx, j] = run1[j]

    for gidx in range(n_groups):
        for j in range(p):
            m[gidx, j] = s1[gidx, j] / s0[gidx]

    for i in range(n):
        if ev[i] > 0.0:
            we = wa[i] * ev[i]
            gidx = gi[i]
            ew[gidx] += we
            loglik += we * et[i]
            for j in range(p):
                score[j] += we * xa[i, j]

    for gidx in range(n_groups):
        if ew[gidx] > 0.0:
            loglik -= ew[gidx] * log(s0[gidx])
            haz[gidx] = ew[gidx] / s0[gidx]
            for j in range(p):
                score[j] -= ew[gidx] * m[gidx, j]

    run0 = 0.0
    for gidx in range(n_groups):
        run0 += haz[gidx]
        cum_a[gidx] = run0
        for j in range(p):
            cum_b[gidx, j] = haz[gidx] * m[gidx, j]
            if gidx > 0:
                cum_b[gidx, j] += cum_b[gidx - 1, j]

    # info = sum_i r_i a_i x_i x_i' - sum_g ew_g m_g m_g'
    for i in range(n):
        ai = r[i] * cum_a[gi[i]]
        for j in range(p):
            for k in range(j, p):
                info[j, k] += ai * xa[i, j] * xa[i, k]
    for gidx in range(n_groups):
        if ew[gidx] > 0.0:
            for j in range(p):
                for k in range(j, p):
                    info[j, k] -= ew[gidx] * m[gidx, j] * m[gidx, k]
    for j in range(p):
        for k in range(j + 1, p):
            info[k, j] = info[j, k]

    for i in range(n):
        gidx = gi[i]
        expeta = exp(et[i])
        ai = cum_a[gidx]
        for j in range(p):
            resid[i, j] = ev[i] * (xa[i, j] - m[gidx, j]) - expeta * (
                xa[i, j] * ai - cum_b[gidx, j])
    return loglik, score, info, resid
