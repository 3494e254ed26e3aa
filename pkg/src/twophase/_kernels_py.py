"""Pure-numpy implementations of the hot numerical kernels.

The compiled module ``twophase._ckernels`` provides the same three entry
points with identical semantics; ``twophase.kernels`` picks one at import
time.  Keep the two in sync: the test suite asserts agreement to near
machine precision.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def local_linear_1d(x, y, w, grid, bandwidth):
    """Local linear smoother with an Epanechnikov kernel.

    Parameters
    ----------
    x, y, w : 1-d arrays of observation locations, values, and
        nonnegative case weights.  ``x`` must be sorted ascending.
    grid : evaluation points.
    bandwidth : kernel half-width (> 0).

    Returns
    -------
    Array of fitted values on ``grid``.  Points whose kernel window is
    degenerate fall back to a locally-constant fit; windows with no
    support yield NaN (callers widen the bandwidth on NaN).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    out = np.full(grid.shape, np.nan)
    lo = np.searchsorted(x, grid - bandwidth, side="left")
    hi = np.searchsorted(x, grid + bandwidth, side="right")
    for j in range(grid.size):
        sl = slice(lo[j], hi[j])
        if sl.start >= sl.stop:
            continue
        dx = x[sl] - grid[j]
        u = dx / bandwidth
        k = w[sl] * np.maximum(0.75 * (1.0 - u * u), 0.0)
        s0 = k.sum()
        if s0 <= 0.0:
            continue
        s1 = k @ dx
        s2 = k @ (dx * dx)
        t0 = k @ y[sl]
        t1 = k @ (y[sl] * dx)
        det = s0 * s2 - s1 * s1
        if det > 1e-12 * s0 * s2:
            out[j] = (s2 * t0 - s1 * t1) / det
        else:
            out[j] = t0 / s0
    return out


def local_linear_2d(x1, x2, y, w, grid, bandwidth):
    """Local planar smoother on scattered 2-d data, Epanechnikov product kernel.

    ``x1`` must be sorted ascending (ties in any order).  Returns a
    ``len(grid) x len(grid)`` surface; degenerate windows fall back to a
    locally-constant fit and empty windows to NaN.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    g = grid.size
    out = np.full((g, g), np.nan)
    lo = np.searchsorted(x1, grid - bandwidth, side="left")
    hi = np.searchsorted(x1, grid + bandwidth, side="right")
    for a in range(g):
        sl = slice(lo[a], hi[a])
        if sl.start >= sl.stop:
            continue
        d1 = x1[sl] - grid[a]
        u1 = d1 / bandwidth
        k1 = w[sl] * np.maximum(0.75 * (1.0 - u1 * u1), 0.0)
        order = np.argsort(x2[sl], kind="stable")
        x2s = x2[sl][order]
        d1s = d1[order]
        k1s = k1[order]
        ys = y[sl][order]
        lo2 = np.searchsorted(x2s, grid - bandwidth, side="left")
        hi2 = np.searchsorted(x2s, grid + bandwidth, side="right")
        for b in range(g):
            s2w = slice(lo2[b], hi2[b])
            if s2w.start >= s2w.stop:
                continue
            d2 = x2s[s2w] - grid[b]
            u2 = d2 / bandwidth
            k = k1s[s2w] * np.maximum(0.75 * (1.0 - u2 * u2), 0.0)
            s00 = k.sum()
            if s00 <= 0.0:
                continue
            dd1 = d1s[s2w]
            s10 = k @ dd1
            s01 = k @ d2
            s20 = k @ (dd1 * dd1)
            s11 = k @ (dd1 * d2)
            s02 = k @ (d2 * d2)
            t0 = k @ ys[s2w]
            t1 = k @ (ys[s2w] * dd1)
            t2 = k @ (ys[s2w] * d2)
            det = (
                s00 * (s20 * s02 - s11 * s11)
                - s10 * (s10 * s02 - s11 * s01)
                + s01 * (s10 * s11 - s20 * s01)
            )
            if abs(det) > 1e-12 * max(s00 * s20 * s02, 1e-300):
                det1 = (
                    t0 * (s20 * s02 - s11 * s11)
                    - s10 * (t1 * s02 - s11 * t2)
                    + s01 * (t1 * s11 - s20 * t2)
                )
                out[a, b] = det1 / det
            else:
                out[a, b] = t0 / s00
    return out


def cox_breslow(event, w, eta, x, group_first, group_index):
    """Breslow partial-likelihood statistics for right-censored data.

    All arrays are sorted by observed time ascending; tied times form
    groups.  ``group_first[i]`` is the first row index of row i's tie
    group and ``group_index[i]`` its group number (also ascending).

    Returns ``(loglik, score, information, residuals)`` where
    ``residuals[i]`` is the per-record (unweighted) score residual, so
    that ``sum_i w_i * residuals[i] == score``.
    """
    event = np.asarray(event, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    group_index = np.asarray(group_index, dtype=np.intp)
    n, p = x.shape
    r = w * np.exp(eta)
    rx = x * r[:, None]

    # Risk-set suffix sums evaluated at each tie group's first row.
    s0_row = np.cumsum(r[::-1])[::-1]
    s1_row = np.cumsum(rx[::-1], axis=0)[::-1]
    starts = np.unique(np.asarray(group_first, dtype=np.intp))
    s0 = s0_row[starts]
    s1 = s1_row[starts]
    m = s1 / s0[:, None]

    n_groups = starts.size
    we = w * event
    ew = np.zeros(n_groups)
    np.add.at(ew, group_index, we)
    exsum = we @ x
    eetasum = float(we @ eta)

    has_event = ew > 0.0
    loglik = eetasum - float(ew[has_event] @ np.log(s0[has_event]))
    score = exsum - ew[has_event] @ m[has_event]

    # Breslow hazard increments and their running sums; a_i doubles as the
    # multiplier that turns the S2 suffix sums into a single vectorized pass.
    haz = np.where(has_event, ew / s0, 0.0)
    cum_a = np.cumsum(haz)
    cum_b = np.cumsum(haz[:, None] * m, axis=0)
    a_i = cum_a[group_index]
    b_i = cum_b[group_index]

    info = (x * (r * a_i)[:, None]).T @ x - (ew[:, None] * m).T @ m
    info = 0.5 * (info + info.T)

    resid = event[:, None] * (x - m[group_index]) - np.exp(eta)[:, None] * (
        x * a_i[:, None] - b_i
    )
    return loglik, score, info, resid
