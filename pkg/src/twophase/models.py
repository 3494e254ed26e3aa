"""Weighted Cox proportional-hazards and logistic regression.

Both fits solve a weighted estimating equation ``sum_i w_i U_i(theta) = 0``
by Newton-Raphson with step-halving and return per-record influence
vectors (dfbeta): the inverse information applied to each weighted score
residual.  Design-based variance for stratified samples comes from
:func:`sandwich_variance`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from twophase import kernels
from twophase.errors import ConvergenceError

MAX_ITER = 50
GRAD_TOL = 1e-8
# A linear-predictor spread this large means relative risks beyond e^60:
# the likelihood is monotone (separation) and the solution is at infinity.
ETA_SPREAD_LIMIT = 60.0


@dataclass
class FitResult:
    """Coefficients, variance, and per-record influence of a weighted fit."""

    coefficients: np.ndarray
    variance: np.ndarray
    influence: np.ndarray  # n x p, rows sum to zero at the solution
    converged: bool
    iterations: int
    loglik: float = float("nan")

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.variance))


def _prepare_cox(time, event, x):
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] != time.shape[0]:
        x = x.T
    order = np.argsort(time, kind="stable")
    ts = time[order]
    new_group = np.empty(ts.shape, dtype=bool)
    new_group[0] = True
    new_group[1:] = ts[1:] != ts[:-1]
    group_index = np.cumsum(new_group) - 1
    starts = np.flatnonzero(new_group)
    group_first = starts[group_index]
    return order, event[order], x[order], group_first, group_index


def cox_loglik_score_info(beta, time, event, x, weights):
    """Breslow partial-likelihood value, score, and information at ``beta``."""
    order, ev, xs, group_first, group_index = _prepare_cox(time, event, x)
    w = np.asarray(weights, dtype=np.float64)[order]
    eta = xs @ np.asarray(beta, dtype=np.float64)
    ll, score, info, _ = kernels.cox_breslow(ev, w, eta, xs, group_first, group_index)
    return ll, score, info


def fit_cox(time, event, x, weights=None, *, max_iter=MAX_ITER, tol=GRAD_TOL):
    """Fit a weighted Cox model (Breslow ties).

    Parameters
    ----------
    time, event : observed follow-up time (> 0) and 0/1 event indicator.
    x : covariate matrix, one row per record (no intercept).
    weights : positive case weights; defaults to 1.

    Raises
    ------
    ConvergenceError
        On zero events, or when Newton fails (e.g. monotone-likelihood
        separation), with iteration diagnostics attached.
    """
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=np.float64)
    n = time.shape[0]
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    if event.sum() < 1:
        raise ConvergenceError("no events in the data; hazard model undefined")
    order, ev, xs, group_first, group_index = _prepare_cox(time, event, x)
    w = weights[order]
    p = xs.shape[1]

    beta = np.zeros(p)
    ll, score, info, resid = kernels.cox_breslow(
        ev, w, xs @ beta, xs, group_first, group_index
    )
    iterations = 0
    converged = np.max(np.abs(score)) < tol
    while not converged and iterations < max_iter:
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        new_beta = beta + step
        new = kernels.cox_breslow(ev, w, xs @ new_beta, xs, group_first, group_index)
        halvings = 0
        while not np.isfinite(new[0]) or new[0] < ll - 1e-10:
            step *= 0.5
            halvings += 1
            if halvings > 30:
                raise ConvergenceError(
                    "Cox step-halving exhausted; likelihood may be monotone "
                    f"(|beta| up to {np.abs(beta).max():.3g})",
                    iterations=iterations,
                    gradient_norm=float(np.max(np.abs(score))),
                )
            new_beta = beta + step
            new = kernels.cox_breslow(ev, w, xs @ new_beta, xs, group_first, group_index)
        beta = new_beta
        ll, score, info, resid = new
        iterations += 1
        eta = xs @ beta
        if eta.max() - eta.min() > ETA_SPREAD_LIMIT:
            raise ConvergenceError(
                "Cox likelihood appears monotone (linear predictor spread "
                f"{eta.max() - eta.min():.1f}); a covariate separates the event order",
                iterations=iterations,
                gradient_norm=float(np.max(np.abs(score))),
            )
        converged = np.max(np.abs(score)) < tol
    if not converged:
        raise ConvergenceError(
            "Cox Newton-Raphson did not converge in "
            f"{max_iter} iterations (max |score| = {np.max(np.abs(score)):.3g}); "
            "check for separation or monotone likelihood",
            iterations=iterations,
            gradient_norm=float(np.max(np.abs(score))),
        )
    variance = _invert_info(info)
    influence_sorted = (w[:, None] * resid) @ variance.T
    influence = np.empty_like(influence_sorted)
    influence[order] = influence_sorted
    return FitResult(beta, variance, influence, converged, iterations, float(ll))


def logistic_loglik_score_info(beta, y, x, weights):
    """Bernoulli log-likelihood value, score, and information at ``beta``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    eta = x @ np.asarray(beta, dtype=np.float64)
    # log(1 + e^eta) computed stably on both tails.
    log1p_exp = np.where(eta > 0, eta + np.log1p(np.exp(-np.abs(eta))),
                         np.log1p(np.exp(eta)))
    ll = float(w @ (y * eta - log1p_exp))
    prob = 1.0 / (1.0 + np.exp(-eta))
    score = (w * (y - prob)) @ x
    v = w * prob * (1.0 - prob)
    info = (x * v[:, None]).T @ x
    return ll, score, info, prob


def fit_logistic(y, x, weights=None, *, max_iter=MAX_ITER, tol=GRAD_TOL):
    """Fit a weighted logistic regression by Newton-Raphson.

    ``x`` should include an intercept column if one is wanted.  Raises
    ConvergenceError on perfect separation (detected as non-convergence
    with diverging coefficients) or when only one outcome class is present.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = y.shape[0]
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    if y.min() == y.max():
        raise ConvergenceError("outcome takes a single value; both classes required")
    p = x.shape[1]
    beta = np.zeros(p)
    ll, score, info, prob = logistic_loglik_score_info(beta, y, x, weights)
    iterations = 0
    converged = np.max(np.abs(score)) < tol
    while not converged and iterations < max_iter:
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        new_beta = beta + step
        new = logistic_loglik_score_info(new_beta, y, x, weights)
        halvings = 0
        while not np.isfinite(new[0]) or new[0] < ll - 1e-10:
            step *= 0.5
            halvings += 1
            if halvings > 30:
                raise ConvergenceError(
                    "logistic step-halving exhausted; data may be separated",
                    iterations=iterations,
                    gradient_norm=float(np.max(np.abs(score))),
                )
            new_beta = beta + step
            new = logistic_loglik_score_info(new_beta, y, x, weights)
        beta = new_beta
        ll, score, info, prob = new
        iterations += 1
        eta = x @ beta
        if eta.max() - eta.min() > ETA_SPREAD_LIMIT:
            raise ConvergenceError(
                "logistic data appear separated (linear predictor spread "
                f"{eta.max() - eta.min():.1f})",
                iterations=iterations,
                gradient_norm=float(np.max(np.abs(score))),
            )
        converged = np.max(np.abs(score)) < tol
    if not converged:
        raise ConvergenceError(
            f"logistic Newton-Raphson did not converge in {max_iter} iterations "
            f"(max |score| = {np.max(np.abs(score)):.3g}, max |beta| = "
            f"{np.abs(beta).max():.3g}); check for separation",
            iterations=iterations,
            gradient_norm=float(np.max(np.abs(score))),
        )
    variance = _invert_info(info)
    resid = (y - prob)[:, None] * x
    influence = (weights[:, None] * resid) @ variance.T
    return FitResult(beta, variance, influence, converged, iterations, float(ll))


def _invert_info(info):
    try:
        inv = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        inv = np.linalg.pinv(info)
    return 0.5 * (inv + inv.T)


def influence_for_target(fit: FitResult, target: int) -> np.ndarray:
    """Extract the influence column for one coefficient."""
    p = fit.influence.shape[1]
    if not -p <= target < p:
        raise IndexError(f"target coefficient {target} out of range for p={p}")
    return fit.influence[:, target].copy()


def sandwich_variance(fit: FitResult, strata=None, clusters=None) -> np.ndarray:
    """Stratified with-replacement linearization variance.

    Influence rows are summed within ``clusters`` (if given) and then the
    between-record variance is accumulated within each stratum with an
    ``n_s / (n_s - 1)`` correction.  Any stratum that ends up with a
    single record triggers a pooled (single-stratum) fallback with a
    warning.
    """
    h = np.asarray(fit.influence, dtype=np.float64)
    strata = np.zeros(h.shape[0], dtype=np.intp) if strata is None else np.asarray(strata)
    if clusters is not None:
        clusters = np.asarray(clusters)
        keys, idx = np.unique(clusters, return_inverse=True)
        agg = np.zeros((keys.size, h.shape[1]))
        np.add.at(agg, idx, h)
        cl_str = np.empty(keys.size, dtype=strata.dtype)
        cl_str[idx[::-1]] = strata[::-1]  # first row of each cluster wins
        h = agg
        strata = cl_str
    labels, inv = np.unique(strata, return_inverse=True)
    counts = np.bincount(inv)
    if np.any(counts == 1) and labels.size > 1:
        warnings.warn(
            "stratum with a single record: falling back to pooled variance",
            stacklevel=2,
        )
        strata = np.zeros(h.shape[0], dtype=np.intp)
        labels, inv = np.unique(strata, return_inverse=True)
        counts = np.bincount(inv)
    p = h.shape[1]
    v = np.zeros((p, p))
    for s in range(labels.size):
        rows = h[inv == s]
        n_s = rows.shape[0]
        if n_s == 1:
            continue
        centered = rows - rows.mean(axis=0)
        v += (n_s / (n_s - 1.0)) * centered.T @ centered
    return 0.5 * (v + v.T)


def hazard_ratio(beta: float, delta: float = 1.0) -> float:
    """Effect size on the ratio scale for a covariate change of ``delta``."""
    return float(np.exp(beta * delta))
