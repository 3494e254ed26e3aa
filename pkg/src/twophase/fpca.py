"""Sparse-longitudinal functional PCA through conditional expectation.

Fits a mean curve and covariance surface to pooled irregular
measurements by local-linear smoothing, eigendecomposes the surface
under trapezoid quadrature, and computes best-linear-predictor component
scores per subject.  Downstream consumers derive the weekly weight-gain
exposure from reconstructed trajectories and flag observations outside
pointwise prediction bands.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from twophase import smoothing
from twophase.errors import DomainError, IllConditionedError

TIME_DOMAIN = (-365.0, 272.0)
FULL_TERM_DAYS = 273  # assumed gestation length behind the phase-1 exposure
DEFAULT_GRID_SIZE = 101
DEFAULT_FVE = 0.999


@dataclass(frozen=True)
class LongitudinalSeries:
    """One subject's sparse weight history on the common gestational clock."""

    subject_id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.size == 0:
            raise ValueError(f"series {self.subject_id}: needs at least one observation")
        if t.size != v.size:
            raise ValueError(f"series {self.subject_id}: times/values length mismatch")
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"series {self.subject_id}: times must be strictly increasing")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError(f"series {self.subject_id}: weights must be finite and positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def shifted(self, offset: float) -> "LongitudinalSeries":
        return LongitudinalSeries(self.subject_id, self.times + offset, self.values)


@dataclass
class EigenSystem:
    """Estimated mean curve, eigenpairs, and noise variance on a fixed grid."""

    grid: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray        # descending, > 0; empty when zero variation
    eigenfunctions: np.ndarray     # K x G, orthonormal under trapezoid quadrature
    noise_var: float
    fve: np.ndarray                # cumulative fraction of variance for k = 1..K
    zero_variation: bool = False
    mean_bandwidth: float = float("nan")
    cov_bandwidth: float = float("nan")

    @property
    def n_components(self) -> int:
        return int(self.eigenvalues.size)

    def domain(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def _check_domain(self, t):
        lo, hi = self.domain()
        t = np.asarray(t, dtype=np.float64)
        if np.any((t < lo) | (t > hi)):
            raise DomainError(
                f"time outside the fitted domain [{lo:g}, {hi:g}]")
        return t

    def mean_at(self, t):
        return np.interp(self._check_domain(t), self.grid, self.mean)

    def eigen_at(self, t):
        """Eigenfunction values at ``t``, shaped K x len(t)."""
        t = self._check_domain(np.atleast_1d(t))
        if self.n_components == 0:
            return np.zeros((0, t.size))
        return np.vstack([np.interp(t, self.grid, phi) for phi in self.eigenfunctions])


def _pool(series: Sequence[LongitudinalSeries], lo: float, hi: float):
    ts, vs, subj = [], [], []
    for i, s in enumerate(series):
        keep = (s.times >= lo) & (s.times <= hi)
        ts.append(s.times[keep])
        vs.append(s.values[keep])
        subj.append(np.full(int(keep.sum()), i, dtype=np.intp))
    return np.concatenate(ts), np.concatenate(vs), np.concatenate(subj)


def fit_eigensystem(series: Sequence[LongitudinalSeries], *,
                    grid_size: int = DEFAULT_GRID_SIZE,
                    domain: tuple[float, float] = TIME_DOMAIN,
                    mean_bandwidth: float | None = None,
                    cov_bandwidth: float | None = None,
                    fve_threshold: float = DEFAULT_FVE,
                    n_components: int | None = None,
                    max_components: int = 20) -> EigenSystem:
    """Estimate the eigensystem from pooled sparse observations.

    The component count is the smallest K whose cumulative fraction of
    variance reaches ``fve_threshold`` (or an explicit ``n_components``).
    Eigenfunction signs are fixed so each integrates to a nonnegative
    value.  Raises IllConditionedError when the data vary but the
    smoothed covariance has no positive spectrum.
    """
    if len(series) < 2:
        raise ValueError("at least two subjects are required to fit an eigensystem")
    lo, hi = float(domain[0]), float(domain[1])
    grid = np.linspace(lo, hi, grid_size)
    t, v, subj = _pool(series, lo, hi)
    if t.size == 0:
        raise ValueError("no observations fall inside the fitting domain")
    span = hi - lo

    xs, ys, ws = smoothing._prepare_1d(t, v)
    if mean_bandwidth is None:
        mean_bandwidth = smoothing.select_bandwidth_1d(xs, ys, ws, span)
    mean, mean_bw = smoothing.smooth_1d(t, v, None, grid, mean_bandwidth)

    resid = v - np.interp(t, grid, mean)
    pooled_var = float(np.mean(resid ** 2))

    # Raw covariance points: within-subject cross-products off the diagonal.
    order = np.argsort(subj, kind="stable")
    t_o, r_o, s_o = t[order], resid[order], subj[order]
    starts = np.flatnonzero(np.r_[True, s_o[1:] != s_o[:-1]])
    counts = np.diff(np.r_[starts, s_o.size])
    ti, tj, rij = [], [], []
    for st, m in zip(starts, counts):
        if m < 2:
            continue
        tt = t_o[st:st + m]
        rr = r_o[st:st + m]
        prod = np.outer(rr, rr)
        off = ~np.eye(m, dtype=bool)
        ti.append(np.repeat(tt, m)[off.ravel()])
        tj.append(np.tile(tt, m)[off.ravel()])
        rij.append(prod.ravel()[off.ravel()])
    if not ti:
        raise ValueError("no subject has two observations; covariance is unidentified")
    ti = np.concatenate(ti)
    tj = np.concatenate(tj)
    rij = np.concatenate(rij)

    g1, g2, cmean, cweight = smoothing.bin_scatter_2d(ti, tj, rij, grid)
    if cov_bandwidth is None:
        cov_bandwidth = smoothing.select_bandwidth_2d(g1, g2, cmean, cweight, grid)
    surface, cov_bw = smoothing.smooth_2d(g1, g2, cmean, cweight, grid, cov_bandwidth)
    surface = 0.5 * (surface + surface.T)

    # Noise variance: smoothed squared residuals minus the surface diagonal,
    # averaged over the central half of the domain, floored at zero.
    diag_fit, _ = smoothing.smooth_1d(t, resid ** 2, None, grid, cov_bw)
    central = (grid >= lo + span / 4) & (grid <= hi - span / 4)
    noise_var = float(max(0.0, np.mean(diag_fit[central] - np.diag(surface)[central])))

    qw = smoothing.trapezoid_weights(grid)
    d = np.sqrt(qw)
    sym = surface * np.outer(d, d)
    evals, evecs = np.linalg.eigh(0.5 * (sym + sym.T))
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    positive = evals > max(1e-12, 1e-10 * abs(evals[0]))
    total_pos = float(evals[positive].sum()) if positive.any() else 0.0

    if total_pos <= max(1e-10, 1e-8 * max(pooled_var, 0.0)):
        if pooled_var <= 1e-10:
            # Zero-variation population: mean curve explains everything.
            return EigenSystem(grid=grid, mean=mean, eigenvalues=np.empty(0),
                               eigenfunctions=np.empty((0, grid_size)),
                               noise_var=noise_var, fve=np.empty(0),
                               zero_variation=True, mean_bandwidth=mean_bw,
                               cov_bandwidth=cov_bw)
        raise IllConditionedError(
            "smoothed covariance has no positive spectrum although the data vary")

    lam_all = evals[positive]
    phi_all = (evecs[:, positive] / d[:, None]).T
    cum = np.cumsum(lam_all) / total_pos
    if n_components is not None:
        k = min(n_components, lam_all.size)
    else:
        k = int(np.searchsorted(cum, fve_threshold) + 1)
        k = min(k, lam_all.size, max_components)
    lam = lam_all[:k]
    phi = phi_all[:k]
    for i in range(k):
        integral = float(qw @ phi[i])
        if integral < 0 or (integral == 0 and phi[i][int(np.argmax(np.abs(phi[i])))] < 0):
            phi[i] = -phi[i]
        norm = float(np.sqrt(qw @ (phi[i] * phi[i])))
        phi[i] /= norm
    return EigenSystem(grid=grid, mean=mean, eigenvalues=lam, eigenfunctions=phi,
                       noise_var=noise_var, fve=cum[:k], zero_variation=False,
                       mean_bandwidth=mean_bw, cov_bandwidth=cov_bw)


def pace_scores(series: LongitudinalSeries, system: EigenSystem,
                ) -> tuple[np.ndarray, np.ndarray]:
    """Best-linear-predictor component scores and conditional covariance.

    Uses only observations inside the fitted domain.  When the subject
    covariance is singular (zero noise with rank-deficient bases) a
    pseudoinverse is used and a warning emitted; for a fully observed
    grid this reduces exactly to least-squares projection of the
    residuals onto the eigenfunctions.
    """
    lo, hi = system.domain()
    keep = (series.times >= lo) & (series.times <= hi)
    if not keep.any():
        raise DomainError(
            f"series {series.subject_id}: no observations inside [{lo:g}, {hi:g}]")
    t = series.times[keep]
    w = series.values[keep]
    k = system.n_components
    if k == 0:
        return np.empty(0), np.empty((0, 0))
    phi = system.eigen_at(t)                      # K x m
    resid = w - system.mean_at(t)                 # m
    lam = system.eigenvalues
    cov = (phi.T * lam) @ phi                     # m x m, Phi diag(lam) Phi^T
    if system.noise_var > 1e-12 * lam[0]:
        sigma = cov + system.noise_var * np.eye(t.size)
        solved = np.linalg.solve(sigma, np.column_stack([resid, (phi * lam[:, None]).T]))
    else:
        warnings.warn(
            "subject covariance is singular (no noise term); using a "
            "pseudoinverse for the conditional scores",
            stacklevel=2,
        )
        pinv = np.linalg.pinv(cov, rcond=1e-10)
        solved = pinv @ np.column_stack([resid, (phi * lam[:, None]).T])
    xi = (phi * lam[:, None]) @ solved[:, 0]
    omega = np.diag(lam) - (phi * lam[:, None]) @ solved[:, 1:]
    omega = 0.5 * (omega + omega.T)
    return xi, omega


def reconstruct(scores: np.ndarray, system: EigenSystem, t) -> np.ndarray:
    """Predicted trajectory value(s) at ``t`` from component scores."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    mu = system.mean_at(t_arr)
    if system.n_components:
        mu = mu + np.asarray(scores) @ system.eigen_at(t_arr)
    return mu if np.ndim(t) else float(mu[0])


def weight_change(series: LongitudinalSeries, system: EigenSystem,
                  gestation_days: float = FULL_TERM_DAYS) -> float:
    """Average weekly weight gain over a pregnancy of ``gestation_days``.

    Measurement times are re-anchored to the conception date implied by
    the validated gestation length; with the default full-term length
    this is the phase-1 exposure definition.
    """
    g = float(gestation_days)
    lo, hi = system.domain()
    if g < 14 or (g - 1) > hi:
        raise DomainError(
            f"gestation length {g:g} outside the supported range [14, {hi + 1:g}]")
    shifted = series.shifted(g - FULL_TERM_DAYS)
    xi, _ = pace_scores(shifted, system)
    endpoints = reconstruct(xi, system, np.array([g - 1.0, 0.0]))
    return float((endpoints[0] - endpoints[1]) / (g / 7.0))


def flag_outliers(series: LongitudinalSeries, system: EigenSystem,
                  level: float = 0.95) -> list[int]:
    """Indices of observations outside the pointwise prediction band.

    The band half-width at each observed time is the normal quantile for
    ``level`` times the prediction standard error, which includes both
    the conditional score uncertainty and the measurement noise.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    lo, hi = system.domain()
    keep = np.flatnonzero((series.times >= lo) & (series.times <= hi))
    if keep.size == 0:
        return []
    sub = LongitudinalSeries(series.subject_id, series.times[keep],
                             series.values[keep])
    xi, omega = pace_scores(sub, system)
    pred = reconstruct(xi, system, sub.times)
    if system.n_components:
        phi = system.eigen_at(sub.times)
        band_var = np.einsum("km,kl,lm->m", phi, omega, phi)
    else:
        band_var = np.zeros(sub.times.size)
    z = NormalDist().inv_cdf(1.0 - (1.0 - level) / 2.0)
    half = z * np.sqrt(np.maximum(band_var, 0.0) + system.noise_var)
    out = np.abs(sub.values - pred) > half
    return [int(keep[j]) for j in np.flatnonzero(out)]
