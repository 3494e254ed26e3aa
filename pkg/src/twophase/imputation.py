"""Parametric imputation of validated variables and MI influence auxiliaries.

Imputation models are fit on the validated subsample only, one target at
a time in a declared sequence (later targets may condition on earlier
imputed ones, e.g. gestation length before a recomputed exposure).  Each
imputation replicate draws model coefficients from their asymptotic
normal law plus residual noise, so the auxiliary influence functions
average over parameter uncertainty as well.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from twophase import models
from twophase.errors import ConvergenceError

Columns = dict[str, np.ndarray]

DEFAULT_REPLICATES = 100
MIN_VALIDATED = 30


@dataclass(frozen=True)
class VariableSpec:
    """How to impute one target variable.

    ``kind`` is "continuous" (linear model plus Gaussian residual),
    "binary" (logistic model, Bernoulli draw), or "derived"
    (deterministic function of previously imputed columns; no model).
    Predictors may name phase-1 columns or earlier targets in the
    sequence, whose imputed values are used.
    """

    name: str
    kind: str
    predictors: tuple[str, ...] = ()
    derive: Callable[[Columns], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "binary", "derived"):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind == "derived" and self.derive is None:
            raise ValueError(f"derived target {self.name!r} needs a derive function")


@dataclass
class _SubModel:
    coef: np.ndarray
    coef_chol: np.ndarray | None   # None for degenerate targets
    resid_sd: float                # 0.0 for binary/degenerate
    constant: float | None = None  # set when the target was constant in phase 2


@dataclass
class ImputationModel:
    specs: tuple[VariableSpec, ...]
    fits: dict[str, _SubModel] = field(default_factory=dict)

    def targets(self) -> list[str]:
        return [s.name for s in self.specs]


def _design(data: Columns, predictors: Sequence[str], rows) -> np.ndarray:
    cols = [np.ones(int(np.sum(rows)) if rows.dtype == bool else len(rows))]
    for p in predictors:
        cols.append(np.asarray(data[p], dtype=np.float64)[rows])
    return np.column_stack(cols)


def fit_imputation(data: Columns, validated: np.ndarray,
                   specs: Sequence[VariableSpec], *,
                   min_validated: int = MIN_VALIDATED) -> ImputationModel:
    """Fit the imputation sub-models on the validated records.

    ``data`` maps column names to full-population arrays; targets hold
    their validated values on the rows where ``validated`` is True.
    """
    validated = np.asarray(validated, dtype=bool)
    n_val = int(validated.sum())
    if n_val < min_validated:
        raise ValueError(
            f"{n_val} validated records; at least {min_validated} required")
    model = ImputationModel(specs=tuple(specs))
    for spec in specs:
        if spec.kind == "derived":
            continue
        y = np.asarray(data[spec.name], dtype=np.float64)[validated]
        x = _design(data, spec.predictors, validated)
        if np.unique(y).size == 1:
            warnings.warn(
                f"target {spec.name!r} is constant in the validated data; "
                "imputing the constant", stacklevel=2)
            model.fits[spec.name] = _SubModel(
                coef=np.zeros(x.shape[1]), coef_chol=None, resid_sd=0.0,
                constant=float(y[0]))
            continue
        if spec.kind == "binary":
            # Light data augmentation: both outcomes at the predictor mean
            # and one step along each predictor axis.  Keeps separated
            # models (e.g. perfect surrogates) finite with full-rank
            # curvature while barely perturbing healthy fits.
            xbar = x.mean(axis=0)
            sd = np.maximum(x.std(axis=0), 1e-8)
            sd[0] = 0.0  # intercept column
            pseudo = [xbar]
            for j in range(1, x.shape[1]):
                step = np.zeros(x.shape[1])
                step[j] = sd[j]
                pseudo.extend([xbar + step, xbar - step])
            pseudo = np.asarray(pseudo)
            x_aug = np.vstack([x, pseudo, pseudo])
            y_aug = np.concatenate([y, np.ones(len(pseudo)), np.zeros(len(pseudo))])
            w_aug = np.concatenate([np.ones(y.size),
                                    np.full(2 * len(pseudo), 0.25)])
            fit = models.fit_logistic(y_aug, x_aug, w_aug)
            cov = fit.variance
            resid_sd = 0.0
            coef = fit.coefficients
        else:
            coef, *_ = np.linalg.lstsq(x, y, rcond=None)
            resid = y - x @ coef
            dof = max(len(y) - x.shape[1], 1)
            s2 = float(resid @ resid) / dof
            xtx_inv = np.linalg.pinv(x.T @ x)
            cov = s2 * xtx_inv
            resid_sd = float(np.sqrt(s2))
        try:
            chol = np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            chol = None
        model.fits[spec.name] = _SubModel(coef=coef, coef_chol=chol,
                                          resid_sd=resid_sd)
    return model


def impute_once(data: Columns, model: ImputationModel,
                rng: np.random.Generator, *, pass_through: bool = False,
                validated: np.ndarray | None = None) -> Columns:
    """One completed dataset: every record imputed, in sequence order.

    By default validated records are re-imputed like everyone else;
    ``pass_through=True`` keeps their observed values instead.
    """
    n = len(next(iter(data.values())))
    work: Columns = dict(data)
    out: Columns = {}
    all_rows = np.ones(n, dtype=bool)
    for spec in model.specs:
        if spec.kind == "derived":
            imputed = np.asarray(spec.derive(work), dtype=np.float64)
        else:
            sub = model.fits[spec.name]
            if sub.constant is not None:
                imputed = np.full(n, sub.constant)
            else:
                coef = sub.coef
                if sub.coef_chol is not None:
                    coef = coef + sub.coef_chol @ rng.standard_normal(coef.size)
                x = _design(work, spec.predictors, all_rows)
                eta = x @ coef
                if spec.kind == "binary":
                    p = 1.0 / (1.0 + np.exp(-eta))
                    imputed = (rng.uniform(size=n) < p).astype(np.float64)
                else:
                    imputed = eta + sub.resid_sd * rng.standard_normal(n)
        if pass_through:
            if validated is None:
                raise ValueError("pass_through requires the validated mask")
            imputed = np.where(validated, np.asarray(data[spec.name]), imputed)
        out[spec.name] = imputed
        work[spec.name] = imputed  # later targets condition on this draw
    return out


def impute(data: Columns, model: ImputationModel, m: int, seed: int, *,
           pass_through: bool = False,
           validated: np.ndarray | None = None) -> list[Columns]:
    """M completed datasets; replicate ``j`` depends only on ``(seed, j)``."""
    if m < 2:
        raise ValueError("at least two imputation replicates are required")
    return [
        impute_once(data, model,
                    np.random.default_rng(np.random.SeedSequence([seed, j])),
                    pass_through=pass_through, validated=validated)
        for j in range(m)
    ]


@dataclass(frozen=True)
class AnalysisSpec:
    """The working analysis model fit to each completed dataset."""

    kind: str                    # "cox" | "logistic"
    outcome: str                 # completed outcome column (logistic), or time
    event: str | None            # event column for cox
    covariates: tuple[str, ...]  # completed/phase-1 columns, design order
    target: int                  # coefficient index whose influence is wanted
    intercept: bool = False      # prepend a constant column (logistic)


def _analysis_influence(completed: Columns, base: Columns,
                        spec: AnalysisSpec) -> np.ndarray:
    def col(name):
        return completed[name] if name in completed else np.asarray(base[name],
                                                                    dtype=np.float64)
    cols = [col(c) for c in spec.covariates]
    if spec.intercept:
        cols.insert(0, np.ones(len(cols[0])))
    x = np.column_stack(cols)
    target = spec.target + (1 if spec.intercept else 0)
    if spec.kind == "cox":
        fit = models.fit_cox(np.maximum(col(spec.outcome), 1e-6),
                             np.clip(col(spec.event), 0, 1), x)
    else:
        fit = models.fit_logistic(np.clip(col(spec.outcome), 0, 1), x)
    return models.influence_for_target(fit, target)


def mi_influence(data: Columns, model: ImputationModel, m: int,
                 analysis: AnalysisSpec, seed: int, *,
                 pass_through: bool = False,
                 validated: np.ndarray | None = None) -> np.ndarray:
    """Average per-record influence over M imputation replicates.

    Replicates whose working fit fails to converge are dropped with a
    warning; if half or more fail the auxiliary is unusable and an error
    is raised.
    """
    if m < 2:
        raise ValueError("at least two imputation replicates are required")
    n = len(next(iter(data.values())))
    total = np.zeros(n)
    kept = 0
    failures = []
    for j in range(m):
        rng = np.random.default_rng(np.random.SeedSequence([seed, j]))
        completed = impute_once(data, model, rng, pass_through=pass_through,
                                validated=validated)
        try:
            total += _analysis_influence(completed, data, analysis)
        except ConvergenceError as exc:
            failures.append((j, str(exc)))
            continue
        kept += 1
    if failures:
        warnings.warn(
            f"{len(failures)} of {m} imputation replicates dropped "
            f"(first: {failures[0][1]})", stacklevel=2)
    if kept < (m + 1) // 2:
        raise ConvergenceError(
            f"only {kept} of {m} imputation replicates converged; "
            "the multiply-imputed auxiliary is unreliable")
    return total / kept
