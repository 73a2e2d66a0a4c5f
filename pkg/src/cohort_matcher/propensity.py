"""Logistic regression by IRLS, propensity scores and attrition models."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats
from scipy.special import expit

from .cohort import FOOTBALL, OUTCOMES, SPORT_CONTROL, Cohort
from .design import CovariateMatrix, covariate_matrix, with_intercept
from .errors import DegenerateResponseError, RankDeficientError


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 50
    rel_tol: float = 1e-10
    grad_tol: float = 1e-8
    separation_bound: float = 20.0
    ridge: float = 1e-4
    max_halvings: int = 30
    step_tol: float = 1e-6


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    columns: tuple[str, ...] = ()
    separation: bool = False
    ridge: float = 0.0
    trace: tuple[float, ...] = field(default=(), repr=False)
    dropped: tuple[str, ...] = ()

    def confint(self, level: float = 0.95) -> np.ndarray:
        z = stats.norm.ppf(0.5 + level / 2)
        return np.column_stack(
            [self.coefficients - z * self.standard_errors, self.coefficients + z * self.standard_errors]
        )

    def summary(self) -> pd.DataFrame:
        ci = self.confint()
        z = np.divide(
            self.coefficients,
            self.standard_errors,
            out=np.zeros_like(self.coefficients),
            where=self.standard_errors > 0,
        )
        return pd.DataFrame(
            {
                "term": list(self.columns) or [f"x{j}" for j in range(len(self.coefficients))],
                "coef": self.coefficients,
                "se": self.standard_errors,
                "lo": ci[:, 0],
                "hi": ci[:, 1],
                "odds_ratio": np.exp(self.coefficients),
                "p": 2 * stats.norm.sf(np.abs(z)),
            }
        )


def _loglik(x: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = x @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def dependent_columns(x: np.ndarray, tol: float = 1e-9) -> list[int]:
    """Indices of columns that are linear combinations of earlier-pivoted ones."""
    if x.shape[1] == 0:
        return []
    _, r, piv = linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * max(diag[0], 1e-300)))
    return sorted(int(j) for j in piv[rank:])


def _irls(x, y, options: FitOptions, penalty: np.ndarray):
    beta = np.zeros(x.shape[1])
    ll = _loglik(x, y, beta) - 0.5 * float(penalty @ beta**2)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, options.max_iter + 1):
        p = expit(x @ beta)
        w = p * (1 - p)
        grad = x.T @ (y - p) - penalty * beta
        hess = (x * w[:, None]).T @ x + np.diag(penalty)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", linalg.LinAlgWarning)
                step = linalg.solve(hess, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(hess, grad)[0]
        t = 1.0
        for _ in range(options.max_halvings):
            cand = beta + t * step
            ll_new = _loglik(x, y, cand) - 0.5 * float(penalty @ cand**2)
            if ll_new >= ll - 1e-12 * max(abs(ll), 1.0):
                break
            t *= 0.5
        else:
            cand, ll_new = beta, ll
        change = abs(ll_new - ll) / max(abs(ll), 1.0)
        moved = float(np.max(np.abs(cand - beta)))
        beta, ll = cand, ll_new
        trace.append(ll)
        p = expit(x @ beta)
        grad = x.T @ (y - p) - penalty * beta
        # under separation the gradient vanishes while coefficients keep drifting
        settled = moved <= options.step_tol * (1.0 + float(np.max(np.abs(beta))))
        if settled and (np.max(np.abs(grad)) < options.grad_tol or change < options.rel_tol):
            converged = True
            break
    p = expit(x @ beta)
    hess = (x * (p * (1 - p))[:, None]).T @ x + np.diag(penalty)
    try:
        cov = linalg.inv(hess)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except linalg.LinAlgError:
        se = np.full(x.shape[1], np.inf)
    return beta, se, converged, it, ll, tuple(trace)


def fit_logistic(
    design: np.ndarray,
    response: np.ndarray,
    options: FitOptions | None = None,
    columns: Sequence[str] = (),
) -> LogisticFit:
    """Maximum-likelihood logistic regression.

    ``design`` must contain an intercept column. If the fit has not converged
    after ``max_iter`` iterations and a coefficient exceeds
    ``separation_bound`` in magnitude, the model is refit with a small ridge
    penalty on the non-intercept terms and flagged with ``separation=True``.
    """
    options = options or FitOptions()
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"design has {x.shape[0]} rows but response has {y.shape[0]}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("response must be binary 0/1")
    if y.min() == y.max():
        raise DegenerateResponseError(f"response has no variation (all {int(y[0])})")
    const = [j for j in range(x.shape[1]) if np.all(x[:, j] == x[0, j]) and x[0, j] != 0]
    if not const:
        raise ValueError("design must include an intercept column")
    dep = dependent_columns(x)
    if dep:
        names = [columns[j] if columns else f"column {j}" for j in dep]
        raise RankDeficientError(names)

    penalty = np.zeros(x.shape[1])
    beta, se, converged, it, ll, trace = _irls(x, y, options, penalty)
    slopes = np.delete(beta, const)
    separation = not converged and slopes.size > 0 and np.max(np.abs(slopes)) > options.separation_bound
    ridge = 0.0
    if separation:
        ridge = options.ridge
        penalty = np.full(x.shape[1], ridge)
        penalty[const] = 0.0
        beta, se, converged, it, ll, trace = _irls(x, y, options, penalty)
    return LogisticFit(
        coefficients=beta,
        standard_errors=se,
        converged=converged,
        iterations=it,
        log_likelihood=ll,
        columns=tuple(columns),
        separation=separation,
        ridge=ridge,
        trace=trace,
    )


def predict(fit: LogisticFit, row: np.ndarray) -> np.ndarray | float:
    """Fitted probability for a design row (or matrix of rows)."""
    x = np.asarray(row, dtype=float)
    if x.shape[-1] != fit.coefficients.shape[0]:
        raise ValueError(f"row has {x.shape[-1]} entries, fit has {fit.coefficients.shape[0]}")
    p = expit(x @ fit.coefficients)
    return float(p) if np.ndim(p) == 0 else p


def propensity_scores(
    cm: CovariateMatrix,
    exposed: np.ndarray,
    options: FitOptions | None = None,
    drop_dependent: bool = False,
):
    """Fit exposure on the model encoding of ``cm``; returns (scores, fit).

    With ``drop_dependent`` columns that are linear combinations of others
    are removed before fitting (they are listed in ``fit.dropped``) instead
    of raising :class:`RankDeficientError`.
    """
    x = with_intercept(cm.values)
    names = ("(intercept)",) + cm.columns
    dropped: tuple[str, ...] = ()
    if drop_dependent:
        dep = [j for j in dependent_columns(x) if j != 0]
        if dep:
            dropped = tuple(names[j] for j in dep)
            keep = [j for j in range(x.shape[1]) if j not in set(dep)]
            x, names = x[:, keep], tuple(names[j] for j in keep)
    fit = fit_logistic(x, np.asarray(exposed, dtype=float), options, names)
    if dropped:
        fit = replace(fit, dropped=dropped)
    return predict(fit, x), fit


@dataclass(frozen=True)
class AttritionResult:
    outcome: str
    with_exposure: bool
    fit: LogisticFit
    n: int
    n_available: int

    def report(self) -> pd.DataFrame:
        table = self.fit.summary()
        table.insert(0, "variant", "with_exposure" if self.with_exposure else "without_exposure")
        table.insert(0, "outcome", self.outcome)
        if self.with_exposure:
            table["exposure_term"] = table["term"].isin(["group[football]", "group[sport_control]"])
        else:
            table["exposure_term"] = False
        return table


def attrition_analysis(
    cohort: Cohort,
    outcome: str,
    with_exposure: bool = True,
    options: FitOptions | None = None,
) -> AttritionResult:
    """Logistic model for whether ``outcome`` is observed among eligible subjects.

    The design holds every schema covariate; with ``with_exposure`` it also
    has football and sport-control indicators (non-sport controls are the
    reference).
    """
    if outcome not in OUTCOMES:
        raise ValueError(f"unknown outcome {outcome!r}")
    subjects = cohort.eligible
    cm = covariate_matrix(subjects, cohort.spec)
    y = np.array([s.coded_outcomes.get(outcome) is not None for s in subjects], dtype=float)
    cols = list(cm.columns)
    x = cm.values
    if with_exposure:
        fb = np.array([s.group == FOOTBALL for s in subjects], dtype=float)
        sc = np.array([s.group == SPORT_CONTROL for s in subjects], dtype=float)
        x = np.column_stack([fb, sc, x])
        cols = ["group[football]", "group[sport_control]"] + cols
    fit = fit_logistic(with_intercept(x), y, options, ["(intercept)"] + cols)
    return AttritionResult(outcome, with_exposure, fit, len(subjects), int(y.sum()))
