"""Effect estimation within matched sets and the ordered testing procedure."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .matcher import Matching

ODDS_RATIO = "odds_ratio"
SD_UNITS = "sd_units"
ORDERED = "ordered_procedure"
UNADJUSTED = "unadjusted"

Z975 = stats.norm.ppf(0.975)


@dataclass(frozen=True)
class EffectEstimate:
    comparison: str
    outcome: str
    scale: str
    point: float
    ci95: tuple[float, float]
    p_value: float
    n_sets: int
    multiplicity_flag: str = UNADJUSTED
    coefficient: float = math.nan
    se: float = math.nan
    n_informative: int = 0
    n_skipped: int = 0
    note: str = ""

    def __post_init__(self):
        lo, hi = self.ci95
        if not (lo <= self.point <= hi) and not math.isnan(self.point):
            raise ValueError(f"point {self.point} outside CI {self.ci95}")
        if self.scale == ODDS_RATIO and not self.point > 0:
            raise ValueError("odds ratio must be positive")

    @property
    def label(self) -> str:
        return classify_effect(self)


# Conditional logistic regression ------------------------------------------


def subset_counts(treatment: Sequence[int], n_cases: int) -> np.ndarray:
    """c[j] = number of size-``n_cases`` subsets containing ``j`` treated members."""
    t = int(sum(treatment))
    u = len(treatment) - t
    return np.array(
        [math.comb(t, j) * math.comb(u, n_cases - j) if 0 <= n_cases - j <= u else 0 for j in range(t + 1)],
        dtype=float,
    )


@dataclass(frozen=True)
class _SetTerm:
    counts: np.ndarray
    observed: int
    weight: int = 1


def _set_moments(term: _SetTerm, beta: float):
    j = np.arange(term.counts.size)
    logw = np.where(term.counts > 0, np.log(np.where(term.counts > 0, term.counts, 1)) + beta * j, -np.inf)
    top = logw.max()
    w = np.exp(logw - top)
    d = w.sum()
    mean = float((j * w).sum() / d)
    var = float((j * j * w).sum() / d - mean**2)
    log_denom = top + math.log(d)
    return log_denom, mean, max(var, 0.0)


def _collect_sets(matching: Matching, outcome: Mapping[str, float | None]):
    terms: dict[tuple, int] = {}
    skipped = 0
    used = 0
    for ms in matching.sets:
        members = [(1, outcome.get(ms.exposed_id))] + [(0, outcome.get(c)) for c in ms.control_ids]
        members = [(t, y) for t, y in members if y is not None and not (isinstance(y, float) and math.isnan(y))]
        if len(members) < 2 or not any(t for t, _ in members) or all(t for t, _ in members):
            skipped += 1
            continue
        used += 1
        cases = sum(int(y) for _, y in members)
        if cases == 0 or cases == len(members):
            skipped += 1
            continue
        treat = [t for t, _ in members]
        obs = sum(t for t, y in members if int(y) == 1)
        key = (tuple(sorted(treat)), cases, obs)
        terms[key] = terms.get(key, 0) + 1
    out = [_SetTerm(subset_counts(list(k[0]), k[1]), k[2], w) for k, w in sorted(terms.items())]
    return out, used, skipped


def conditional_loglik(terms: Sequence[_SetTerm], beta: float) -> tuple[float, float, float]:
    """Log conditional likelihood, score and information at ``beta``."""
    ll = score = info = 0.0
    for t in terms:
        log_denom, mean, var = _set_moments(t, beta)
        ll += t.weight * (beta * t.observed - log_denom)
        score += t.weight * (t.observed - mean)
        info += t.weight * var
    return ll, score, info


def set_terms(matching: Matching, outcome: Mapping[str, float | None]):
    """Informative per-set likelihood terms (sets with both cases and non-cases)."""
    return _collect_sets(matching, outcome)[0]


def _tail_prob_at_extreme(terms, beta: float, upper: bool) -> float:
    logp = 0.0
    for t in terms:
        j = np.arange(t.counts.size)
        logw = np.where(t.counts > 0, np.log(np.where(t.counts > 0, t.counts, 1)) + beta * j, -np.inf)
        k = int(np.max(j[t.counts > 0])) if upper else int(np.min(j[t.counts > 0]))
        logp += t.weight * (logw[k] - np.logaddexp.reduce(logw))
    return math.exp(logp)


def _extreme_estimate(terms, upper: bool, comparison: str, outcome: str, n_sets, n_inf, skipped):
    """Median-unbiased estimate and one-sided 95% bound when the MLE is infinite."""

    def f(beta, target):
        return _tail_prob_at_extreme(terms, beta, upper) - target

    if upper:
        mu = optimize.brentq(f, -50, 50, args=(0.5,), xtol=1e-12)
        bound = optimize.brentq(f, -50, 50, args=(0.05,), xtol=1e-12)
        ci = (math.exp(bound), math.inf)
    else:
        mu = optimize.brentq(f, -50, 50, args=(0.5,), xtol=1e-12)
        bound = optimize.brentq(f, -50, 50, args=(0.05,), xtol=1e-12)
        ci = (0.0, math.exp(bound))
    p = min(1.0, 2 * _tail_prob_at_extreme(terms, 0.0, upper))
    return EffectEstimate(
        comparison,
        outcome,
        ODDS_RATIO,
        math.exp(mu),
        ci,
        p,
        n_sets,
        coefficient=mu,
        n_informative=n_inf,
        n_skipped=skipped,
        note="median_unbiased_one_sided_ci",
    )


def conditional_logistic(
    matching: Matching,
    outcome: Mapping[str, float | None],
    comparison: str = "",
    outcome_name: str = "",
    max_iter: int = 100,
    tol: float = 1e-12,
) -> EffectEstimate:
    """Exact conditional likelihood with the treatment indicator as sole predictor.

    Per set, the likelihood conditions on the number of cases and sums over
    all case subsets of that size. Sets without both cases and non-cases
    carry no information and are skipped. When every informative set sits at
    the same extreme the MLE is infinite and a median-unbiased estimate with
    a one-sided bound is returned instead (``note`` says so).
    """
    terms, used, skipped = _collect_sets(matching, outcome)
    n_sets = used
    n_inf = sum(t.weight for t in terms)
    if not terms:
        return EffectEstimate(
            comparison, outcome_name, ODDS_RATIO, 1.0, (0.0, math.inf), 1.0, n_sets,
            n_informative=0, n_skipped=skipped, note="no_informative_sets",
        )
    t_obs = sum(t.weight * t.observed for t in terms)
    t_max = sum(t.weight * int(np.max(np.nonzero(t.counts)[0])) for t in terms)
    t_min = sum(t.weight * int(np.min(np.nonzero(t.counts)[0])) for t in terms)
    if t_obs == t_max or t_obs == t_min:
        return _extreme_estimate(terms, t_obs == t_max, comparison, outcome_name, n_sets, n_inf, skipped)

    beta = 0.0
    ll, score, info = conditional_loglik(terms, beta)
    for _ in range(max_iter):
        step = score / info
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new, score_new, info_new = conditional_loglik(terms, cand)
            if ll_new >= ll - 1e-14 * max(1.0, abs(ll)) or t < 1e-10:
                break
            t /= 2
        beta, ll, score, info = cand, ll_new, score_new, info_new
        if abs(score) < tol * max(1.0, n_inf) or abs(t * step) < 1e-15:
            break
    se = 1.0 / math.sqrt(info)
    lo, hi = beta - Z975 * se, beta + Z975 * se
    p = float(2 * stats.norm.sf(abs(beta / se)))
    return EffectEstimate(
        comparison,
        outcome_name,
        ODDS_RATIO,
        math.exp(beta),
        (math.exp(lo), math.exp(hi)),
        p,
        n_sets,
        coefficient=beta,
        se=se,
        n_informative=n_inf,
        n_skipped=skipped,
    )


# Fixed-effects linear model --------------------------------------------------


def _set_arrays(matching: Matching, outcome: Mapping[str, float | None]):
    y, z, g = [], [], []
    for n, ms in enumerate(matching.sets):
        members = [(1.0, outcome.get(ms.exposed_id))] + [(0.0, outcome.get(c)) for c in ms.control_ids]
        members = [(t, v) for t, v in members if v is not None and not math.isnan(v)]
        if len(members) < 2 or len({t for t, _ in members}) < 2:
            continue
        for t, v in members:
            y.append(float(v))
            z.append(t)
            g.append(n)
    return np.array(y), np.array(z), np.array(g, dtype=int)


def fixed_effects_ols(
    matching: Matching,
    outcome: Mapping[str, float | None],
    outcome_sd: float = 1.0,
    comparison: str = "",
    outcome_name: str = "",
) -> EffectEstimate:
    """Outcome on treatment plus one intercept per matched set (within-set demeaning).

    The reported point and CI are the coefficient divided by ``outcome_sd``
    (the pre-matching pooled outcome SD); ``coefficient`` keeps the raw
    scale. Wald CI with n - sets - 1 degrees of freedom.
    """
    y, z, g = _set_arrays(matching, outcome)
    n_sets = int(np.unique(g).size)
    if n_sets == 0:
        return EffectEstimate(
            comparison, outcome_name, SD_UNITS, 0.0, (-math.inf, math.inf), 1.0, 0, note="no_usable_sets"
        )
    counts = np.bincount(g)
    y_bar = np.bincount(g, weights=y) / np.where(counts > 0, counts, 1)
    z_bar = np.bincount(g, weights=z) / np.where(counts > 0, counts, 1)
    yt = y - y_bar[g]
    zt = z - z_bar[g]
    sxx = float(zt @ zt)
    beta = float(zt @ yt) / sxx
    resid = yt - beta * zt
    df = y.size - n_sets - 1
    if df > 0:
        sigma2 = float(resid @ resid) / df
        se = math.sqrt(sigma2 / sxx)
        q = stats.t.ppf(0.975, df)
        p = float(2 * stats.t.sf(abs(beta / se), df)) if se > 0 else (0.0 if beta != 0 else 1.0)
    else:
        se, q, p = math.inf, math.inf, 1.0
    s = outcome_sd if outcome_sd > 0 else 1.0
    lo, hi = (beta - q * se) / s, (beta + q * se) / s
    return EffectEstimate(
        comparison,
        outcome_name,
        SD_UNITS,
        beta / s,
        (lo, hi),
        p,
        n_sets,
        coefficient=beta,
        se=se,
        n_informative=n_sets,
    )


# Classification and ordered testing -----------------------------------------

SD_LABELS = ((1.2, "very large"), (0.8, "large"), (0.5, "medium"), (0.2, "small"), (0.01, "very small"))


def classify_effect(estimate: EffectEstimate | float, scale: str | None = None) -> str:
    """Effect-size label; odds ratios are classified by max(OR, 1/OR)."""
    if isinstance(estimate, EffectEstimate):
        value, scale = estimate.point, estimate.scale
    else:
        value = float(estimate)
    if scale == ODDS_RATIO:
        if not value > 0:
            raise ValueError("odds ratio must be positive")
        r = max(value, 1.0 / value)
        if r >= 5.0:
            return "large"
        if r >= 1.5:
            return "small-to-medium"
        return "below small"
    if scale == SD_UNITS:
        a = abs(value)
        for cut, name in SD_LABELS:
            if a >= cut:
                return name
        return "negligible"
    raise ValueError(f"unknown scale {scale!r}")


@dataclass(frozen=True)
class OrderedTestResult:
    tau0: float
    primary_ci: tuple[float, float]
    alternatives_tested: bool
    decisions: dict[str, str] = field(default_factory=dict)
    estimates: tuple[EffectEstimate, ...] = ()


def null_value(scale: str) -> float:
    return 1.0 if scale == ODDS_RATIO else 0.0


def _rejects(est: EffectEstimate, tau0: float) -> bool:
    lo, hi = est.ci95
    return not (lo <= tau0 <= hi)


def ordered_test(
    primary: EffectEstimate,
    alternatives: Sequence[EffectEstimate],
    tau0: float | None = None,
) -> OrderedTestResult:
    """Gatekeeping across control groups.

    The alternatives are tested (each at level 0.05) only when ``tau0`` lies
    outside the primary comparison's closed 95% CI; otherwise they are still
    reported but flagged unadjusted.
    """
    tau0 = null_value(primary.scale) if tau0 is None else tau0
    gate = _rejects(primary, tau0)
    decisions = {primary.comparison: "reject" if gate else "fail_to_reject"}
    flagged = [replace(primary, multiplicity_flag=ORDERED)]
    for est in alternatives:
        if gate:
            decisions[est.comparison] = "reject" if _rejects(est, tau0) else "fail_to_reject"
            flagged.append(replace(est, multiplicity_flag=ORDERED))
        else:
            decisions[est.comparison] = "not_tested"
            flagged.append(replace(est, multiplicity_flag=UNADJUSTED))
    return OrderedTestResult(tau0, primary.ci95, gate, decisions, tuple(flagged))
