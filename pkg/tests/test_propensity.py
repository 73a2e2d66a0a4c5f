import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import expit

from oracles import logistic_mle
from cohort_matcher.config import RunConfig
from cohort_matcher.design import covariate_matrix, with_intercept
from cohort_matcher.errors import DegenerateResponseError, RankDeficientError
from cohort_matcher.pipeline import prepare_cohort
from cohort_matcher.propensity import (
    FitOptions,
    LogisticFit,
    attrition_analysis,
    dependent_columns,
    fit_logistic,
    predict,
    propensity_scores,
)


def _ones(n):
    return np.ones((n, 1))


def test_intercept_only_half():
    fit = fit_logistic(_ones(10), np.array([0, 1] * 5))
    assert abs(fit.coefficients[0]) < 1e-8
    assert fit.converged


def test_intercept_only_football_prevalence():
    y = np.r_[np.ones(3753), np.zeros(6247)]
    fit = fit_logistic(_ones(y.size), y)
    assert fit.coefficients[0] == pytest.approx(math.log(0.3753 / 0.6247), abs=1e-8)
    assert fit.coefficients[0] == pytest.approx(-0.5095, abs=5e-5)


def test_predict_zero_predictor():
    fit = LogisticFit(np.array([0.0, 1.3]), np.zeros(2), True, 1, 0.0)
    assert predict(fit, np.array([1.0, 0.0])) == 0.5


def test_predict_reference_intercept():
    b0 = math.log(0.3753 / 0.6247)
    fit = LogisticFit(np.array([b0, 0.7]), np.zeros(2), True, 1, 0.0)
    assert predict(fit, np.array([1.0, 0.0])) == pytest.approx(0.3753, abs=1e-12)


def test_predict_length_mismatch():
    fit = LogisticFit(np.array([0.0, 1.0]), np.zeros(2), True, 1, 0.0)
    with pytest.raises(ValueError):
        predict(fit, np.array([1.0]))


def _grid_maximizer(x, y, center, half=4.0, points=21, rounds=12):
    """Zooming grid search over a cube of coefficients."""
    c = np.asarray(center, dtype=float)
    axes = np.linspace(-1, 1, points)
    for _ in range(rounds):
        mesh = np.stack(np.meshgrid(*[c[j] + half * axes for j in range(c.size)], indexing="ij"), -1).reshape(-1, c.size)
        eta = mesh @ x.T
        ll = (y * eta - np.logaddexp(0, eta)).sum(axis=1)
        c = mesh[np.argmax(ll)]
        half /= 4
    return c


def test_small_instance_matches_grid_search():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((20, 2))
    y = (rng.random(20) < expit(0.3 + z @ np.array([0.8, -0.6]))).astype(float)
    x = with_intercept(z)
    fit = fit_logistic(x, y)
    grid = _grid_maximizer(x, y, np.zeros(3))
    assert np.allclose(fit.coefficients, grid, atol=1e-4)
    assert np.allclose(fit.coefficients, logistic_mle(x, y), atol=1e-5)


def test_standard_errors_are_inverse_information():
    rng = np.random.default_rng(3)
    x = with_intercept(rng.standard_normal((200, 2)))
    y = (rng.random(200) < expit(x @ np.array([-0.2, 0.5, 0.1]))).astype(float)
    fit = fit_logistic(x, y)
    p = expit(x @ fit.coefficients)
    info = x.T @ (x * (p * (1 - p))[:, None])
    assert np.allclose(fit.standard_errors, np.sqrt(np.diag(np.linalg.inv(info))), rtol=1e-6)


def test_likelihood_trace_is_nondecreasing():
    rng = np.random.default_rng(5)
    x = with_intercept(rng.standard_normal((150, 3)))
    y = (rng.random(150) < expit(x @ np.array([0.1, 1.0, -1.0, 0.5]))).astype(float)
    fit = fit_logistic(x, y)
    assert np.all(np.diff(fit.trace) >= -1e-10)


def test_rank_deficient_names_columns():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((30, 2))
    x = with_intercept(np.column_stack([z, z[:, 0] + z[:, 1]]))
    with pytest.raises(RankDeficientError) as err:
        fit_logistic(x, (rng.random(30) < 0.5).astype(float), columns=["(intercept)", "a", "b", "a_plus_b"])
    assert len(err.value.columns) == 1
    assert err.value.columns[0] in ("a", "b", "a_plus_b")
    assert len(dependent_columns(x)) == 1


def test_degenerate_response():
    with pytest.raises(DegenerateResponseError):
        fit_logistic(with_intercept(np.arange(5.0)[:, None]), np.ones(5))


def test_design_needs_intercept():
    with pytest.raises(ValueError):
        fit_logistic(np.arange(6.0).reshape(3, 2), np.array([0, 1, 0]))


def test_separation_flagged_with_ridge():
    x = with_intercept(np.arange(-5.0, 5.0)[:, None])
    y = (x[:, 1] > 0).astype(float)
    fit = fit_logistic(x, y, FitOptions(max_iter=50))
    assert fit.separation
    assert fit.ridge > 0
    assert np.all(np.isfinite(fit.coefficients))


def test_recovers_known_coefficients():
    rng = np.random.default_rng(21)
    beta = np.array([-0.4, 0.9, -0.5])
    x = with_intercept(rng.standard_normal((3000, 2)))
    y = (rng.random(3000) < expit(x @ beta)).astype(float)
    fit = fit_logistic(x, y)
    assert np.all(np.abs(fit.coefficients - beta) < 3 * fit.standard_errors)


@pytest.fixture(scope="module")
def cohort():
    return prepare_cohort(RunConfig(seed=4, synthetic={"n": 800, "missingness": {}}))


def _with_availability(cohort, outcome, available):
    subjects = []
    it = iter(available)
    for s in cohort.subjects:
        if s.eligible:
            coded = dict(s.coded_outcomes)
            coded[outcome] = coded[outcome] if next(it) else None
            s = replace(s, coded_outcomes=coded)
        subjects.append(s)
    return replace(cohort, subjects=tuple(subjects))


def test_propensity_scores_drop_dependent(cohort):
    subjects = cohort.eligible
    cm = covariate_matrix(subjects, cohort.spec)
    dup = replace(cm, values=np.column_stack([cm.values, cm.values[:, 0]]), columns=cm.columns + ("copy",))
    exposed = np.array([s.group == "football" for s in subjects])
    scores, fit = propensity_scores(dup, exposed, drop_dependent=True)
    assert fit.dropped == ("copy",)
    assert scores.shape == (len(subjects),)
    assert np.all((scores > 0) & (scores < 1))
    with pytest.raises(RankDeficientError):
        propensity_scores(dup, exposed)


@pytest.mark.slow
def test_attrition_null_coverage(cohort):
    rng = np.random.default_rng(99)
    n = len(cohort.eligible)
    covered = 0
    for _ in range(100):
        c = _with_availability(cohort, "pain", rng.random(n) < 0.7)
        table = attrition_analysis(c, "pain").report()
        row = table[table["term"] == "group[football]"].iloc[0]
        covered += row["lo"] <= 0 <= row["hi"]
    assert covered >= 93


def test_attrition_full_availability_is_degenerate(cohort):
    with pytest.raises(DegenerateResponseError):
        attrition_analysis(cohort, "pain")


def test_attrition_recovers_planted_model(cohort):
    eligible = cohort.eligible
    fb = np.array([s.group == "football" for s in eligible], dtype=float)
    rng = np.random.default_rng(8)
    available = rng.random(len(eligible)) < expit(0.5 - 0.8 * fb)
    res = attrition_analysis(_with_availability(cohort, "adl", available), "adl")
    t = res.report().set_index("term")
    assert abs(t.loc["group[football]", "coef"] + 0.8) < 3 * t.loc["group[football]", "se"]
    without = attrition_analysis(_with_availability(cohort, "adl", available), "adl", with_exposure=False)
    assert "group[football]" not in set(without.report()["term"])
    assert not without.report()["exposure_term"].any()


def test_attrition_unknown_outcome(cohort):
    with pytest.raises(ValueError):
        attrition_analysis(cohort, "height")
