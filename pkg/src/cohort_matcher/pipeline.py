"""End-to-end analysis: cohort, matching, balance, effects, sensitivity, attrition."""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .balance import BalanceRow, balance_table, max_abs_std_diff, pooled_sd
from .cohort import (
    CONTINUOUS_OUTCOMES,
    FOOTBALL,
    HARM_DIRECTION,
    NONSPORT_CONTROL,
    SPORT_CONTROL,
    Cohort,
    MissingnessStratum,
    Subject,
    apply_eligibility,
    code_outcomes,
    load_cohort,
    load_schema,
    stratify_by_missingness,
)
from .config import RunConfig
from .design import CovariateMatrix, covariate_matrix
from .distance import DistanceMatrix, apply_caliper, logit_scores, rank_mahalanobis_matrix
from .errors import CohortMatcherError, DegenerateResponseError, NumericalError, PipelineError
from .inference import (
    EffectEstimate,
    OrderedTestResult,
    conditional_logistic,
    fixed_effects_ols,
    ordered_test,
)
from .matcher import (
    ComparisonPlan,
    KSelection,
    Matching,
    build_comparisons,
    concat,
    select_K,
    variable_ratio_match,
)
from .propensity import AttritionResult, LogisticFit, attrition_analysis, propensity_scores
from .sensitivity import (
    SensitivityCurve,
    mh_sensitivity,
    mtest_sensitivity,
    residualize,
    sensitivity_curve,
)
from .report import ReportBundle, build_report
from .synthetic import simulate_frame


@dataclass
class ComparisonResult:
    plan: ComparisonPlan
    fit: LogisticFit | None = None
    selection: KSelection | None = None
    balance: list[BalanceRow] = field(default_factory=list)
    estimates: dict[str, EffectEstimate] = field(default_factory=dict)
    curves: dict[str, SensitivityCurve] = field(default_factory=dict)
    tests: dict[str, str] = field(default_factory=dict)
    note: str = ""

    @property
    def matching(self) -> Matching | None:
        return self.selection.matching if self.selection else None


@dataclass
class AnalysisResult:
    """Everything the report is built from. Fields fill in as stages finish."""

    config: RunConfig
    cohort: Cohort | None = None
    analysed_ids: tuple[str, ...] = ()
    dropped_primary: dict[str, int] = field(default_factory=dict)
    comparisons: dict[str, ComparisonResult] = field(default_factory=dict)
    ordered: dict[str, OrderedTestResult] = field(default_factory=dict)
    attrition: list[AttritionResult] = field(default_factory=list)
    attrition_notes: list[tuple[str, str, str]] = field(default_factory=list)
    failure: PipelineError | None = None


def _stage(module: str, context: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except (CohortMatcherError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise PipelineError(module, context, exc) from exc


def load_input(config: RunConfig) -> Cohort:
    """Cohort from ``config.input``, or a simulated one when no input is given."""
    if config.input:
        schema = load_schema(config.schema)
        return load_cohort(config.input, schema)
    frame, schema = simulate_frame(config.synthetic_spec(), config.seed)
    if config.schema:
        schema = load_schema(config.schema)
    buf = io.StringIO()
    frame.to_csv(buf, index=False, float_format="%.10g", na_rep="NA", lineterminator="\n")
    buf.seek(0)
    return load_cohort(buf, schema)


def prepare_cohort(config: RunConfig) -> Cohort:
    cohort = _stage("cohort", "load", load_input, config)
    cohort = _stage("cohort", "eligibility", apply_eligibility, cohort)
    return _stage("cohort", "code outcomes", code_outcomes, cohort)


def analysed_subjects(cohort: Cohort, primary: str) -> tuple[list[Subject], dict[str, int]]:
    """Eligible subjects with the primary outcome observed, plus drop counts by group."""
    keep, dropped = [], {FOOTBALL: 0, SPORT_CONTROL: 0, NONSPORT_CONTROL: 0}
    for s in cohort.eligible:
        if s.coded_outcomes.get(primary) is None:
            dropped[s.group] += 1
        else:
            keep.append(s)
    return keep, dropped


@dataclass
class _Design:
    cm: CovariateMatrix
    exposed: np.ndarray
    scores: dict[str, float]
    strata: list[tuple[str, list[str], list[str], DistanceMatrix]]


def _design(plan: ComparisonPlan, subjects: list[Subject], secondary: list[str], config: RunConfig, cohort: Cohort):
    cm = covariate_matrix(subjects, cohort.spec)
    exposed_set = set(plan.exposed_ids)
    exposed = np.array([s.id in exposed_set for s in subjects])
    p, fit = propensity_scores(cm, exposed, drop_dependent=True)
    scores = dict(zip(cm.ids, map(float, p)))
    sd = float(np.std(logit_scores(p), ddof=1)) if p.size > 1 else 0.0
    if secondary:
        strata = stratify_by_missingness(cohort, secondary, subjects)
    else:
        strata = [MissingnessStratum(frozenset(), cm.ids)]
    out = []
    for st in strata:
        ids = list(st.subject_ids)
        rows = cm.rows(ids)
        dm = rank_mahalanobis_matrix(cm.values[rows], exposed[rows], ids)
        dm = apply_caliper(dm, scores, config.caliper_width, config.caliper_penalty, sd=sd)
        e_ids = [i for i in ids if i in exposed_set]
        c_ids = [i for i in ids if i not in exposed_set]
        out.append((st.label(secondary) if secondary else "all", e_ids, c_ids, dm))
    return _Design(cm, exposed, scores, out), fit


def _balance_rows(matching: Matching, cm: CovariateMatrix, e_ids, c_ids, threshold) -> list[BalanceRow]:
    return balance_table(
        matching,
        cm.ids,
        cm.balance,
        e_ids,
        c_ids,
        cm.balance_columns,
        cm.balance_labels,
        cm.balance_kinds,
        threshold,
    )


def _worst_balance(matching, cm, plan_subjects, by_id, secondary, threshold) -> float:
    """Largest |std diff| after matching over all matched subjects and each secondary-outcome subset."""
    e_ids, c_ids = plan_subjects
    worst = max_abs_std_diff(_balance_rows(matching, cm, e_ids, c_ids, threshold))
    for o in secondary:
        keep = {i for i in cm.ids if by_id[i].coded_outcomes.get(o) is not None}
        sub = matching.restrict(keep)
        e_sub = [i for i in e_ids if i in keep]
        c_sub = [i for i in c_ids if i in keep]
        if not sub.sets or not e_sub or not c_sub:
            continue
        worst = max(worst, max_abs_std_diff(_balance_rows(sub, cm, e_sub, c_sub, threshold)))
    return worst


def _outcome_map(subjects, outcome: str) -> dict[str, float | None]:
    return {s.id: s.coded_outcomes.get(outcome) for s in subjects}


def _estimate(plan, matching, subjects, outcome):
    y = _outcome_map(subjects, outcome)
    if outcome in CONTINUOUS_OUTCOMES:
        ev = [y[i] for i in plan.exposed_ids if y.get(i) is not None]
        cv = [y[i] for i in plan.control_ids if y.get(i) is not None]
        sd = pooled_sd(np.array(ev), np.array(cv)) if ev and cv else 1.0
        return fixed_effects_ols(matching, y, sd, plan.name, outcome)
    return conditional_logistic(matching, y, plan.name, outcome)


def _curve(plan, matching, subjects, outcome, cm: CovariateMatrix, config: RunConfig) -> tuple[SensitivityCurve, str]:
    y = _outcome_map(subjects, outcome)
    alternative = HARM_DIRECTION.get(outcome, "greater")
    if outcome in CONTINUOUS_OUTCOMES:
        ids = [i for ms in matching.sets for i in ms.members if y.get(i) is not None]
        if len(ids) < 3:
            return SensitivityCurve(tuple(config.gammas), tuple(1.0 for _ in config.gammas), 1.0, "no data"), "m-test"
        x = cm.values[cm.rows(ids)]
        res = residualize(np.array([y[i] for i in ids]), x)
        rmap = dict(zip(ids, map(float, res)))

        def fn(g):
            return mtest_sensitivity(rmap, matching, g, alternative).p_upper

        return sensitivity_curve(fn, config.gammas, config.alpha), "m-test"

    def fn(g):
        return mh_sensitivity(matching, y, g, alternative, config.exact_max_sets, config.continuity).p_upper

    return sensitivity_curve(fn, config.gammas, config.alpha), "mantel-haenszel"


STAGES = ("match", "estimate", "sensitivity", "all")


def run_comparison(
    plan: ComparisonPlan,
    cohort: Cohort,
    subjects: list[Subject],
    config: RunConfig,
    through: str = "all",
    outcomes: tuple[str, ...] | None = None,
) -> ComparisonResult:
    """Match, check balance, estimate and bound one comparison.

    ``through`` stops after matching and balance ("match"), after effect
    estimates ("estimate") or runs everything. ``outcomes`` limits the
    estimates and sensitivity curves (matching always uses all configured
    outcomes).
    """
    result = ComparisonResult(plan)
    if plan.empty:
        result.note = "empty comparison: no exposed or no control subjects"
        return result
    primary = config.primary_outcome
    secondary = [o for o in config.outcomes if o != primary]
    ids = set(plan.subject_ids)
    members = [s for s in subjects if s.id in ids]
    by_id = {s.id: s for s in members}
    ctx = plan.name
    design, fit = _stage("propensity", ctx, _design, plan, members, secondary, config, cohort)
    result.fit = fit
    cm = design.cm

    caches = [{} for _ in design.strata]

    def match_all(K):
        parts = [
            variable_ratio_match(e, c, design.scores, dm, K, stratum=label, cache=cache)
            for (label, e, c, dm), cache in zip(design.strata, caches)
        ]
        return concat(parts)

    candidates, worst = {}, {}
    for K in config.k_range:
        candidates[K] = _stage("matcher", f"{ctx} K={K}", match_all, K)
        worst[K] = _stage(
            "balance",
            f"{ctx} K={K}",
            _worst_balance,
            candidates[K],
            cm,
            (plan.exposed_ids, plan.control_ids),
            by_id,
            secondary,
            config.balance_threshold,
        )
    result.selection = select_K(candidates, worst, config.balance_threshold)
    matching = result.selection.matching
    result.balance = _stage(
        "balance", ctx, _balance_rows, matching, cm, plan.exposed_ids, plan.control_ids, config.balance_threshold
    )
    if through == "match":
        return result
    for o in outcomes or config.outcomes:
        result.estimates[o] = _stage("inference", f"{ctx} {o}", _estimate, plan, matching, members, o)
        if through in ("sensitivity", "all"):
            result.curves[o], result.tests[o] = _stage(
                "sensitivity", f"{ctx} {o}", _curve, plan, matching, members, o, cm, config
            )
    return result


def _attrition(result: AnalysisResult, cohort: Cohort, config: RunConfig) -> None:
    for o in config.outcomes:
        for with_exposure in (True, False):
            variant = "with_exposure" if with_exposure else "without_exposure"
            try:
                result.attrition.append(attrition_analysis(cohort, o, with_exposure))
            except (DegenerateResponseError, NumericalError) as exc:
                result.attrition_notes.append((o, variant, str(exc)))


def run_analysis(
    config: RunConfig,
    on_failure: str = "raise",
    through: str = "all",
    outcomes: tuple[str, ...] | None = None,
) -> AnalysisResult:
    """Run the stages up to ``through``; on failure raise or return the partial result.

    ``through`` is one of "match", "estimate", "sensitivity", "attrition"
    (cohort and attrition models only) or "all". With
    ``on_failure="return"`` the :class:`PipelineError` is stored in
    ``failure`` and the stages completed so far are kept.
    """
    if through not in STAGES + ("attrition",):
        raise ValueError(f"unknown stage {through!r}")
    result = AnalysisResult(config)
    try:
        cohort = prepare_cohort(config)
        result.cohort = cohort
        subjects, result.dropped_primary = analysed_subjects(cohort, config.primary_outcome)
        result.analysed_ids = tuple(s.id for s in subjects)
        if through != "attrition":
            plans = {p.name: p for p in build_comparisons(subjects)}
            todo = [plans[name] for name in config.comparisons]
            args = (cohort, subjects, config, through, outcomes)
            if config.workers > 1 and len(todo) > 1:
                with ThreadPoolExecutor(max_workers=config.workers) as pool:
                    futures = [pool.submit(run_comparison, p, *args) for p in todo]
                    for p, fut in zip(todo, futures):
                        result.comparisons[p.name] = fut.result()
            else:
                for p in todo:
                    result.comparisons[p.name] = run_comparison(p, *args)
        if through not in ("match", "attrition"):
            _stage("inference", "ordered test", _ordered, result, config)
        if through in ("attrition", "all"):
            _stage("propensity", "attrition", _attrition, result, cohort, config)
    except PipelineError as exc:
        result.failure = exc
        if on_failure == "raise":
            raise
    return result


def _ordered(result: AnalysisResult, config: RunConfig) -> None:
    names = list(result.comparisons)
    if not names:
        return
    primary, *alternatives = names
    for o in config.outcomes:
        est = result.comparisons[primary].estimates.get(o)
        if est is None:
            continue
        alts = [result.comparisons[a].estimates[o] for a in alternatives if o in result.comparisons[a].estimates]
        tau0 = config.tau0
        if tau0 is not None and est.scale == "odds_ratio" and tau0 <= 0:
            raise ValueError("tau0 must be positive on the odds-ratio scale")
        result.ordered[o] = ordered_test(est, alts, tau0)


def rejects_null(est: EffectEstimate) -> bool:
    lo, hi = est.ci95
    null = 1.0 if est.scale == "odds_ratio" else 0.0
    return not (lo <= null <= hi)


def run_pipeline(
    config: RunConfig,
    out_dir: str | None = None,
    through: str = "all",
    outcomes: tuple[str, ...] | None = None,
) -> ReportBundle:
    """Run the analysis and build (and optionally write) the report bundle.

    On failure the partial bundle, whose manifest names the failing stage,
    is written first and the :class:`PipelineError` is then re-raised with
    the bundle attached as ``exc.bundle``.
    """
    result = run_analysis(config, on_failure="return", through=through, outcomes=outcomes)
    bundle = build_report(result)
    if out_dir is not None:
        bundle.write(out_dir)
    if result.failure is not None:
        result.failure.bundle = bundle
        raise result.failure
    return bundle
