"""Matched cohort analysis of exposure and late-life health in a WLS-style cohort."""

from .balance import BalanceRow, balance_table, std_diff
from .cohort import (
    Cohort,
    EligibilityRules,
    MissingnessStratum,
    Schema,
    Subject,
    apply_eligibility,
    code_outcomes,
    default_schema,
    load_cohort,
    load_schema,
    stratify_by_missingness,
    summarize,
)
from .config import RunConfig, load_config
from .distance import DistanceMatrix, apply_caliper, rank_mahalanobis, rank_mahalanobis_matrix
from .errors import (
    CohortMatcherError,
    ConfigError,
    DataError,
    NumericalError,
    PipelineError,
    RankDeficientError,
)
from .inference import (
    EffectEstimate,
    OrderedTestResult,
    classify_effect,
    conditional_logistic,
    fixed_effects_ols,
    ordered_test,
)
from .matcher import (
    ComparisonPlan,
    MatchedSet,
    Matching,
    build_comparisons,
    optimal_assignment,
    pair_match_discard,
    select_K,
    variable_ratio_match,
)
from .propensity import LogisticFit, attrition_analysis, fit_logistic, propensity_scores
from .sensitivity import (
    SensitivityCurve,
    find_gamma_star,
    mh_sensitivity,
    mtest_sensitivity,
    residualize,
)
from .synthetic import SyntheticSpec, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "BalanceRow",
    "Cohort",
    "CohortMatcherError",
    "ComparisonPlan",
    "ConfigError",
    "DataError",
    "DistanceMatrix",
    "EffectEstimate",
    "EligibilityRules",
    "LogisticFit",
    "MatchedSet",
    "Matching",
    "MissingnessStratum",
    "NumericalError",
    "OrderedTestResult",
    "PipelineError",
    "RankDeficientError",
    "RunConfig",
    "Schema",
    "SensitivityCurve",
    "Subject",
    "SyntheticSpec",
    "apply_caliper",
    "apply_eligibility",
    "attrition_analysis",
    "balance_table",
    "build_comparisons",
    "classify_effect",
    "code_outcomes",
    "conditional_logistic",
    "default_schema",
    "find_gamma_star",
    "fit_logistic",
    "fixed_effects_ols",
    "generate_synthetic",
    "load_cohort",
    "load_config",
    "load_schema",
    "mh_sensitivity",
    "mtest_sensitivity",
    "optimal_assignment",
    "ordered_test",
    "pair_match_discard",
    "propensity_scores",
    "rank_mahalanobis",
    "rank_mahalanobis_matrix",
    "residualize",
    "select_K",
    "std_diff",
    "stratify_by_missingness",
    "summarize",
    "variable_ratio_match",
]
