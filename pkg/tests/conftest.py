import io
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cohort_matcher.cohort import CovariateSpec, Schema, SportSpec  # noqa: E402
from cohort_matcher.matcher import MatchedSet, Matching  # noqa: E402

OUTCOME_COLUMNS = {
    "self_rated_health": "srh",
    "pain": "pain",
    "adl": "adl",
    "cancer_dx": "cancer_dx",
    "cancer_icd9": "cancer_icd9",
    "max_weight": "max_weight",
    "max_weight_age": "max_weight_age",
    "height": "height",
}


def small_schema() -> Schema:
    return Schema(
        covariates=(
            CovariateSpec("srbmi", "continuous", "BMI", negative_missing=False, sentinels=("", "NA")),
            CovariateSpec("ixt06rer", "binary", "Smoked", sentinels=("-3", "")),
        ),
        sports=tuple(SportSpec(k, k) for k in ("football", "baseball", "hockey", "other")),
        outcome_columns=dict(OUTCOME_COLUMNS),
    )


BASE_ROW = {
    "subject_id": "s1",
    "yearbook_available": "1",
    "sport_info_available": "1",
    "sport_football": "0",
    "sport_baseball": "0",
    "sport_hockey": "0",
    "sport_other": "0",
    "srbmi": "0.1",
    "ixt06rer": "0",
    "srh": "good",
    "pain": "none",
    "adl": "none",
    "cancer_dx": "no",
    "cancer_icd9": "",
    "max_weight": "180",
    "max_weight_age": "40",
    "height": "70",
}


def csv_text(rows, drop=()) -> io.StringIO:
    cols = [c for c in BASE_ROW if c not in drop]
    lines = [",".join(cols)]
    for i, r in enumerate(rows):
        full = {**BASE_ROW, "subject_id": f"s{i + 1}", **r}
        lines.append(",".join(str(full[c]) for c in cols))
    return io.StringIO("\n".join(lines) + "\n")


def matching_from(sizes, prefix="") -> Matching:
    """Matching with one set per entry of ``sizes`` (number of controls)."""
    sets = []
    for n, k in enumerate(sizes):
        sets.append(MatchedSet(f"{prefix}e{n}", tuple(f"{prefix}c{n}_{j}" for j in range(k))))
    return Matching(tuple(sets))


@pytest.fixture
def schema():
    return small_schema()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
