import math

import numpy as np
import pytest

from cohort_matcher.balance import balance_table
from cohort_matcher.cohort import OUTCOMES, apply_eligibility, load_cohort, summarize
from cohort_matcher.config import RunConfig
from cohort_matcher.design import covariate_matrix
from cohort_matcher.errors import ConfigError
from cohort_matcher.matcher import Matching
from cohort_matcher.pipeline import prepare_cohort
from cohort_matcher.synthetic import (
    WLS_FLOW_COUNTS,
    SPORT_ELIGIBLE,
    SPORT_INITIAL,
    OUTCOME_MISSING_RATES,
    SyntheticSpec,
    generate_synthetic,
    wls_cohort_frame,
    simulate_frame,
)


def test_missingness_rates_within_two_se():
    # ten cohorts pooled, so the check is on bias rather than on one draw
    missing = {o: 0 for o in OUTCOME_MISSING_RATES}
    total = 0
    for seed in range(10):
        eligible = prepare_cohort(RunConfig(seed=seed, synthetic={"n": 3355})).eligible
        total += len(eligible)
        for o in missing:
            missing[o] += sum(1 for s in eligible if s.coded_outcomes[o] is None)
    for o, rate in OUTCOME_MISSING_RATES.items():
        se = math.sqrt(rate * (1 - rate) / total)
        assert abs(missing[o] / total - rate) <= 2 * se, o


def test_missingness_shift_by_exposure():
    c = prepare_cohort(RunConfig(seed=1, synthetic={"n": 3000, "missing_exposure_shift": 1.0, "missingness": {"adl": 0.3}}))
    fb = [s for s in c.eligible if s.group == "football"]
    other = [s for s in c.eligible if s.group != "football"]
    miss = lambda g: np.mean([s.coded_outcomes["adl"] is None for s in g])  # noqa: E731
    assert miss(fb) > miss(other) + 0.1


@pytest.mark.slow
def test_zero_confounding_balanced_before_matching():
    below, total = 0, 0
    for seed in range(100):
        c = prepare_cohort(
            RunConfig(seed=seed, synthetic={"n": 2000, "confounding": {}, "sport_confounding": {}, "missingness": {}})
        )
        cm = covariate_matrix(c.eligible, c.spec)
        e = [s.id for s in c.eligible if s.group == "football"]
        k = [s.id for s in c.eligible if s.group != "football"]
        rows = balance_table(Matching(), cm.ids, cm.balance, e, k, cm.balance_columns)
        d = np.array([abs(r.std_diff_before) for r in rows])
        below += int((d < 0.1).sum())
        total += d.size
    assert below / total >= 0.95


def test_fixed_seed_identical_files(tmp_path):
    spec = SyntheticSpec(n=200)
    a = generate_synthetic(spec, 5, tmp_path / "a")
    b = generate_synthetic(spec, 5, tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()
    c = generate_synthetic(spec, 6, tmp_path / "c")
    assert c[0].read_bytes() != a[0].read_bytes()


def test_generated_file_loads(tmp_path):
    csv_path, schema_path = generate_synthetic(SyntheticSpec(n=150), 0, tmp_path)
    from cohort_matcher.cohort import load_schema

    cohort = load_cohort(csv_path, load_schema(schema_path))
    assert len(cohort.subjects) == 150


def test_group_proportions_follow_spec():
    frame, schema = simulate_frame(SyntheticSpec(n=4000, confounding={}, sport_confounding={}), 2)
    fb = frame["sport_football"].mean()
    assert abs(fb - 1259 / 3355) < 3 * math.sqrt(0.375 * 0.625 / 4000)


def test_effect_moves_outcome():
    base = prepare_cohort(RunConfig(seed=3, synthetic={"n": 3000, "missingness": {}}))
    hit = prepare_cohort(RunConfig(seed=3, synthetic={"n": 3000, "missingness": {}, "effects": {"max_bmi": 3.0}}))

    def gap(c):
        fb = [s.coded_outcomes["max_bmi"] for s in c.eligible if s.group == "football"]
        ot = [s.coded_outcomes["max_bmi"] for s in c.eligible if s.group != "football"]
        return np.mean(fb) - np.mean(ot)

    assert gap(hit) - gap(base) == pytest.approx(3.0, abs=0.5)


@pytest.mark.parametrize(
    "bad",
    [
        {"n": 0},
        {"missingness": {"height": 0.1}},
        {"missingness": {"pain": 1.5}},
        {"covariate_missing_rate": -0.1},
        {"group_proportions": (0.5, 0.6, 0.2)},
    ],
)
def test_bad_specs_rejected(bad):
    with pytest.raises(ConfigError):
        SyntheticSpec(**bad)


def test_wls_flow_counts_reproduced():
    frame = wls_cohort_frame()
    import io

    buf = io.StringIO()
    frame.to_csv(buf, index=False, na_rep="NA")
    buf.seek(0)
    c = apply_eligibility(load_cohort(buf))
    rec = {r.rule: r.excluded for r in c.provenance}
    assert rec["no_yearbook"] == WLS_FLOW_COUNTS["no_yearbook"]
    assert rec["no_sport_info"] == WLS_FLOW_COUNTS["no_sport_info"]
    assert rec["collision_sport"] + rec["other_sport"] == WLS_FLOW_COUNTS["sport_exclusions"]
    sports = summarize(c).sports.set_index("Sport")
    labels = {s.key: s.label for s in c.schema.sports}
    for key, n in SPORT_INITIAL.items():
        assert sports.loc[labels[key], "Initial Pool"] == n
    for key, (f, sc) in SPORT_ELIGIBLE.items():
        assert sports.loc[labels[key], "Eligible Football Players"] == f
        assert sports.loc[labels[key], "Eligible Sport Controls"] == sc


def test_all_outcomes_present_when_no_missingness():
    c = prepare_cohort(RunConfig(seed=0, synthetic={"n": 300, "missingness": {}}))
    for o in OUTCOMES:
        assert all(s.coded_outcomes[o] is not None for s in c.eligible)
