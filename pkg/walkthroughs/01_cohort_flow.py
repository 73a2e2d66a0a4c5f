"""From raw survey rows to an analysis cohort.

We simulate a cohort whose counts reproduce the WLS cohort flow, write
it to CSV the way a real extract would arrive, then load it, apply the
eligibility rules in order and look at who is left.

Run with ``python walkthroughs/01_cohort_flow.py``.
"""

import tempfile
from pathlib import Path

from cohort_matcher import apply_eligibility, code_outcomes, load_cohort, summarize
from cohort_matcher.cohort import missing_outcome_table
from cohort_matcher.synthetic import wls_cohort_frame, write_frame

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "cohort.csv"
    write_frame(wls_cohort_frame(seed=0), path)
    cohort = load_cohort(path)

print(f"loaded {len(cohort.subjects)} graduates")

# Each rule only sees the subjects that survived the rules before it, so the
# order matters: a man with no yearbook is never asked about his sports.
cohort = code_outcomes(apply_eligibility(cohort))
cohort.check_conservation()

summary = summarize(cohort)
print("\nexclusions")
print(summary.exclusions.to_string(index=False))
print("\ngroups")
print(summary.groups.to_string(index=False))

# Football players usually played other sports too, so the per-sport counts
# overlap; they are a description of the pool, not a partition of it.
print("\nsport participation")
print(summary.sports.to_string(index=False))

# Outcomes are coded from the raw responses. Missing values stay missing,
# and the analysis later drops subjects without the primary outcome.
print("\nmissing outcomes among the eligible")
print(missing_outcome_table(cohort).to_string(index=False))
