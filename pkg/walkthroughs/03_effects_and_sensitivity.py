"""Effect estimates, the ordered test and how robust a finding is.

We plant a real effect on maximum BMI in a synthetic cohort, run the full
analysis and read the results the way an analyst would: first the point
estimates, then whether the secondary comparisons were even eligible for
testing, then how much hidden bias it would take to explain the finding
away.

Run with ``python walkthroughs/03_effects_and_sensitivity.py``.
"""

import math

from cohort_matcher import RunConfig
from cohort_matcher.pipeline import run_analysis

config = RunConfig(seed=21, synthetic={"n": 3000, "effects": {"max_bmi": 1.5}})
result = run_analysis(config)

for name, comp in result.comparisons.items():
    print(f"\n{name}")
    for outcome, est in comp.estimates.items():
        lo, hi = est.ci95
        print(f"  {outcome:<20} {est.point:7.3f}  [{lo:7.3f}, {hi:7.3f}]  p={est.p_value:.3f}  {est.label}")

# The alternative comparisons are only tested when the primary interval
# rules out the null; otherwise they are reported without a test.
print()
for outcome, ot in result.ordered.items():
    state = "tested" if ot.alternatives_tested else "not tested"
    print(f"ordered test for {outcome}: alternatives {state}")

# Gamma* is the smallest bias in the odds of exposure that would make the
# one-sided p-value bound cross 0.05.
print()
for outcome, curve in result.comparisons["FB_vs_AC"].curves.items():
    star = "beyond range" if math.isinf(curve.gamma_star) else f"{curve.gamma_star:.3f}"
    print(f"Gamma* for {outcome}: {star} {curve.flag}")
