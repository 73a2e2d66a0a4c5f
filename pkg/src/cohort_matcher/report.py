"""Report bundle: CSV tables, a Markdown summary and a manifest with schema checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import pandas as pd

from .balance import balance_frame, balance_markdown
from .cohort import OUTCOME_LABELS, missing_outcome_table, summarize
from .inference import classify_effect
from .matcher import COMPARISON_SLUGS

if TYPE_CHECKING:
    from .pipeline import AnalysisResult, ComparisonResult

SLUGS = {v: k for k, v in COMPARISON_SLUGS.items()}
FLOAT_FORMAT = "%.10g"

SCHEMAS = {
    "sport_participation": ["Sport", "Initial Pool", "Eligible Football Players", "Eligible Sport Controls"],
    "eligibility": ["Rule", "N", "Percent of initial"],
    "groups": ["Group", "N", "Percent"],
    "missing_outcomes": ["Outcome", "Total", "FB", "Sport Controls", "Non-sport Controls"],
    "primary_outcome_drops": ["Group", "Dropped"],
    "k_selection": ["comparison", "K", "n_matched", "n_sets", "max_abs_std_diff", "balanced", "selected"],
    "matching": ["set_id", "role", "subject_id", "block_k", "stratum"],
    "results": ["comparison", "outcome", "scale", "point", "lo", "hi", "p", "n_sets", "flag"],
    "ordered_tests": ["outcome", "tau0", "primary_lo", "primary_hi", "alternatives_tested", "comparison", "decision"],
    "sensitivity_curves": ["comparison", "outcome", "test", "gamma", "p_upper"],
    "gamma_star": ["comparison", "outcome", "test", "gamma_star", "flag"],
    "propensity": ["comparison", "term", "coef", "se", "lo", "hi", "odds_ratio", "p"],
    "attrition": ["outcome", "variant", "term", "coef", "se", "lo", "hi", "odds_ratio", "p", "exposure_term"],
}


# Subjects without self-rated health in the WLS eligible pool. The quoted
# control total and the per-group counts disagree by two.
REFERENCE_SRH_DROPS = {"football": 334, "controls_stated": 573, "sport_control": 176, "nonsport_control": 399}


def balance_columns(exposed_label: str, control_label: str) -> list[str]:
    return [
        "Variable",
        f"Before {exposed_label}",
        f"Before {control_label}",
        f"After {exposed_label}",
        f"After {control_label}",
        "Std. Diff. Before",
        "Std. Diff. After",
        "Flag Before",
        "Flag After",
    ]


@dataclass
class ReportTable:
    name: str
    role: str
    frame: pd.DataFrame
    expected_columns: list[str]
    min_rows: int = 0

    @property
    def filename(self) -> str:
        return f"{self.name}.csv"

    def check(self) -> list[str]:
        problems = []
        if list(self.frame.columns) != list(self.expected_columns):
            problems.append(f"columns {list(self.frame.columns)} != {list(self.expected_columns)}")
        if len(self.frame) < self.min_rows:
            problems.append(f"{len(self.frame)} rows < {self.min_rows}")
        return problems


@dataclass
class ReportBundle:
    tables: list[ReportTable] = field(default_factory=list)
    markdown: str = ""
    status: str = "complete"
    failure: dict | None = None
    config: dict = field(default_factory=dict)

    def table(self, name: str) -> pd.DataFrame:
        for t in self.tables:
            if t.name == name:
                return t.frame
        raise KeyError(name)

    def manifest(self) -> dict:
        return {
            "status": self.status,
            "failed_at": self.failure,
            "config": self.config,
            "tables": [
                {
                    "name": t.name,
                    "file": t.filename,
                    "role": t.role,
                    "columns": list(t.frame.columns),
                    "rows": int(len(t.frame)),
                    "schema_ok": not t.check(),
                    "problems": t.check(),
                }
                for t in self.tables
            ],
            "report": "report.md",
        }

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t in self.tables:
            t.frame.to_csv(out / t.filename, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        (out / "report.md").write_text(self.markdown)
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return out


# Table builders --------------------------------------------------------------


def composition_frame(result: "AnalysisResult") -> pd.DataFrame:
    """Count of matched sets by number of controls (rows 1:1 .. 1:7 at least)."""
    comps = [(name, c) for name, c in result.comparisons.items()]
    largest = 7
    for _, c in comps:
        if c.matching and c.matching.sets:
            largest = max(largest, max(c.matching.composition()))
    rows = []
    for j in range(1, largest + 1):
        row = {"Composition": f"1:{j}"}
        for _, c in comps:
            row[c.plan.title] = int(c.matching.composition().get(j, 0)) if c.matching else 0
        rows.append(row)
    return pd.DataFrame(rows, columns=["Composition"] + [c.plan.title for _, c in comps])


def results_frame(result: "AnalysisResult") -> pd.DataFrame:
    rows = []
    flags = {}
    for o, ot in result.ordered.items():
        for est in ot.estimates:
            flags[(est.comparison, o)] = est.multiplicity_flag
    for name, c in result.comparisons.items():
        for o, est in c.estimates.items():
            rows.append(
                {
                    "comparison": name,
                    "outcome": o,
                    "scale": est.scale,
                    "point": est.point,
                    "lo": est.ci95[0],
                    "hi": est.ci95[1],
                    "p": est.p_value,
                    "n_sets": est.n_sets,
                    "flag": flags.get((name, o), est.multiplicity_flag) or "",
                }
            )
    return pd.DataFrame(rows, columns=SCHEMAS["results"])


def k_selection_frame(result: "AnalysisResult") -> pd.DataFrame:
    rows = []
    for name, c in result.comparisons.items():
        if c.selection is None:
            continue
        for r in c.selection.table:
            rows.append({"comparison": name, **r, "selected": r["K"] == c.selection.K})
    return pd.DataFrame(rows, columns=SCHEMAS["k_selection"])


def ordered_frame(result: "AnalysisResult") -> pd.DataFrame:
    rows = []
    for o, ot in result.ordered.items():
        for comp, decision in ot.decisions.items():
            rows.append(
                {
                    "outcome": o,
                    "tau0": ot.tau0,
                    "primary_lo": ot.primary_ci[0],
                    "primary_hi": ot.primary_ci[1],
                    "alternatives_tested": ot.alternatives_tested,
                    "comparison": comp,
                    "decision": decision,
                }
            )
    return pd.DataFrame(rows, columns=SCHEMAS["ordered_tests"])


def sensitivity_frames(result: "AnalysisResult") -> tuple[pd.DataFrame, pd.DataFrame]:
    curve_rows, star_rows = [], []
    for name, c in result.comparisons.items():
        for o, curve in c.curves.items():
            test = c.tests.get(o, "")
            for g, p in curve.rows():
                curve_rows.append({"comparison": name, "outcome": o, "test": test, "gamma": g, "p_upper": p})
            star_rows.append(
                {"comparison": name, "outcome": o, "test": test, "gamma_star": curve.gamma_star, "flag": curve.flag}
            )
    return (
        pd.DataFrame(curve_rows, columns=SCHEMAS["sensitivity_curves"]),
        pd.DataFrame(star_rows, columns=SCHEMAS["gamma_star"]),
    )


def propensity_frame(result: "AnalysisResult") -> pd.DataFrame:
    parts = []
    for name, c in result.comparisons.items():
        if c.fit is None:
            continue
        s = c.fit.summary()
        s.insert(0, "comparison", name)
        parts.append(s)
    if not parts:
        return pd.DataFrame(columns=SCHEMAS["propensity"])
    return pd.concat(parts, ignore_index=True)[SCHEMAS["propensity"]]


def attrition_frame(result: "AnalysisResult") -> pd.DataFrame:
    parts = [a.report() for a in result.attrition]
    if not parts:
        return pd.DataFrame(columns=SCHEMAS["attrition"])
    return pd.concat(parts, ignore_index=True)[SCHEMAS["attrition"]]


def build_tables(result: "AnalysisResult") -> list[ReportTable]:
    tables: list[ReportTable] = []
    if result.cohort is None:
        return tables
    summary = summarize(result.cohort)
    tables.append(ReportTable("sport_participation", "sport participation by group", summary.sports, SCHEMAS["sport_participation"], 1))
    tables.append(ReportTable("eligibility", "eligibility exclusions", summary.exclusions, SCHEMAS["eligibility"], 1))
    tables.append(ReportTable("groups", "eligible groups", summary.groups, SCHEMAS["groups"], 5))
    tables.append(
        ReportTable(
            "missing_outcomes",
            "missing outcomes by group",
            missing_outcome_table(result.cohort, result.config.outcomes),
            SCHEMAS["missing_outcomes"],
            len(result.config.outcomes),
        )
    )
    drops = pd.DataFrame(
        [(g, n) for g, n in result.dropped_primary.items()], columns=SCHEMAS["primary_outcome_drops"]
    )
    tables.append(ReportTable("primary_outcome_drops", "subjects without the primary outcome", drops, SCHEMAS["primary_outcome_drops"]))
    if not result.comparisons:
        return tables
    for name, c in result.comparisons.items():
        slug = SLUGS[name]
        if c.matching is None:
            continue
        cols = balance_columns(c.plan.exposed_label, c.plan.control_label)
        frame = balance_frame(c.balance, c.plan.exposed_label, c.plan.control_label)
        tables.append(ReportTable(f"balance_{slug}", f"covariate balance {c.plan.title}", frame, cols, 1))
        mframe = pd.DataFrame(c.matching.rows(), columns=SCHEMAS["matching"])
        tables.append(ReportTable(f"matching_{slug}", f"matched sets {c.plan.title}", mframe, SCHEMAS["matching"]))
    comp = composition_frame(result)
    tables.append(
        ReportTable(
            "composition",
            "matched-set composition",
            comp,
            ["Composition"] + [c.plan.title for c in result.comparisons.values()],
            7,
        )
    )
    tables.append(ReportTable("k_selection", "choice of maximum ratio K", k_selection_frame(result), SCHEMAS["k_selection"]))
    tables.append(ReportTable("propensity", "propensity models", propensity_frame(result), SCHEMAS["propensity"]))
    tables.append(ReportTable("results", "effect estimates", results_frame(result), SCHEMAS["results"]))
    tables.append(ReportTable("ordered_tests", "ordered testing across control groups", ordered_frame(result), SCHEMAS["ordered_tests"]))
    curves, stars = sensitivity_frames(result)
    tables.append(ReportTable("sensitivity_curves", "sensitivity p-value bounds", curves, SCHEMAS["sensitivity_curves"]))
    tables.append(ReportTable("gamma_star", "sensitivity values", stars, SCHEMAS["gamma_star"]))
    if result.attrition or result.attrition_notes:
        tables.append(ReportTable("attrition", "outcome attrition models", attrition_frame(result), SCHEMAS["attrition"]))
    return tables


# Markdown ---------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return ""
        return f"{v:.4g}"
    return str(v)


def md_table(frame: pd.DataFrame) -> str:
    cols = list(frame.columns)
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for row in frame.itertuples(index=False):
        lines.append("| " + " | ".join(_cell(v) for v in row) + " |")
    return "\n".join(lines)


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.3f}"


def _comparison_md(c: "ComparisonResult") -> list[str]:
    out = [f"## {c.plan.title}", ""]
    if c.note:
        out += [c.note, ""]
    if c.matching is None:
        return out
    fit = c.fit
    if fit is not None:
        extra = []
        if fit.separation:
            extra.append(f"separation detected, ridge {fit.ridge:g}")
        if fit.dropped:
            extra.append("collinear columns dropped: " + ", ".join(fit.dropped))
        out += [
            f"Propensity model: {len(fit.columns)} terms, converged={fit.converged}, "
            f"iterations={fit.iterations}" + ("; " + "; ".join(extra) if extra else "") + ".",
            "",
        ]
    sel = c.selection
    status = "balanced" if sel.balanced else "no K reached balance; best-balance K used"
    out += [f"Selected K = {sel.K} ({status}); {sel.matching.n_matched} subjects in {len(sel.matching.sets)} sets.", ""]
    out += ["### Covariate balance", ""]
    out += [balance_markdown(balance_frame(c.balance, c.plan.exposed_label, c.plan.control_label)), ""]
    out += ["### Effects", ""]
    rows = []
    for o, est in c.estimates.items():
        rows.append(
            {
                "Outcome": OUTCOME_LABELS.get(o, o),
                "Scale": "OR" if est.scale == "odds_ratio" else "SD",
                "Estimate": _fmt(est.point),
                "95% CI": f"({_fmt(est.ci95[0])}, {_fmt(est.ci95[1])})",
                "p": f"{est.p_value:.4f}",
                "Sets": est.n_sets,
                "Size": classify_effect(est),
                "Note": est.note,
            }
        )
    out += [md_table(pd.DataFrame(rows)), ""]
    out += ["### Sensitivity", ""]
    rows = [
        {
            "Outcome": OUTCOME_LABELS.get(o, o),
            "Test": c.tests.get(o, ""),
            "p at Gamma=1": f"{curve.p_upper[0]:.4f}" if curve.gammas and curve.gammas[0] == 1.0 else "",
            "Gamma*": _fmt(curve.gamma_star),
            "Flag": curve.flag,
        }
        for o, curve in c.curves.items()
    ]
    out += [md_table(pd.DataFrame(rows)), ""]
    return out


def build_markdown(result: "AnalysisResult", tables: list[ReportTable], failure: dict | None) -> str:
    by_name = {t.name: t.frame for t in tables}
    out = ["# Matched cohort analysis", ""]
    if failure:
        out += [
            f"**Run failed** in `{failure['module']}` ({failure['context']}): {failure['error']}",
            "",
            "Tables below cover the stages that finished.",
            "",
        ]
    if "eligibility" in by_name:
        out += ["## Cohort", "", md_table(by_name["eligibility"]), "", md_table(by_name["groups"]), ""]
        out += ["### Sport participation", "", md_table(by_name["sport_participation"]), ""]
        out += ["### Missing outcomes", "", md_table(by_name["missing_outcomes"]), ""]
        d = result.dropped_primary
        if d:
            fb = d.get("football", 0)
            ctrl = d.get("sport_control", 0) + d.get("nonsport_control", 0)
            primary = OUTCOME_LABELS.get(result.config.primary_outcome, result.config.primary_outcome)
            out += [
                f"Subjects without {primary} are not analysed: {fb} football players and "
                f"{ctrl} controls ({d.get('sport_control', 0)} sport, {d.get('nonsport_control', 0)} non-sport).",
                "",
            ]
            if result.config.primary_outcome == "self_rated_health":
                ref = REFERENCE_SRH_DROPS
                out += [
                    f"Reference WLS figures for comparison: {ref['football']} football players and "
                    f"{ref['controls_stated']} controls are quoted as lacking this outcome, but the per-group "
                    f"counts ({ref['sport_control']} sport, {ref['nonsport_control']} non-sport) sum to "
                    f"{ref['sport_control'] + ref['nonsport_control']}. The two control totals disagree; "
                    "the counts above are computed from the data and the disagreement is left unresolved.",
                    "",
                ]
    for c in result.comparisons.values():
        out += _comparison_md(c)
    if "composition" in by_name:
        out += ["## Matched-set composition", "", md_table(by_name["composition"]), ""]
    if result.ordered:
        out += ["## Ordered testing", ""]
        for o, ot in result.ordered.items():
            state = "tested" if ot.alternatives_tested else "not formally tested (estimates unadjusted)"
            out.append(
                f"- {OUTCOME_LABELS.get(o, o)}: tau0 = {ot.tau0:g}, primary CI "
                f"({_fmt(ot.primary_ci[0])}, {_fmt(ot.primary_ci[1])}); alternative comparisons {state}."
            )
        out.append("")
    if result.attrition or result.attrition_notes:
        out += ["## Attrition", ""]
        if "attrition" in by_name:
            frame = by_name["attrition"]
            frame = frame[frame["exposure_term"]][["outcome", "term", "odds_ratio", "lo", "hi", "p"]]
            out += [md_table(frame), ""]
        for o, variant, msg in result.attrition_notes:
            out.append(f"- {o} ({variant}): not fitted, {msg}")
        if result.attrition_notes:
            out.append("")
    return "\n".join(out).rstrip() + "\n"


def build_report(result: "AnalysisResult") -> ReportBundle:
    failure = None
    if result.failure is not None:
        f = result.failure
        failure = {"module": f.module, "context": f.context, "error": str(f.cause)}
    tables = build_tables(result)
    cfg = result.config.to_dict()
    cfg.pop("out", None)
    return ReportBundle(
        tables=tables,
        markdown=build_markdown(result, tables, failure),
        status="failed" if failure else "complete",
        failure=failure,
        config=cfg,
    )
