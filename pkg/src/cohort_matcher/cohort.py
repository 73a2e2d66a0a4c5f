"""Cohort ingestion, eligibility filtering, outcome coding and missingness strata."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import pandas as pd
import yaml

from .errors import CodingError, ConfigError, IntegrityError, SchemaError

FOOTBALL = "football"
SPORT_CONTROL = "sport_control"
NONSPORT_CONTROL = "nonsport_control"
EXCLUDED = "excluded"
GROUPS = (FOOTBALL, SPORT_CONTROL, NONSPORT_CONTROL)

COVARIATE_KINDS = ("binary", "continuous", "ordinal", "categorical")

OUTCOMES = ("self_rated_health", "pain", "adl", "cancer", "max_bmi")
PRIMARY_OUTCOME = "self_rated_health"
SECONDARY_OUTCOMES = OUTCOMES[1:]
CONTINUOUS_OUTCOMES = ("max_bmi",)
OUTCOME_LABELS = {
    "self_rated_health": "Self-rated Health",
    "pain": "Pain Limits Activities",
    "adl": "ADL Difficulty",
    "cancer": "Cancer",
    "max_bmi": "Max Adult BMI",
}
# Direction in which the outcome indicates worse health among the exposed.
HARM_DIRECTION = {
    "self_rated_health": "less",
    "pain": "greater",
    "adl": "greater",
    "cancer": "greater",
    "max_bmi": "greater",
}

SELF_RATED_HEALTH_CODES = {"excellent": 1, "very good": 1, "good": 1, "fair": 0, "poor": 0}
PAIN_CODES = {"none": 0, "a few": 0, "some": 1, "most": 1, "all": 1}
ADL_CODES = {"none": 0, "any": 1}
CANCER_DX_CODES = {"no": 0, "yes": 1, "0": 0, "1": 1}

RULE_ORDER = ("no_yearbook", "no_sport_info", "collision_sport", "other_sport")


@dataclass(frozen=True)
class CovariateSpec:
    id: str
    kind: str
    label: str
    levels: tuple[str, ...] = ()
    sentinels: tuple[str, ...] | None = None
    negative_missing: bool | None = None

    def __post_init__(self):
        if self.kind not in COVARIATE_KINDS:
            raise ConfigError(f"covariate {self.id!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and not self.levels:
            raise ConfigError(f"categorical covariate {self.id!r} must list its levels")


@dataclass(frozen=True)
class SportSpec:
    key: str
    label: str

    @property
    def column(self) -> str:
        return f"sport_{self.key}"


@dataclass(frozen=True)
class Schema:
    """Column layout of a cohort file."""

    covariates: tuple[CovariateSpec, ...]
    sports: tuple[SportSpec, ...]
    id_column: str = "subject_id"
    yearbook_column: str = "yearbook_available"
    sport_info_column: str = "sport_info_available"
    football_sport: str = "football"
    collision_sports: tuple[str, ...] = ("hockey", "wrestling")
    other_sports: tuple[str, ...] = ("other",)
    default_sentinels: tuple[str, ...] = ("", "NA", "NaN", "nan", ".")
    default_negative_missing: bool = True
    outcome_columns: Mapping[str, str] = field(default_factory=dict)
    smoking_icd9_exclusions: tuple[str, ...] = ("162", "188")
    min_adult_age: float = 18.0

    def __post_init__(self):
        ids = [c.id for c in self.covariates]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ConfigError(f"duplicate covariate ids in schema: {dupes}")

    @property
    def covariate_ids(self) -> list[str]:
        return [c.id for c in self.covariates]

    def covariate(self, cid: str) -> CovariateSpec:
        for c in self.covariates:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def restrict(self, covariate_ids: Iterable[str]) -> "Schema":
        keep = set(covariate_ids)
        return replace(self, covariates=tuple(c for c in self.covariates if c.id in keep))

    def required_columns(self) -> list[str]:
        cols = [self.id_column, self.yearbook_column, self.sport_info_column]
        cols += [s.column for s in self.sports]
        cols += self.covariate_ids
        cols += list(self.outcome_columns.values())
        return cols

    def to_dict(self) -> dict:
        covs = []
        for c in self.covariates:
            d = {"id": c.id, "kind": c.kind, "label": c.label}
            if c.levels:
                d["levels"] = list(c.levels)
            if c.sentinels is not None:
                d["sentinels"] = list(c.sentinels)
            if c.negative_missing is not None:
                d["negative_missing"] = c.negative_missing
            covs.append(d)
        outcomes = {f"{k}_column": v for k, v in self.outcome_columns.items()}
        outcomes["smoking_icd9_exclusions"] = list(self.smoking_icd9_exclusions)
        outcomes["min_adult_age"] = self.min_adult_age
        return {
            "id_column": self.id_column,
            "yearbook_column": self.yearbook_column,
            "sport_info_column": self.sport_info_column,
            "default_sentinels": list(self.default_sentinels),
            "default_negative_missing": self.default_negative_missing,
            "sports": [{"key": s.key, "label": s.label} for s in self.sports],
            "football_sport": self.football_sport,
            "collision_sports": list(self.collision_sports),
            "other_sports": list(self.other_sports),
            "covariates": covs,
            "outcomes": outcomes,
        }


_OUTCOME_COLUMN_KEYS = (
    "self_rated_health",
    "pain",
    "adl",
    "cancer_dx",
    "cancer_icd9",
    "max_weight",
    "max_weight_age",
    "height",
)


def schema_from_dict(raw: Mapping) -> Schema:
    try:
        covariates = tuple(
            CovariateSpec(
                id=str(c["id"]),
                kind=str(c["kind"]),
                label=str(c.get("label", c["id"])),
                levels=tuple(str(v) for v in c.get("levels", ())),
                sentinels=None if "sentinels" not in c else tuple(str(s) for s in c["sentinels"]),
                negative_missing=c.get("negative_missing"),
            )
            for c in raw["covariates"]
        )
        sports = tuple(SportSpec(str(s["key"]), str(s.get("label", s["key"]))) for s in raw["sports"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed schema: {exc!r}") from exc
    out = raw.get("outcomes", {}) or {}
    outcome_columns = {k: str(out.get(f"{k}_column", k)) for k in _OUTCOME_COLUMN_KEYS}
    kwargs = {}
    for key in ("id_column", "yearbook_column", "sport_info_column", "football_sport"):
        if key in raw:
            kwargs[key] = str(raw[key])
    for key in ("collision_sports", "other_sports", "default_sentinels"):
        if key in raw:
            kwargs[key] = tuple(str(v) for v in raw[key])
    if "default_negative_missing" in raw:
        kwargs["default_negative_missing"] = bool(raw["default_negative_missing"])
    if "smoking_icd9_exclusions" in out:
        kwargs["smoking_icd9_exclusions"] = tuple(str(v) for v in out["smoking_icd9_exclusions"])
    if "min_adult_age" in out:
        kwargs["min_adult_age"] = float(out["min_adult_age"])
    return Schema(covariates=covariates, sports=sports, outcome_columns=outcome_columns, **kwargs)


def load_schema(path: str | Path | None = None) -> Schema:
    """Read a YAML schema file; ``None`` gives the bundled WLS schema."""
    if path is None:
        return _bundled_schema()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read schema file {path}: {exc}") from exc
    return _parse_schema(text)


@lru_cache(maxsize=1)
def _bundled_schema() -> Schema:
    return _parse_schema(resources.files("cohort_matcher").joinpath("data/wls_schema.yaml").read_text())


def _parse_schema(text: str) -> Schema:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"schema file is not valid YAML: {exc}") from exc
    return schema_from_dict(raw)


def default_schema() -> Schema:
    return load_schema(None)


def save_schema(schema: Schema, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(schema.to_dict(), sort_keys=False))


@dataclass(frozen=True)
class Subject:
    id: str
    group: str
    covariates: Mapping[str, float | str | None]
    raw_outcomes: Mapping[str, str | None]
    coded_outcomes: Mapping[str, float | None] = field(default_factory=dict)
    sports: frozenset[str] = frozenset()
    yearbook: bool = True
    sport_info: bool = True
    exclusion: str | None = None

    @property
    def eligible(self) -> bool:
        return self.group != EXCLUDED

    @property
    def natural_group(self) -> str:
        """Group implied by sport participation, ignoring exclusions."""
        return _group_from_sports(self.sports)


@dataclass(frozen=True)
class ExclusionRecord:
    rule: str
    excluded: int


@dataclass(frozen=True)
class Cohort:
    schema: Schema
    subjects: tuple[Subject, ...]
    provenance: tuple[ExclusionRecord, ...] = ()

    @property
    def spec(self) -> tuple[CovariateSpec, ...]:
        return self.schema.covariates

    @cached_property
    def eligible(self) -> tuple[Subject, ...]:
        return tuple(s for s in self.subjects if s.eligible)

    @cached_property
    def by_id(self) -> dict[str, Subject]:
        return {s.id: s for s in self.subjects}

    def initial_count(self) -> int:
        return len(self.subjects)

    def check_conservation(self) -> None:
        excluded = sum(r.excluded for r in self.provenance)
        if excluded + len(self.eligible) != len(self.subjects):
            raise IntegrityError(
                f"exclusion counts ({excluded}) + eligible ({len(self.eligible)}) "
                f"!= initial ({len(self.subjects)})"
            )

    def subset(self, ids: Iterable[str]) -> tuple[Subject, ...]:
        return tuple(self.by_id[i] for i in ids)


@dataclass(frozen=True)
class MissingnessStratum:
    outcome_pattern: frozenset[str]
    subject_ids: tuple[str, ...]

    def label(self, outcomes: Sequence[str] = OUTCOMES) -> str:
        present = [o for o in outcomes if o in self.outcome_pattern]
        return "+".join(present) if present else "none"


def _group_from_sports(sports: frozenset[str], football: str = "football") -> str:
    if football in sports:
        return FOOTBALL
    if sports:
        return SPORT_CONTROL
    return NONSPORT_CONTROL


def _is_missing(cell: str, sentinels: Sequence[str], negative_missing: bool) -> bool:
    text = cell.strip()
    if text in sentinels:
        return True
    if negative_missing:
        try:
            return float(text) < 0
        except ValueError:
            return False
    return False


def _parse_covariate(spec: CovariateSpec, cell: str, schema: Schema):
    sentinels = spec.sentinels if spec.sentinels is not None else schema.default_sentinels
    negative = (
        spec.negative_missing if spec.negative_missing is not None else schema.default_negative_missing
    )
    if _is_missing(cell, sentinels, negative):
        return None
    text = cell.strip()
    if spec.kind == "categorical":
        lookup = {lvl.lower(): lvl for lvl in spec.levels}
        return lookup.get(text.lower())
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    if spec.kind == "binary" and value not in (0.0, 1.0):
        return None
    return value


def _flag(cell: str | None) -> bool:
    if cell is None:
        return False
    text = cell.strip().lower()
    if text in ("1", "1.0", "true", "yes", "y"):
        return True
    return False


def _read_rows(fh: IO[str], schema: Schema) -> list[dict[str, str]]:
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    for col in schema.required_columns():
        if col not in header:
            raise SchemaError(f"missing required column {col!r}", column=col)
    return list(reader)


def load_cohort(source: str | Path | IO[str], schema: Schema | None = None) -> Cohort:
    """Read a cohort CSV (path or open text stream) into a :class:`Cohort`.

    Cells equal to a sentinel code, unparseable numbers and categorical values
    outside the declared levels all become ``None``.
    """
    schema = schema or default_schema()
    if hasattr(source, "read"):
        rows = _read_rows(source, schema)
    else:
        path = Path(source)
        if not path.exists():
            raise SchemaError(f"cohort file not found: {path}")
        with path.open(newline="") as fh:
            rows = _read_rows(fh, schema)

    subjects = []
    seen = set()
    parsed: dict[tuple[str, str], object] = {}  # survey codes repeat, so parse each once
    oc = schema.outcome_columns
    for row in rows:
        sid = row[schema.id_column].strip()
        if sid in seen:
            raise IntegrityError(f"duplicate subject id {sid!r}")
        seen.add(sid)
        covs = {}
        for c in schema.covariates:
            key = (c.id, row[c.id])
            if key not in parsed:
                parsed[key] = _parse_covariate(c, row[c.id], schema)
            covs[c.id] = parsed[key]
        raw = {}
        for key, col in oc.items():
            cell = row[col]
            raw[key] = None if cell.strip() in schema.default_sentinels else cell.strip()
        sports = frozenset(s.key for s in schema.sports if _flag(row[s.column]))
        subjects.append(
            Subject(
                id=sid,
                group=_group_from_sports(sports, schema.football_sport),
                covariates=covs,
                raw_outcomes=raw,
                sports=sports,
                yearbook=_flag(row[schema.yearbook_column]),
                sport_info=_flag(row[schema.sport_info_column]),
            )
        )
    return Cohort(schema=schema, subjects=tuple(subjects))


@dataclass(frozen=True)
class EligibilityRules:
    """Ordered exclusion rules; the first rule that fires is recorded."""

    rules: tuple[str, ...] = RULE_ORDER

    def __post_init__(self):
        unknown = [r for r in self.rules if r not in RULE_ORDER]
        if unknown:
            raise ConfigError(f"unknown eligibility rules: {unknown}")


def _rule_fires(rule: str, s: Subject, schema: Schema) -> bool:
    if rule == "no_yearbook":
        return not s.yearbook
    if rule == "no_sport_info":
        return not s.sport_info
    if rule == "collision_sport":
        return any(sp in s.sports for sp in schema.collision_sports)
    if rule == "other_sport":
        return any(sp in s.sports for sp in schema.other_sports)
    raise ConfigError(rule)


def apply_eligibility(cohort: Cohort, rules: EligibilityRules | None = None) -> Cohort:
    rules = rules if rules is not None else EligibilityRules()
    counts = {r: 0 for r in rules.rules}
    subjects = []
    for s in cohort.subjects:
        base = replace(s, group=_group_from_sports(s.sports, cohort.schema.football_sport), exclusion=None)
        for rule in rules.rules:
            if _rule_fires(rule, base, cohort.schema):
                base = replace(base, group=EXCLUDED, exclusion=rule)
                counts[rule] += 1
                break
        subjects.append(base)
    provenance = tuple(ExclusionRecord(r, counts[r]) for r in rules.rules)
    out = Cohort(schema=cohort.schema, subjects=tuple(subjects), provenance=provenance)
    out.check_conservation()
    return out


def _code_level(subject_id: str, outcome: str, value: str | None, codes: Mapping[str, int]):
    if value is None:
        return None
    key = value.strip().lower()
    if key not in codes:
        raise CodingError(subject_id, outcome, value)
    return float(codes[key])


def _as_float(value: str | None) -> float | None:
    if value is None:
        return None
    try:
        x = float(value)
    except ValueError:
        return None
    if not math.isfinite(x) or x < 0:
        return None
    return x


def code_cancer(subject_id: str, dx: str | None, icd9: str | None, exclusions: Sequence[str]):
    """Cancer indicator ignoring diagnoses whose ICD-9 code starts with an excluded prefix."""
    has_dx = _code_level(subject_id, "cancer", dx, CANCER_DX_CODES)
    if has_dx is None or has_dx == 0.0:
        return has_dx
    codes = [c.strip() for c in (icd9 or "").replace(",", ";").split(";") if c.strip()]
    if not codes:
        return 1.0
    kept = [c for c in codes if not any(c.startswith(p) for p in exclusions)]
    return 1.0 if kept else 0.0


def max_adult_bmi(weight_lb: float | None, age: float | None, height_in: float | None, min_age: float = 18.0):
    """BMI at reported maximum weight; ``None`` if that weight was reached before ``min_age``."""
    if weight_lb is None or age is None or height_in is None or height_in == 0:
        return None
    if age < min_age:
        return None
    return 703.0 * weight_lb / height_in**2


def code_subject(subject: Subject, schema: Schema) -> dict[str, float | None]:
    raw = subject.raw_outcomes
    sid = subject.id
    return {
        "self_rated_health": _code_level(sid, "self_rated_health", raw.get("self_rated_health"), SELF_RATED_HEALTH_CODES),
        "pain": _code_level(sid, "pain", raw.get("pain"), PAIN_CODES),
        "adl": _code_level(sid, "adl", raw.get("adl"), ADL_CODES),
        "cancer": code_cancer(sid, raw.get("cancer_dx"), raw.get("cancer_icd9"), schema.smoking_icd9_exclusions),
        "max_bmi": max_adult_bmi(
            _as_float(raw.get("max_weight")),
            _as_float(raw.get("max_weight_age")),
            _as_float(raw.get("height")),
            schema.min_adult_age,
        ),
    }


def code_outcomes(cohort: Cohort) -> Cohort:
    subjects = tuple(replace(s, coded_outcomes=code_subject(s, cohort.schema)) for s in cohort.subjects)
    return replace(cohort, subjects=subjects)


def stratify_by_missingness(
    cohort: Cohort, outcomes: Sequence[str], subjects: Iterable[Subject] | None = None
) -> list[MissingnessStratum]:
    """Partition eligible subjects by which of ``outcomes`` are observed.

    Strata are ordered by pattern (outcomes in the order given, observed
    before missing) so the result is deterministic.
    """
    if not outcomes:
        raise ValueError("outcomes must be non-empty")
    pool = cohort.eligible if subjects is None else tuple(subjects)
    buckets: dict[tuple[bool, ...], list[str]] = {}
    for s in pool:
        key = tuple(s.coded_outcomes.get(o) is not None for o in outcomes)
        buckets.setdefault(key, []).append(s.id)
    strata = []
    for key in sorted(buckets, key=lambda k: tuple(not b for b in k)):
        pattern = frozenset(o for o, present in zip(outcomes, key) if present)
        strata.append(MissingnessStratum(pattern, tuple(buckets[key])))
    return strata


@dataclass
class SummaryTable:
    groups: pd.DataFrame
    sports: pd.DataFrame
    exclusions: pd.DataFrame


def _pct(n: int, d: int) -> float:
    return round(100.0 * n / d, 2) if d else 0.0


def summarize(cohort: Cohort) -> SummaryTable:
    """Counts per group and sport participation (initial pool vs eligible)."""
    eligible = cohort.eligible
    n = len(eligible)
    counts = {g: sum(1 for s in eligible if s.group == g) for g in GROUPS}
    controls = counts[SPORT_CONTROL] + counts[NONSPORT_CONTROL]
    groups = pd.DataFrame(
        [
            ("Football", counts[FOOTBALL], _pct(counts[FOOTBALL], n)),
            ("All controls", controls, _pct(controls, n)),
            ("Sport controls", counts[SPORT_CONTROL], _pct(counts[SPORT_CONTROL], n)),
            ("Non-sport controls", counts[NONSPORT_CONTROL], _pct(counts[NONSPORT_CONTROL], n)),
            ("Eligible", n, 100.0 if n else 0.0),
        ],
        columns=["Group", "N", "Percent"],
    )
    rows = []
    for sp in cohort.schema.sports:
        rows.append(
            (
                sp.label,
                sum(1 for s in cohort.subjects if sp.key in s.sports),
                sum(1 for s in eligible if s.group == FOOTBALL and sp.key in s.sports),
                sum(1 for s in eligible if s.group == SPORT_CONTROL and sp.key in s.sports),
            )
        )
    sports = pd.DataFrame(
        rows, columns=["Sport", "Initial Pool", "Eligible Football Players", "Eligible Sport Controls"]
    )
    initial = len(cohort.subjects)
    exclusions = pd.DataFrame(
        [(r.rule, r.excluded, _pct(r.excluded, initial)) for r in cohort.provenance]
        + [("eligible", n, _pct(n, initial))],
        columns=["Rule", "N", "Percent of initial"],
    )
    return SummaryTable(groups=groups, sports=sports, exclusions=exclusions)


def missing_outcome_table(cohort: Cohort, outcomes: Sequence[str] = OUTCOMES) -> pd.DataFrame:
    """Number (percent) of eligible subjects missing each outcome, by group."""
    eligible = cohort.eligible
    pools = [
        ("Total", eligible),
        ("FB", [s for s in eligible if s.group == FOOTBALL]),
        ("Sport Controls", [s for s in eligible if s.group == SPORT_CONTROL]),
        ("Non-sport Controls", [s for s in eligible if s.group == NONSPORT_CONTROL]),
    ]
    rows = []
    for o in outcomes:
        row = {"Outcome": OUTCOME_LABELS.get(o, o)}
        for name, pool in pools:
            k = sum(1 for s in pool if s.coded_outcomes.get(o) is None)
            row[name] = f"{k} ({_pct(k, len(pool)):.2f}%)"
        rows.append(row)
    return pd.DataFrame(rows, columns=["Outcome"] + [p[0] for p in pools])
