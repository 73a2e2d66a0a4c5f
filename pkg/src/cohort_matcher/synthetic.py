"""Synthetic WLS-style cohorts with known confounding, effects and missingness."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, stats
from scipy.special import expit, logit

from .cohort import (
    FOOTBALL,
    NONSPORT_CONTROL,
    OUTCOMES,
    SPORT_CONTROL,
    Schema,
    default_schema,
    save_schema,
)
from .errors import ConfigError

# Missing-outcome rates among eligible subjects in the WLS.
OUTCOME_MISSING_RATES = {
    "self_rated_health": 0.2709,
    "pain": 0.7413,
    "adl": 0.3112,
    "cancer": 0.3115,
    "max_bmi": 0.4221,
}
# Eligible pool: 1,259 football, 726 sport controls, 1,370 non-sport controls.
WLS_GROUP_PROPORTIONS = (1259 / 3355, 726 / 3355, 1370 / 3355)

BINARY_PREVALENCE = {
    "ixc13rer": 0.06, "ixc14rer": 0.05, "ixc15rer": 0.04, "ixc02rer": 0.05, "ixc07rer": 0.01,
    "ixc10rer": 0.14, "ixc12rer": 0.03, "ixc03rer": 0.15, "ixc04rer": 0.45, "ixc05rer": 0.04,
    "ixc06rer": 0.4, "ixc08rer": 0.02, "ixc09rer": 0.02, "ixc11rer": 0.01, "ixa06rec": 0.14,
    "ixa07rec": 0.3, "ixa04rec": 0.12, "ixa02rec": 0.52, "ixa03rec": 0.3, "ixa08rec": 0.3,
    "ixa09rec": 0.1, "ixa11rec": 0.1, "ixt06rer": 0.37, "ixt02rer": 0.6, "ixt03rer": 0.33,
    "ixt04rer": 0.9, "ixt05rer": 0.15, "bklvpr": 0.9, "wrmo57": 0.35, "zfrplc": 0.4,
    "tchcntq": 0.45, "parcntq": 0.7,
}
CATEGORICAL_PROBS = {
    "ixc01rer": (0.005, 0.03, 0.11, 0.35, 0.505),
    "hsdm57": (0.8, 0.12, 0.05, 0.03),
    "parencq": (0.15, 0.25, 0.6),
}

# Sport participation among eligible football players and sport controls.
SPORT_ELIGIBLE = {
    "baseball": (453, 273),
    "basketball": (654, 328),
    "cross_country": (13, 54),
    "curling": (10, 23),
    "football": (1259, 0),
    "track": (468, 238),
    "volleyball": (69, 45),
    "wrestling": (0, 0),
    "swimming": (14, 38),
    "hockey": (0, 0),
    "tennis": (32, 39),
    "other": (0, 0),
}
SPORT_INITIAL = {
    "baseball": 786, "basketball": 1046, "cross_country": 84, "curling": 36, "football": 1420,
    "track": 804, "volleyball": 127, "wrestling": 130, "swimming": 60, "hockey": 11,
    "tennis": 73, "other": 34,
}
WLS_FLOW_COUNTS = {"initial": 4991, "no_yearbook": 1221, "no_sport_info": 245, "sport_exclusions": 170}

NON_SMOKING_ICD9 = ("185", "153.0", "173.5", "204.1", "200.2", "189.0", "154.1")
SMOKING_ICD9 = ("162.9", "188.4")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic cohort.

    Confounding strengths are log-odds per standard deviation of the
    observed covariate; ``prognostic`` strengths shift a risk score that
    worsens every outcome. ``effects`` are the true exposure effects: log
    odds ratios for binary outcomes (on the coded 0/1 scale) and kg/m^2 for
    max adult BMI.
    """

    n: int = 2000
    group_proportions: tuple[float, float, float] = WLS_GROUP_PROPORTIONS
    covariates: tuple[str, ...] | None = None
    correlation: float = 0.1
    confounding: Mapping[str, float] = field(
        default_factory=lambda: {"srbmi": 0.5, "hsrankq": -0.4, "ixt06rer": -0.35}
    )
    sport_confounding: Mapping[str, float] = field(default_factory=lambda: {"srbmi": 0.2, "hsrankq": -0.2})
    prognostic: Mapping[str, float] = field(
        default_factory=lambda: {"srbmi": 0.25, "hsrankq": -0.15, "ixt06rer": 0.2, "bmpin1": -0.15}
    )
    effects: Mapping[str, float] = field(default_factory=lambda: {o: 0.0 for o in OUTCOMES})
    missingness: Mapping[str, float] = field(default_factory=lambda: dict(OUTCOME_MISSING_RATES))
    missing_exposure_shift: float = 0.0
    covariate_missing_rate: float = 0.02
    exclusion_rates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        props = np.asarray(self.group_proportions, dtype=float)
        if props.size != 3 or np.any(props < 0) or abs(props.sum() - 1) > 1e-9:
            raise ConfigError("group proportions must be three non-negative numbers summing to 1")
        for name, rate in self.missingness.items():
            if name not in OUTCOMES:
                raise ConfigError(f"unknown outcome {name!r} in missingness")
            if not 0 <= rate <= 1:
                raise ConfigError(f"missingness rate for {name} must be in [0, 1]")
        if not 0 <= self.covariate_missing_rate <= 1:
            raise ConfigError("covariate missing rate must be in [0, 1]")
        if not -1 < self.correlation < 1:
            raise ConfigError("correlation must be in (-1, 1)")
        if self.n < 1:
            raise ConfigError("n must be positive")

    def schema(self) -> Schema:
        schema = default_schema()
        if self.covariates is not None:
            unknown = set(self.covariates) - set(schema.covariate_ids)
            if unknown:
                raise ConfigError(f"unknown covariates: {sorted(unknown)}")
            schema = schema.restrict(self.covariates)
        return schema


def _continuous(cid: str, u: np.ndarray) -> np.ndarray:
    z = stats.norm.ppf(u)
    if cid == "srbmi":
        return z
    if cid == "ocsf57":
        return np.clip(40 + 15 * z, 0, 100)
    if cid == "bmpin1":
        return np.exp(4.0 + 0.6 * z)
    if cid == "hsrankq":
        return np.clip(np.round(100 * u), 1, 99)
    if cid == "spocasp3":
        return np.clip(45 + 15 * z, 0, 100)
    if cid == "bmfaedu":
        return np.clip(np.round(10 + 3 * z), 0, 20)
    if cid == "zpedyr":
        return np.clip(np.round(2 + 2 * z), 0, 8)
    return z


def draw_covariates(n: int, schema: Schema, correlation: float, rng: np.random.Generator) -> pd.DataFrame:
    p = len(schema.covariates)
    shared = rng.standard_normal(n)
    own = rng.standard_normal((n, p))
    rho = max(correlation, 0.0)
    latent = np.sqrt(rho) * shared[:, None] + np.sqrt(1 - rho) * own
    u = np.clip(stats.norm.cdf(latent), 1e-9, 1 - 1e-9)
    cols = {}
    for j, spec in enumerate(schema.covariates):
        if spec.kind == "binary":
            prev = BINARY_PREVALENCE.get(spec.id, 0.2)
            cols[spec.id] = (u[:, j] > 1 - prev).astype(float)
        elif spec.kind == "categorical":
            probs = np.asarray(CATEGORICAL_PROBS.get(spec.id, np.full(len(spec.levels), 1 / len(spec.levels))))
            cuts = np.cumsum(probs)[:-1]
            idx = np.searchsorted(cuts, u[:, j], side="right")
            cols[spec.id] = np.array(spec.levels, dtype=object)[idx]
        else:
            cols[spec.id] = _continuous(spec.id, u[:, j])
    return pd.DataFrame(cols)


def _standardized(frame: pd.DataFrame, schema: Schema, cid: str) -> np.ndarray:
    spec = schema.covariate(cid)
    if spec.kind == "categorical":
        x = np.array([spec.levels.index(v) for v in frame[cid]], dtype=float)
    else:
        x = frame[cid].to_numpy(dtype=float)
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def _linear(frame: pd.DataFrame, schema: Schema, strengths: Mapping[str, float]) -> np.ndarray:
    eta = np.zeros(len(frame))
    for cid, s in strengths.items():
        if cid in frame.columns:
            eta += s * _standardized(frame, schema, cid)
    return eta


def _calibrated(eta: np.ndarray, target: float) -> float:
    """Intercept making the mean of expit(a + eta) equal ``target``."""
    if target <= 0:
        return -np.inf
    if target >= 1:
        return np.inf
    return optimize.brentq(lambda a: expit(a + eta).mean() - target, -30, 30)


def draw_groups(frame: pd.DataFrame, spec: SyntheticSpec, schema: Schema, rng: np.random.Generator) -> np.ndarray:
    n = len(frame)
    p_fb, p_sc, p_nsc = spec.group_proportions
    eta = _linear(frame, schema, spec.confounding)
    fb = rng.random(n) < expit(_calibrated(eta, p_fb) + eta)
    share = p_sc / (p_sc + p_nsc) if p_sc + p_nsc > 0 else 0.0
    eta2 = _linear(frame, schema, spec.sport_confounding)
    sc = rng.random(n) < expit(_calibrated(eta2[~fb], share) + eta2)
    return np.where(fb, FOOTBALL, np.where(sc, SPORT_CONTROL, NONSPORT_CONTROL))


def sport_flags(groups: np.ndarray, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """0/1 participation per sport consistent with each subject's group."""
    n = groups.size
    flags = {k: np.zeros(n, dtype=int) for k in SPORT_INITIAL}
    fb = groups == FOOTBALL
    sc = groups == SPORT_CONTROL
    n_fb, n_sc = max(int(fb.sum()), 1), max(int(sc.sum()), 1)
    flags["football"][fb] = 1
    sc_sports = [k for k, (_, c) in SPORT_ELIGIBLE.items() if c > 0]
    sc_probs = np.array([SPORT_ELIGIBLE[k][1] for k in sc_sports], dtype=float)
    sc_probs /= sc_probs.sum()
    for k, (f, c) in SPORT_ELIGIBLE.items():
        if k == "football":
            continue
        if f:
            flags[k][fb] = (rng.random(int(fb.sum())) < f / 1259).astype(int)
        if c:
            flags[k][sc] = (rng.random(int(sc.sum())) < 0.4 * c / 726).astype(int)
    # every sport control plays at least one eligible non-football sport
    sc_idx = np.flatnonzero(sc)
    none = sc_idx[[not any(flags[k][i] for k in sc_sports) for i in sc_idx]]
    if none.size:
        pick = rng.choice(len(sc_sports), size=none.size, p=sc_probs)
        for i, j in zip(none, pick):
            flags[sc_sports[j]][i] = 1
    del n_fb, n_sc
    return flags


def _levels(rng, n, names, probs):
    return np.array(names, dtype=object)[rng.choice(len(names), size=n, p=probs)]


def draw_outcomes(
    frame: pd.DataFrame,
    groups: np.ndarray,
    spec: SyntheticSpec,
    schema: Schema,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """Raw survey responses with the requested effects and missingness."""
    n = len(frame)
    fb = (groups == FOOTBALL).astype(float)
    risk = _linear(frame, schema, spec.prognostic)
    eff = {o: float(spec.effects.get(o, 0.0)) for o in OUTCOMES}

    good = rng.random(n) < expit(logit(0.8) - risk + eff["self_rated_health"] * fb)
    srh = np.where(
        good,
        _levels(rng, n, ["excellent", "very good", "good"], [0.3, 0.4, 0.3]),
        _levels(rng, n, ["fair", "poor"], [0.75, 0.25]),
    )
    limited = rng.random(n) < expit(logit(0.3) + risk + eff["pain"] * fb)
    pain = np.where(
        limited,
        _levels(rng, n, ["some", "most", "all"], [0.6, 0.3, 0.1]),
        _levels(rng, n, ["none", "a few"], [0.6, 0.4]),
    )
    adl_any = rng.random(n) < expit(logit(0.1) + risk + eff["adl"] * fb)
    adl = np.where(adl_any, "any", "none").astype(object)

    cancer = rng.random(n) < expit(logit(0.15) + 0.5 * risk + eff["cancer"] * fb)
    smoking_only = (~cancer) & (rng.random(n) < 0.04)
    dx = np.where(cancer | smoking_only, "yes", "no").astype(object)
    icd = np.full(n, "", dtype=object)
    site = rng.choice(len(NON_SMOKING_ICD9), size=n)
    extra = rng.random(n) < 0.1
    for i in np.flatnonzero(cancer):
        codes = [NON_SMOKING_ICD9[site[i]]]
        if extra[i]:
            codes.append(SMOKING_ICD9[i % 2])
        icd[i] = ";".join(codes)
    for i in np.flatnonzero(smoking_only):
        icd[i] = SMOKING_ICD9[i % 2]

    height = np.round(70 + 2.8 * rng.standard_normal(n), 1)
    bmi = 28 + 1.5 * risk + eff["max_bmi"] * fb + 4 * rng.standard_normal(n)
    weight = np.round(bmi * height**2 / 703, 1)
    age = rng.integers(20, 75, size=n).astype(float)

    def missing(o):
        rate = spec.missingness.get(o, 0.0)
        if rate <= 0:
            return np.zeros(n, dtype=bool)
        if rate >= 1:
            return np.ones(n, dtype=bool)
        return rng.random(n) < expit(logit(rate) + spec.missing_exposure_shift * fb)

    m = {o: missing(o) for o in OUTCOMES}
    srh = np.where(m["self_rated_health"], "NA", srh)
    pain = np.where(m["pain"], "NA", pain)
    adl = np.where(m["adl"], "NA", adl)
    dx = np.where(m["cancer"], "NA", dx)
    icd = np.where(m["cancer"], "", icd)
    young = m["max_bmi"] & (rng.random(n) < 0.5)
    age = np.where(young, rng.integers(14, 18, size=n), age)
    weight_out = np.where(m["max_bmi"] & ~young, np.nan, weight)
    oc = schema.outcome_columns
    return pd.DataFrame(
        {
            oc["self_rated_health"]: srh,
            oc["pain"]: pain,
            oc["adl"]: adl,
            oc["cancer_dx"]: dx,
            oc["cancer_icd9"]: icd,
            oc["max_weight"]: weight_out,
            oc["max_weight_age"]: age,
            oc["height"]: height,
        }
    )


def _blank_covariates(frame: pd.DataFrame, schema: Schema, rate: float, rng) -> pd.DataFrame:
    out = frame.copy().astype(object)
    if rate <= 0:
        return out
    for spec in schema.covariates:
        mask = rng.random(len(out)) < rate
        negative_ok = spec.negative_missing is False
        out.loc[mask, spec.id] = "NA" if negative_ok else "-3"
    return out


def simulate_frame(spec: SyntheticSpec, seed: int) -> tuple[pd.DataFrame, Schema]:
    rng = np.random.default_rng(seed)
    schema = spec.schema()
    covs = draw_covariates(spec.n, schema, spec.correlation, rng)
    groups = draw_groups(covs, spec, schema, rng)
    flags = sport_flags(groups, rng)
    outcomes = draw_outcomes(covs, groups, spec, schema, rng)
    yearbook = np.ones(spec.n, dtype=int)
    info = np.ones(spec.n, dtype=int)
    rates = dict(spec.exclusion_rates)
    drop_yb = rng.random(spec.n) < rates.get("no_yearbook", 0.0)
    drop_info = (~drop_yb) & (rng.random(spec.n) < rates.get("no_sport_info", 0.0))
    yearbook[drop_yb] = 0
    info[drop_yb | drop_info] = 0
    for k in flags:
        flags[k] = np.where(drop_yb | drop_info, 0, flags[k])
    collide = (~drop_yb) & (~drop_info) & (rng.random(spec.n) < rates.get("collision_sport", 0.0))
    flags["wrestling"] = np.where(collide, 1, flags["wrestling"])
    frame = pd.DataFrame({schema.id_column: [f"S{i:05d}" for i in range(spec.n)]})
    frame[schema.yearbook_column] = yearbook
    frame[schema.sport_info_column] = info
    for s in schema.sports:
        frame[s.column] = flags.get(s.key, np.zeros(spec.n, dtype=int))
    frame = pd.concat(
        [frame, _blank_covariates(covs, schema, spec.covariate_missing_rate, rng), outcomes], axis=1
    )
    return frame, schema


def write_frame(frame: pd.DataFrame, path: str | Path) -> None:
    frame.to_csv(path, index=False, float_format="%.10g", na_rep="NA", lineterminator="\n")


def generate_synthetic(spec: SyntheticSpec, seed: int, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``cohort.csv`` and ``schema.yaml`` into ``out_dir``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame, schema = simulate_frame(spec, seed)
    csv_path, schema_path = out / "cohort.csv", out / "schema.yaml"
    write_frame(frame, csv_path)
    save_schema(schema, schema_path)
    return csv_path, schema_path


def _assign_cyclic(n_subjects: int, counts: Sequence[tuple[str, int]]) -> dict[str, np.ndarray]:
    """Spread participations over subjects so each gets at least one (if enough)."""
    flags = {}
    pos = 0
    for key, c in counts:
        idx = (pos + np.arange(c)) % n_subjects
        arr = np.zeros(n_subjects, dtype=int)
        arr[idx] = 1
        flags[key] = arr
        pos = (pos + c) % n_subjects
    return flags


def wls_cohort_frame(seed: int = 0, schema: Schema | None = None) -> pd.DataFrame:
    """Cohort whose eligibility flags reproduce the WLS cohort flow.

    4,991 men; 1,221 without yearbook data; 245 more without sport data;
    170 excluded for wrestling, hockey or "other" sports; 3,355 eligible of
    whom 1,259 played football and 726 played another sport. Sport
    participation matches the WLS per-sport counts exactly.
    Covariates and outcomes are noise.
    """
    schema = schema or default_schema()
    rng = np.random.default_rng(seed)
    n = WLS_FLOW_COUNTS["initial"]
    n_sport_ex = WLS_FLOW_COUNTS["sport_exclusions"]
    n_fb, n_sc, n_nsc = 1259, 726, 1370
    blocks = ["no_yearbook"] * 1221 + ["no_sport_info"] * 245 + ["sport_ex"] * n_sport_ex
    blocks += [FOOTBALL] * n_fb + [SPORT_CONTROL] * n_sc + [NONSPORT_CONTROL] * n_nsc
    blocks = np.array(blocks, dtype=object)
    assert blocks.size == n

    flags = {k: np.zeros(n, dtype=int) for k in SPORT_INITIAL}
    ex = np.flatnonzero(blocks == "sport_ex")
    fb = np.flatnonzero(blocks == FOOTBALL)
    sc = np.flatnonzero(blocks == SPORT_CONTROL)
    # 130 wrestlers, 11 hockey players (5 also wrestle), 34 "other"; union = 170
    flags["wrestling"][ex[:130]] = 1
    flags["hockey"][ex[125:136]] = 1
    flags["other"][ex[136:170]] = 1
    for key in SPORT_INITIAL:
        if key in ("wrestling", "hockey", "other"):
            continue
        f_cnt, c_cnt = SPORT_ELIGIBLE[key]
        n_ex = SPORT_INITIAL[key] - f_cnt - c_cnt
        flags[key][ex[:n_ex]] = 1
        flags[key][fb[:f_cnt]] = 1
    cyc = _assign_cyclic(n_sc, [(k, c) for k, (_, c) in SPORT_ELIGIBLE.items() if c > 0])
    for key, arr in cyc.items():
        flags[key][sc] = arr

    covs = draw_covariates(n, schema, 0.1, rng)
    groups = np.where(np.isin(blocks, [FOOTBALL, SPORT_CONTROL, NONSPORT_CONTROL]), blocks, NONSPORT_CONTROL)
    outcomes = draw_outcomes(covs, groups.astype(str), SyntheticSpec(n=n), schema, rng)
    frame = pd.DataFrame({schema.id_column: [f"W{i:05d}" for i in range(n)]})
    frame[schema.yearbook_column] = (blocks != "no_yearbook").astype(int)
    frame[schema.sport_info_column] = (~np.isin(blocks, ["no_yearbook", "no_sport_info"])).astype(int)
    for s in schema.sports:
        frame[s.column] = flags.get(s.key, np.zeros(n, dtype=int))
    return pd.concat([frame, covs.astype(object), outcomes], axis=1)
