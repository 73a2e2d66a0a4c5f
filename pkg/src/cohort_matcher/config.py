"""Run configuration: validation, YAML loading and the commented template."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .cohort import OUTCOMES, PRIMARY_OUTCOME
from .errors import ConfigError
from .matcher import COMPARISONS, COMPARISON_SLUGS
from .synthetic import SyntheticSpec

DEFAULT_GAMMAS = (1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0)


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs.

    With ``input`` unset the run simulates a cohort from ``synthetic`` using
    ``seed``.
    """

    input: str | None = None
    schema: str | None = None
    outcomes: tuple[str, ...] = OUTCOMES
    comparisons: tuple[str, ...] = COMPARISONS
    k_range: tuple[int, ...] = tuple(range(2, 9))
    caliper_width: float = 0.2
    caliper_penalty: float = 100.0
    balance_threshold: float = 0.2
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    alpha: float = 0.05
    tau0: float | None = None
    exact_max_sets: int = 20
    continuity: bool = True
    seed: int = 0
    out: str = "results"
    workers: int = 1
    synthetic: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        validate(self)

    @property
    def primary_outcome(self) -> str:
        return PRIMARY_OUTCOME if PRIMARY_OUTCOME in self.outcomes else self.outcomes[0]

    def synthetic_spec(self) -> SyntheticSpec:
        raw = dict(self.synthetic)
        for key in ("group_proportions", "covariates"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        try:
            return SyntheticSpec(**raw)
        except TypeError as exc:
            raise ConfigError(f"bad synthetic section: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        d["synthetic"] = dict(self.synthetic)
        return d


def validate(cfg: RunConfig) -> None:
    if not cfg.outcomes:
        raise ConfigError("outcomes must list at least one outcome")
    bad = [o for o in cfg.outcomes if o not in OUTCOMES]
    if bad:
        raise ConfigError(f"unknown outcomes {bad}; choose from {list(OUTCOMES)}")
    if len(set(cfg.outcomes)) != len(cfg.outcomes):
        raise ConfigError("outcomes must not repeat")
    if not cfg.comparisons:
        raise ConfigError("comparisons must list at least one comparison")
    bad = [c for c in cfg.comparisons if c not in COMPARISONS]
    if bad:
        raise ConfigError(f"unknown comparisons {bad}; choose from {list(COMPARISONS)}")
    if not cfg.k_range:
        raise ConfigError("k_range must be non-empty")
    if any((not isinstance(k, int)) or k < 2 or k > 8 for k in cfg.k_range):
        raise ConfigError("k_range values must be integers in [2, 8]")
    if not 0 < cfg.alpha < 1:
        raise ConfigError("alpha must be in (0, 1)")
    if not cfg.caliper_width > 0:
        raise ConfigError("caliper_width must be positive")
    if cfg.caliper_penalty < 0:
        raise ConfigError("caliper_penalty must be non-negative")
    if not cfg.balance_threshold > 0:
        raise ConfigError("balance_threshold must be positive")
    if not cfg.gammas or any(not g >= 1 for g in cfg.gammas):
        raise ConfigError("gammas must be a non-empty list of values >= 1")
    if cfg.exact_max_sets < 0:
        raise ConfigError("exact_max_sets must be non-negative")
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")


_TUPLE_FIELDS = {"outcomes", "comparisons", "k_range", "gammas"}


def config_from_dict(raw: Mapping[str, Any] | None, **overrides) -> RunConfig:
    raw = dict(raw or {})
    raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    if "comparisons" in raw and raw["comparisons"] is not None:
        raw["comparisons"] = [COMPARISON_SLUGS.get(c, c) for c in raw["comparisons"]]
    if isinstance(raw.get("k_range"), Mapping):
        r = raw["k_range"]
        raw["k_range"] = list(range(int(r.get("min", 2)), int(r.get("max", 8)) + 1))
    for key in _TUPLE_FIELDS:
        if key in raw:
            if raw[key] is None:
                raise ConfigError(f"{key} must not be empty")
            raw[key] = tuple(raw[key])
    if raw.get("synthetic") is None:
        raw["synthetic"] = {}
    try:
        return RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Read a YAML config; keyword overrides (e.g. from the command line) win."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        base = p.parent
        for key in ("input", "schema"):
            if raw.get(key) and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])
    return config_from_dict(raw, **overrides)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


TEMPLATE = """\
# cohort-matcher run configuration (YAML).
# Every key is optional; the values shown are the defaults.

# Cohort CSV. Leave null to simulate a cohort from the `synthetic` section.
input: null
# Column schema (YAML). null uses the bundled WLS-style schema.
schema: null

# Outcomes to analyse. The first listed of self_rated_health (primary) or the
# first entry drives the ordered test; strata use the remaining ones.
outcomes: [self_rated_health, pain, adl, cancer, max_bmi]

# Comparisons, in ordered-testing order (FB_vs_AC is the primary one).
comparisons: [FB_vs_AC, FB_vs_SC, FB_vs_NSC, SC_vs_NSC]

# Candidate maximum matching ratios K (each in 2..8).
k_range: [2, 3, 4, 5, 6, 7, 8]

# Soft propensity caliper: width in SDs of the logit score, and the penalty
# added per caliper width of excess.
caliper_width: 0.2
caliper_penalty: 100.0

# A covariate is balanced when |standardized difference| < this.
balance_threshold: 0.2

# Sensitivity analysis grid, significance level, and ordered-test null
# (null means OR 1 / 0 SD).
gammas: [1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0]
alpha: 0.05
tau0: null

# Mantel-Haenszel bound: exact up to this many informative sets, else normal
# with a 0.5 continuity correction when `continuity` is true.
exact_max_sets: 20
continuity: true

# Random seed (synthetic data only; matching itself is deterministic),
# output directory and worker threads for the comparisons.
seed: 0
out: results
workers: 1

# Synthetic cohort (used when `input` is null).
synthetic:
  n: 2000
  correlation: 0.1
  # log-odds per SD of the covariate for playing football
  confounding: {srbmi: 0.5, hsrankq: -0.4, ixt06rer: -0.35}
  # log-odds per SD for other sports among non-football players
  sport_confounding: {srbmi: 0.2, hsrankq: -0.2}
  # shifts a shared risk score that worsens every outcome
  prognostic: {srbmi: 0.25, hsrankq: -0.15, ixt06rer: 0.2, bmpin1: -0.15}
  # true effects: log odds ratios for binary outcomes, kg/m^2 for max_bmi
  effects: {self_rated_health: 0.0, pain: 0.0, adl: 0.0, cancer: 0.0, max_bmi: 0.0}
  # outcome missingness rates
  missingness: {self_rated_health: 0.2709, pain: 0.7413, adl: 0.3112, cancer: 0.3115, max_bmi: 0.4221}
  covariate_missing_rate: 0.02
"""


def write_template(path: str | Path) -> Path:
    p = Path(path)
    p.write_text(TEMPLATE)
    return p
