"""Standardized differences before and after matching."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .matcher import Matching

THRESHOLD = 0.2


def pooled_sd(exposed_values: np.ndarray, control_values: np.ndarray) -> float:
    """sqrt((s_e^2 + s_c^2) / 2) with sample variances."""
    e = np.asarray(exposed_values, dtype=float)
    c = np.asarray(control_values, dtype=float)
    ve = float(np.var(e, ddof=1)) if e.size > 1 else 0.0
    vc = float(np.var(c, ddof=1)) if c.size > 1 else 0.0
    return math.sqrt((ve + vc) / 2.0)


def std_diff(
    exposed_values: Sequence[float],
    control_values: Sequence[float],
    control_weights: Sequence[float] | None = None,
    sd: float | None = None,
) -> float:
    """Weighted mean difference divided by a pooled standard deviation.

    ``sd`` should be the pre-matching pooled SD so that before and after
    values share a denominator; by default it is computed (unweighted) from
    the values passed in. A zero SD gives 0 for equal means and a signed
    infinity otherwise.
    """
    e = np.asarray(exposed_values, dtype=float)
    c = np.asarray(control_values, dtype=float)
    if e.size == 0 or c.size == 0:
        raise ValueError("both groups must be non-empty")
    if control_weights is None:
        w = np.ones_like(c)
    else:
        w = np.asarray(control_weights, dtype=float)
        if (w < 0).any() or w.sum() <= 0:
            raise ValueError("weights must be non-negative and not all zero")
    diff = float(e.mean() - np.average(c, weights=w))
    s = pooled_sd(e, c) if sd is None else sd
    if s == 0:
        if abs(diff) < 1e-15:
            return 0.0
        return math.copysign(math.inf, diff)
    return diff / s


def control_weights(matching: Matching) -> dict[str, float]:
    """Each control weighted 1/(number of controls in its set)."""
    return {c: 1.0 / len(ms.control_ids) for ms in matching.sets for c in ms.control_ids}


def weighted_control_means(matching: Matching, covariate: Mapping[str, float]) -> float:
    """Average over matched sets of the mean control value within the set."""
    if not matching.sets:
        return math.nan
    w = control_weights(matching)
    total = sum(w[c] * covariate[c] for c in w)
    return total / len(matching.sets)


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    label: str
    kind: str
    exposed_mean_before: float
    control_mean_before: float
    exposed_mean_after: float
    control_mean_after: float
    std_diff_before: float
    std_diff_after: float
    threshold: float = THRESHOLD

    @property
    def flag_before(self) -> bool:
        return abs(self.std_diff_before) >= self.threshold

    @property
    def flag_after(self) -> bool:
        return abs(self.std_diff_after) >= self.threshold

    @property
    def flag(self) -> bool:
        return self.flag_after


def balance_table(
    matching: Matching,
    ids: Sequence[str],
    values: np.ndarray,
    exposed_ids: Sequence[str],
    control_ids: Sequence[str],
    columns: Sequence[str],
    labels: Sequence[str] | None = None,
    kinds: Sequence[str] | None = None,
    threshold: float = THRESHOLD,
) -> list[BalanceRow]:
    """One row per column of ``values`` (rows of ``values`` follow ``ids``).

    "Before" compares all ``exposed_ids`` with all ``control_ids``
    unweighted; "after" compares matched exposed units with matched controls
    weighted by set composition. Both use the pre-matching pooled SD.
    """
    values = np.asarray(values, dtype=float)
    labels = list(labels) if labels is not None else list(columns)
    kinds = list(kinds) if kinds is not None else ["continuous"] * len(columns)
    index = {sid: i for i, sid in enumerate(ids)}
    xe = values[[index[s] for s in exposed_ids]]
    xc = values[[index[s] for s in control_ids]]
    if xe.shape[0] == 0 or xc.shape[0] == 0:
        raise ValueError("both groups must be non-empty")
    ve = xe.var(axis=0, ddof=1) if xe.shape[0] > 1 else np.zeros(values.shape[1])
    vc = xc.var(axis=0, ddof=1) if xc.shape[0] > 1 else np.zeros(values.shape[1])
    sd = np.sqrt((ve + vc) / 2.0)
    mean_e, mean_c = xe.mean(axis=0), xc.mean(axis=0)
    before = _ratio(mean_e - mean_c, sd)
    if matching.sets:
        weights = control_weights(matching)
        m_e = values[[index[s] for s in matching.exposed_ids]]
        m_c = values[[index[s] for s in weights]]
        w = np.fromiter(weights.values(), dtype=float, count=len(weights))
        after_e = m_e.mean(axis=0)
        after_c = (w @ m_c) / w.sum()
        after = _ratio(after_e - after_c, sd)
    else:
        after_e = after_c = after = np.full(values.shape[1], math.nan)
    return [
        BalanceRow(
            col,
            labels[j],
            kinds[j],
            float(mean_e[j]),
            float(mean_c[j]),
            float(after_e[j]),
            float(after_c[j]),
            float(before[j]),
            float(after[j]),
            threshold,
        )
        for j, col in enumerate(columns)
    ]


def _ratio(diff: np.ndarray, sd: np.ndarray) -> np.ndarray:
    """diff / sd with the zero-SD convention of :func:`std_diff`."""
    out = np.zeros_like(diff)
    pos = sd > 0
    out[pos] = diff[pos] / sd[pos]
    zero = ~pos & (np.abs(diff) >= 1e-15)
    out[zero] = np.copysign(np.inf, diff[zero])
    return out


def max_abs_std_diff(rows: Sequence[BalanceRow], after: bool = True) -> float:
    vals = [abs(r.std_diff_after if after else r.std_diff_before) for r in rows]
    vals = [v for v in vals if not math.isnan(v)]
    return max(vals) if vals else math.inf


def balance_frame(rows: Sequence[BalanceRow], exposed_label: str = "FB", control_label: str = "AC") -> pd.DataFrame:
    """Table layout: Variable, Before (exposed, control), After (exposed, control), Std. Diff. Before/After.

    Binary rows are shown as percentages.
    """
    out = []
    for r in rows:
        scale = 100.0 if r.kind == "binary" else 1.0
        name = f"{r.label} (%)" if r.kind == "binary" else r.label
        out.append(
            {
                "Variable": name,
                f"Before {exposed_label}": round(r.exposed_mean_before * scale, 3),
                f"Before {control_label}": round(r.control_mean_before * scale, 3),
                f"After {exposed_label}": round(r.exposed_mean_after * scale, 3),
                f"After {control_label}": round(r.control_mean_after * scale, 3),
                "Std. Diff. Before": round(r.std_diff_before, 3),
                "Std. Diff. After": round(r.std_diff_after, 3),
                "Flag Before": r.flag_before,
                "Flag After": r.flag_after,
            }
        )
    cols = [
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
    return pd.DataFrame(out, columns=cols)


def balance_markdown(frame: pd.DataFrame) -> str:
    """Markdown rendering with flagged standardized differences in bold."""
    cols = [c for c in frame.columns if not c.startswith("Flag")]
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join(["---"] + ["---:"] * (len(cols) - 1)) + "|"]
    for _, row in frame.iterrows():
        cells = []
        for c in cols:
            v = row[c]
            text = v if isinstance(v, str) else f"{v:g}"
            if c == "Std. Diff. Before" and row["Flag Before"]:
                text = f"**{text}**"
            if c == "Std. Diff. After" and row["Flag After"]:
                text = f"**{text}**"
            cells.append(text)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)
