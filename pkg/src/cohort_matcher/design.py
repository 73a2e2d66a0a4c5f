"""Numeric covariate matrices for the propensity model, distances and balance tables."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cohort import CovariateSpec, Subject


@dataclass(frozen=True)
class CovariateMatrix:
    """Covariates of a fixed list of subjects in two encodings.

    ``values`` is the model encoding: numeric columns, reference-cell
    indicators for categoricals and one missingness indicator per covariate
    that has any missing value; constant columns are dropped. ``balance`` keeps
    every observed categorical level and no indicators, as reported in balance
    tables.
    """

    ids: tuple[str, ...]
    values: np.ndarray
    columns: tuple[str, ...]
    balance: np.ndarray
    balance_columns: tuple[str, ...]
    balance_labels: tuple[str, ...]
    balance_kinds: tuple[str, ...]

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        index = {sid: i for i, sid in enumerate(self.ids)}
        return np.array([index[i] for i in ids], dtype=int)


def _mode(values: list, order: Sequence | None = None):
    counts = Counter(values)
    best = max(counts.values())
    candidates = [v for v, c in counts.items() if c == best]
    if order is not None:
        rank = {v: i for i, v in enumerate(order)}
        return min(candidates, key=lambda v: rank.get(v, len(rank)))
    return min(candidates)


def _impute(column: list, groups: Sequence[str], kind: str, levels: Sequence | None):
    observed = [v for v in column if v is not None]
    if not observed:
        fallback = levels[0] if kind == "categorical" else 0.0
    elif kind == "continuous" or kind == "ordinal":
        fallback = float(np.mean(observed))
    else:
        fallback = _mode(observed, levels)
    fill = {}
    for g in set(groups):
        vals = [v for v, gg in zip(column, groups) if gg == g and v is not None]
        if not vals:
            fill[g] = fallback
        elif kind == "continuous" or kind == "ordinal":
            fill[g] = float(np.mean(vals))
        else:
            fill[g] = _mode(vals, levels)
    return [fill[g] if v is None else v for v, g in zip(column, groups)]


def covariate_matrix(
    subjects: Sequence[Subject],
    specs: Sequence[CovariateSpec],
    groups: Sequence[str] | None = None,
) -> CovariateMatrix:
    """Encode covariates of ``subjects``.

    Missing values are filled with the mean (numeric) or mode (binary and
    categorical) of the subject's own group in ``groups`` (default: each
    subject's ``group`` attribute).
    """
    groups = [s.group for s in subjects] if groups is None else list(groups)
    n = len(subjects)
    cols, names = [], []
    bcols, bnames, blabels, bkinds = [], [], [], []
    indicators, indicator_names = [], []
    for spec in specs:
        raw = [s.covariates.get(spec.id) for s in subjects]
        missing = np.array([v is None for v in raw], dtype=float)
        filled = _impute(raw, groups, spec.kind, spec.levels or None)
        if spec.kind == "categorical":
            present = [lvl for lvl in spec.levels if lvl in set(filled)]
            reference = _mode(filled, spec.levels) if filled else None
            for lvl in present:
                ind = np.array([v == lvl for v in filled], dtype=float)
                bcols.append(ind)
                bnames.append(f"{spec.id}[{lvl}]")
                blabels.append(f"{spec.label}: {lvl}")
                bkinds.append("binary")
                if lvl != reference:
                    cols.append(ind)
                    names.append(f"{spec.id}[{lvl}]")
        else:
            x = np.asarray(filled, dtype=float)
            cols.append(x)
            names.append(spec.id)
            bcols.append(x)
            bnames.append(spec.id)
            blabels.append(spec.label)
            bkinds.append("binary" if spec.kind == "binary" else "continuous")
        if missing.any():
            indicators.append(missing)
            indicator_names.append(f"{spec.id}__missing")
    cols += indicators
    names += indicator_names
    values = np.column_stack(cols) if cols else np.zeros((n, 0))
    keep = [j for j in range(values.shape[1]) if n > 0 and np.ptp(values[:, j]) > 0]
    values = values[:, keep]
    names = [names[j] for j in keep]
    balance = np.column_stack(bcols) if bcols else np.zeros((n, 0))
    return CovariateMatrix(
        ids=tuple(s.id for s in subjects),
        values=values,
        columns=tuple(names),
        balance=balance,
        balance_columns=tuple(bnames),
        balance_labels=tuple(blabels),
        balance_kinds=tuple(bkinds),
    )


def with_intercept(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.shape[0]), x])
