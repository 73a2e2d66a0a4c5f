"""Rank-based Mahalanobis distances with a soft propensity-score caliper."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logit
from scipy.stats import rankdata

EIGEN_CUTOFF = 1e-10
DEFAULT_CALIPER_WIDTH = 0.2
DEFAULT_CALIPER_PENALTY = 100.0


@dataclass(frozen=True)
class DistanceMatrix:
    exposed_ids: tuple[str, ...]
    control_ids: tuple[str, ...]
    entries: np.ndarray
    caliper_violations: int = 0

    def __post_init__(self):
        shape = (len(self.exposed_ids), len(self.control_ids))
        if self.entries.shape != shape:
            raise ValueError(f"entries have shape {self.entries.shape}, expected {shape}")
        if np.isnan(self.entries).any() or (self.entries < 0).any():
            raise ValueError("distances must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def get(self, exposed_id: str, control_id: str) -> float:
        i = self.exposed_ids.index(exposed_id)
        j = self.control_ids.index(control_id)
        return float(self.entries[i, j])

    def submatrix(self, exposed_ids: Sequence[str], control_ids: Sequence[str]) -> "DistanceMatrix":
        ei = {sid: i for i, sid in enumerate(self.exposed_ids)}
        ci = {sid: j for j, sid in enumerate(self.control_ids)}
        rows = np.array([ei[s] for s in exposed_ids], dtype=int)
        cols = np.array([ci[s] for s in control_ids], dtype=int)
        return DistanceMatrix(tuple(exposed_ids), tuple(control_ids), self.entries[np.ix_(rows, cols)])

    def to_csv(self, path: str | Path) -> None:
        """Write with one row per exposed id and one column per control id."""
        with Path(path).open("w") as fh:
            fh.write(",".join(["exposed_id", *self.control_ids]) + "\n")
            for sid, row in zip(self.exposed_ids, self.entries):
                fh.write(",".join([sid, *(repr(float(v)) for v in row)]) + "\n")


def rank_transform(columns: np.ndarray) -> np.ndarray:
    """Column-wise ranks 1..n, ties receiving their average rank."""
    x = np.asarray(columns, dtype=float)
    if x.ndim == 1:
        return rankdata(x, method="average")
    if x.shape[0] == 0:
        return x.copy()
    return rankdata(x, axis=0, method="average")


def rank_covariance(ranks: np.ndarray) -> np.ndarray:
    """Covariance of ranks rescaled so each diagonal entry is (n^2 - 1)/12.

    Rescaling keeps the correlations but stops heavily tied columns from being
    up-weighted. Constant columns get a zero row and column.
    """
    n, p = ranks.shape
    if n < 2:
        return np.zeros((p, p))
    cov = np.cov(ranks, rowvar=False, ddof=0).reshape(p, p)
    var = np.diag(cov)
    untied = (n * n - 1) / 12.0
    scale = np.zeros(p)
    ok = var > 0
    scale[ok] = np.sqrt(untied / var[ok])
    return cov * np.outer(scale, scale)


def _inverse_root(cov: np.ndarray) -> np.ndarray:
    """Matrix L with L @ L.T equal to the pseudo-inverse of ``cov``."""
    vals, vecs = np.linalg.eigh(cov)
    if vals.size == 0 or vals.max() <= 0:
        return np.zeros_like(cov)
    keep = vals > EIGEN_CUTOFF * vals.max()
    return vecs[:, keep] / np.sqrt(vals[keep])


def pseudo_inverse(cov: np.ndarray) -> np.ndarray:
    root = _inverse_root(cov)
    return root @ root.T


def rank_mahalanobis(ranks: np.ndarray, i: int, j: int, inverse: np.ndarray | None = None) -> float:
    """Squared rank-Mahalanobis distance between rows ``i`` and ``j`` of ``ranks``."""
    if inverse is None:
        inverse = pseudo_inverse(rank_covariance(ranks))
    diff = ranks[i] - ranks[j]
    return float(max(diff @ inverse @ diff, 0.0))


def rank_mahalanobis_matrix(
    covariates: np.ndarray,
    exposed: np.ndarray,
    ids: Sequence[str],
) -> DistanceMatrix:
    """Exposed x control distances; ranks and covariance use all rows given."""
    exposed = np.asarray(exposed, dtype=bool)
    ids = list(ids)
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    ranks = rank_transform(x)
    root = _inverse_root(rank_covariance(ranks)) if x.shape[1] else np.zeros((0, 0))
    z = ranks @ root
    e_ids = tuple(sid for sid, f in zip(ids, exposed) if f)
    c_ids = tuple(sid for sid, f in zip(ids, exposed) if not f)
    if z.shape[1] == 0 or not e_ids or not c_ids:
        entries = np.zeros((len(e_ids), len(c_ids)))
    else:
        entries = cdist(z[exposed], z[~exposed], metric="sqeuclidean")
    return DistanceMatrix(e_ids, c_ids, entries)


def logit_scores(scores: np.ndarray) -> np.ndarray:
    return logit(np.clip(np.asarray(scores, dtype=float), 1e-12, 1 - 1e-12))


def apply_caliper(
    dm: DistanceMatrix,
    scores: Mapping[str, float],
    width: float = DEFAULT_CALIPER_WIDTH,
    penalty: float = DEFAULT_CALIPER_PENALTY,
    sd: float | None = None,
) -> DistanceMatrix:
    """Add ``penalty * excess / (width * sd)`` to pairs whose logit propensity
    scores differ by more than ``width * sd``.

    ``sd`` defaults to the standard deviation of the logit scores in
    ``scores``.
    """
    if width <= 0:
        raise ValueError("caliper width must be positive")
    if penalty < 0:
        raise ValueError("caliper penalty must be non-negative")
    if sd is None:
        all_logits = logit_scores(np.array(list(scores.values())))
        sd = float(np.std(all_logits, ddof=1)) if all_logits.size > 1 else 0.0
    le = logit_scores(np.array([scores[s] for s in dm.exposed_ids]))
    lc = logit_scores(np.array([scores[s] for s in dm.control_ids]))
    threshold = width * sd
    if threshold <= 0:
        return replace(dm, caliper_violations=0)
    excess = np.abs(le[:, None] - lc[None, :]) - threshold
    mask = excess > 0
    entries = dm.entries + np.where(mask, penalty * excess / threshold, 0.0)
    return DistanceMatrix(dm.exposed_ids, dm.control_ids, entries, int(mask.sum()))
