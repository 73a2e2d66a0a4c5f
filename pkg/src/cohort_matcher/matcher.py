"""Optimal variable-ratio matching within propensity-score blocks."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence


from .cohort import FOOTBALL, NONSPORT_CONTROL, SPORT_CONTROL, Subject
from .distance import DistanceMatrix
from .errors import InfeasibleMatchError
from .flow import min_cost_assignment, scale_costs


@dataclass(frozen=True)
class MatchedSet:
    exposed_id: str
    control_ids: tuple[str, ...]
    stratum: str = ""
    block_k: int = 1
    distance: float = 0.0

    def __post_init__(self):
        if not self.control_ids:
            raise ValueError("a matched set needs at least one control")

    @property
    def size(self) -> int:
        return 1 + len(self.control_ids)

    @property
    def members(self) -> tuple[str, ...]:
        return (self.exposed_id,) + self.control_ids


@dataclass(frozen=True)
class Matching:
    sets: tuple[MatchedSet, ...] = ()
    discarded_exposed: tuple[str, ...] = ()
    discarded_controls: tuple[str, ...] = ()
    total_distance: float = 0.0

    def __post_init__(self):
        seen = Counter(s for ms in self.sets for s in ms.members)
        seen.update(self.discarded_exposed)
        seen.update(self.discarded_controls)
        dupes = [s for s, c in seen.items() if c > 1]
        if dupes:
            raise ValueError(f"subjects used more than once: {sorted(dupes)[:5]}")

    @property
    def n_matched(self) -> int:
        return sum(ms.size for ms in self.sets)

    @property
    def exposed_ids(self) -> list[str]:
        return [ms.exposed_id for ms in self.sets]

    @property
    def control_ids(self) -> list[str]:
        return [c for ms in self.sets for c in ms.control_ids]

    def composition(self) -> Counter:
        """Number of sets by number of controls."""
        return Counter(len(ms.control_ids) for ms in self.sets)

    def restrict(self, keep: set[str]) -> "Matching":
        """Sets whose exposed member is in ``keep``, controls filtered to ``keep``."""
        sets = []
        for ms in self.sets:
            ctrl = tuple(c for c in ms.control_ids if c in keep)
            if ms.exposed_id in keep and ctrl:
                sets.append(MatchedSet(ms.exposed_id, ctrl, ms.stratum, ms.block_k, ms.distance))
        return Matching(tuple(sets))

    def rows(self) -> list[tuple]:
        out = []
        for n, ms in enumerate(self.sets, start=1):
            out.append((n, "exposed", ms.exposed_id, ms.block_k, ms.stratum))
            out.extend((n, "control", c, ms.block_k, ms.stratum) for c in ms.control_ids)
        return out

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["set_id", "role", "subject_id", "block_k", "stratum"])
            w.writerows(self.rows())


def concat(matchings: Sequence[Matching]) -> Matching:
    return Matching(
        sets=tuple(ms for m in matchings for ms in m.sets),
        discarded_exposed=tuple(s for m in matchings for s in m.discarded_exposed),
        discarded_controls=tuple(s for m in matchings for s in m.discarded_controls),
        total_distance=sum(m.total_distance for m in matchings),
    )


def _sorted(dm: DistanceMatrix) -> DistanceMatrix:
    return dm.submatrix(sorted(dm.exposed_ids), sorted(dm.control_ids))


def optimal_assignment(dm: DistanceMatrix, k: int, stratum: str = "", block_k: int | None = None) -> Matching:
    """Give every exposed unit ``k`` controls at minimum total distance.

    Surplus controls are left out optimally. If fewer than ``k`` controls per
    exposed unit are available the ratio drops to
    ``floor(controls / exposed)``.
    """
    dm = _sorted(dm)
    n_e, n_c = dm.shape
    if n_e == 0:
        return Matching(discarded_controls=dm.control_ids)
    if n_c < n_e:
        raise InfeasibleMatchError(f"{n_c} controls cannot serve {n_e} exposed units")
    ratio = min(k, n_c // n_e)
    assigned = min_cost_assignment(scale_costs(dm.entries), ratio)
    sets, used, total = [], set(), 0.0
    for i, cols in enumerate(assigned):
        dist = float(dm.entries[i, cols].sum())
        total += dist
        used.update(cols)
        sets.append(
            MatchedSet(
                dm.exposed_ids[i],
                tuple(dm.control_ids[j] for j in cols),
                stratum,
                block_k if block_k is not None else k,
                dist,
            )
        )
    dropped = tuple(c for j, c in enumerate(dm.control_ids) if j not in used)
    return Matching(tuple(sets), (), dropped, total)


def pair_match_discard(dm: DistanceMatrix, stratum: str = "", block_k: int = 1) -> Matching:
    """Pair every control with a distinct exposed unit; leftover exposed units are discarded."""
    dm = _sorted(dm)
    n_e, n_c = dm.shape
    if n_c == 0:
        return Matching(discarded_exposed=dm.exposed_ids)
    if n_e < n_c:
        raise InfeasibleMatchError("pair_match_discard needs at least as many exposed as controls")
    assigned = min_cost_assignment(scale_costs(dm.entries.T), 1)
    sets, used, total = [], set(), 0.0
    for j, rows in enumerate(assigned):
        i = rows[0]
        used.add(i)
        dist = float(dm.entries[i, j])
        total += dist
        sets.append(MatchedSet(dm.exposed_ids[i], (dm.control_ids[j],), stratum, block_k, dist))
    sets.sort(key=lambda ms: ms.exposed_id)
    dropped = tuple(e for i, e in enumerate(dm.exposed_ids) if i not in used)
    return Matching(tuple(sets), dropped, (), total)


def ratio_block(score: float, K: int) -> int:
    """Block k with score in (1/(k+1), 1/k]; k=1 takes (1/2, 1] and k=K takes (0, 1/K]."""
    if score <= 0:
        return K
    return int(min(K, max(1, math.floor(1.0 / score + 1e-12))))


def match_block(dm: DistanceMatrix, k: int, stratum: str = "") -> Matching:
    n_e, n_c = dm.shape
    if n_e == 0:
        return Matching(discarded_controls=tuple(sorted(dm.control_ids)))
    if n_c == 0:
        return Matching(discarded_exposed=tuple(sorted(dm.exposed_ids)))
    if n_e > n_c:
        return pair_match_discard(dm, stratum, block_k=k)
    return optimal_assignment(dm, k, stratum, block_k=k)


def variable_ratio_match(
    exposed_ids: Sequence[str],
    control_ids: Sequence[str],
    scores: Mapping[str, float],
    dm: DistanceMatrix,
    K: int,
    stratum: str = "",
    cache: dict | None = None,
) -> Matching:
    """Match 1:k inside each propensity block k = 1..K and concatenate the blocks.

    Blocks below K are identical for every K, so a ``cache`` dict shared
    across calls on the same stratum avoids re-solving them.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    if not exposed_ids and not control_ids:
        return Matching()
    blocks_e: dict[int, list[str]] = {k: [] for k in range(1, K + 1)}
    blocks_c: dict[int, list[str]] = {k: [] for k in range(1, K + 1)}
    for s in exposed_ids:
        blocks_e[ratio_block(scores[s], K)].append(s)
    for s in control_ids:
        blocks_c[ratio_block(scores[s], K)].append(s)
    parts = []
    for k in range(1, K + 1):
        key = (k, tuple(blocks_e[k]), tuple(blocks_c[k]))
        if cache is not None and key in cache:
            parts.append(cache[key])
            continue
        block = match_block(dm.submatrix(blocks_e[k], blocks_c[k]), k, stratum)
        if cache is not None:
            cache[key] = block
        parts.append(block)
    return concat(parts)


COMPARISONS = ("FB_vs_AC", "FB_vs_SC", "FB_vs_NSC", "SC_vs_NSC")
COMPARISON_SLUGS = {"fb-ac": "FB_vs_AC", "fb-sc": "FB_vs_SC", "fb-nsc": "FB_vs_NSC", "sc-nsc": "SC_vs_NSC"}
_ROLES = {
    "FB_vs_AC": ((FOOTBALL,), (SPORT_CONTROL, NONSPORT_CONTROL), "FB", "AC"),
    "FB_vs_SC": ((FOOTBALL,), (SPORT_CONTROL,), "FB", "SC"),
    "FB_vs_NSC": ((FOOTBALL,), (NONSPORT_CONTROL,), "FB", "NSC"),
    "SC_vs_NSC": ((SPORT_CONTROL,), (NONSPORT_CONTROL,), "SC", "NSC"),
}


@dataclass(frozen=True)
class ComparisonPlan:
    name: str
    exposed_groups: tuple[str, ...]
    control_groups: tuple[str, ...]
    exposed_label: str
    control_label: str
    exposed_ids: tuple[str, ...] = ()
    control_ids: tuple[str, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.exposed_ids or not self.control_ids

    @property
    def title(self) -> str:
        return f"{self.exposed_label} vs {self.control_label}"

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return self.exposed_ids + self.control_ids


def build_comparisons(subjects: Sequence[Subject]) -> list[ComparisonPlan]:
    """The four comparisons; in SC_vs_NSC the sport controls take the exposed role."""
    plans = []
    for name in COMPARISONS:
        eg, cg, el, cl = _ROLES[name]
        plans.append(
            ComparisonPlan(
                name,
                eg,
                cg,
                el,
                cl,
                tuple(s.id for s in subjects if s.group in eg),
                tuple(s.id for s in subjects if s.group in cg),
            )
        )
    return plans


@dataclass
class KSelection:
    K: int
    matching: Matching
    table: list[dict] = field(default_factory=list)
    balanced: bool = True


def select_K(
    candidates: Mapping[int, Matching],
    max_abs_std_diff: Mapping[int, float],
    threshold: float = 0.2,
) -> KSelection:
    """Pick the balanced K (max |std diff| < threshold) that matches the most
    subjects, preferring the smaller K on ties. With no balanced K, the K with
    the smallest max |std diff| is returned and flagged."""
    table = []
    for K in sorted(candidates):
        m = candidates[K]
        table.append(
            {
                "K": K,
                "n_matched": m.n_matched,
                "n_sets": len(m.sets),
                "max_abs_std_diff": float(max_abs_std_diff[K]),
                "balanced": bool(max_abs_std_diff[K] < threshold),
            }
        )
    ok = [row for row in table if row["balanced"]]
    if ok:
        best = max(ok, key=lambda r: (r["n_matched"], -r["K"]))
        return KSelection(best["K"], candidates[best["K"]], table, True)
    best = min(table, key=lambda r: (r["max_abs_std_diff"], r["K"]))
    return KSelection(best["K"], candidates[best["K"]], table, False)

