import itertools

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from oracles import brute_force_assignment, brute_force_injection
from conftest import matching_from
from cohort_matcher.cohort import FOOTBALL, NONSPORT_CONTROL, SPORT_CONTROL, Subject
from cohort_matcher.distance import DistanceMatrix, rank_mahalanobis_matrix
from cohort_matcher.errors import InfeasibleMatchError
from cohort_matcher.flow import min_cost_assignment, scale_costs
from cohort_matcher.matcher import (
    MatchedSet,
    Matching,
    build_comparisons,
    match_block,
    optimal_assignment,
    pair_match_discard,
    ratio_block,
    select_K,
    variable_ratio_match,
)


def _dm(entries):
    entries = np.asarray(entries, dtype=float)
    return DistanceMatrix(
        tuple(f"e{i}" for i in range(entries.shape[0])),
        tuple(f"c{j}" for j in range(entries.shape[1])),
        entries,
    )


def _scaled_total(m: Matching, dm: DistanceMatrix) -> int:
    cost = scale_costs(dm.entries)
    e = {s: i for i, s in enumerate(dm.exposed_ids)}
    c = {s: j for j, s in enumerate(dm.control_ids)}
    return int(sum(cost[e[ms.exposed_id], c[x]] for ms in m.sets for x in ms.control_ids))


def test_single_pair():
    m = optimal_assignment(_dm([[0.7]]), 1)
    assert len(m.sets) == 1
    assert m.sets[0].control_ids == ("c0",)
    assert m.total_distance == 0.7


def test_three_by_five_matches_enumeration(rng):
    dm = _dm(rng.random((3, 5)))
    cost = scale_costs(dm.entries)
    best = min(sum(cost[i, p[i]] for i in range(3)) for p in itertools.permutations(range(5), 3))
    assert len(list(itertools.permutations(range(5), 3))) == 5 * 4 * 3
    assert _scaled_total(optimal_assignment(dm, 1), dm) == best


def test_two_by_four_pairs_of_controls(rng):
    dm = _dm(rng.random((2, 4)))
    cost = scale_costs(dm.entries)
    best = None
    for first in itertools.combinations(range(4), 2):
        rest = tuple(j for j in range(4) if j not in first)
        for a, b in ((first, rest), (rest, first)):
            total = sum(cost[0, j] for j in a) + sum(cost[1, j] for j in b)
            best = total if best is None else min(best, total)
    m = optimal_assignment(dm, 2)
    assert all(len(ms.control_ids) == 2 for ms in m.sets)
    assert _scaled_total(m, dm) == best


def test_spill_rule_lowers_ratio():
    m = optimal_assignment(_dm(np.ones((2, 3))), 2)
    assert [len(ms.control_ids) for ms in m.sets] == [1, 1]
    assert len(m.discarded_controls) == 1


def test_too_few_controls_is_infeasible():
    with pytest.raises(InfeasibleMatchError):
        optimal_assignment(_dm(np.ones((3, 2))), 1)


def test_pair_discard_two_by_one():
    m = pair_match_discard(_dm([[1.0], [2.0]]))
    assert m.sets[0].exposed_id == "e0"
    assert m.sets[0].distance == 1.0
    assert m.discarded_exposed == ("e1",)


def test_pair_discard_four_by_two(rng):
    dm = _dm(rng.random((4, 2)))
    m = pair_match_discard(dm)
    assert _scaled_total(m, dm) == brute_force_injection(scale_costs(dm.entries))
    assert len(m.discarded_exposed) == 2


def test_pair_discard_square_keeps_everyone(rng):
    m = pair_match_discard(_dm(rng.random((3, 3))))
    assert m.discarded_exposed == ()
    assert len(m.sets) == 3


@pytest.mark.parametrize(
    "score,K,block",
    [(0.30, 3, 3), (0.60, 3, 1), (0.5, 3, 2), (1 / 3, 4, 3), (0.25, 3, 3), (0.01, 8, 8), (1.0, 8, 1)],
)
def test_ratio_blocks(score, K, block):
    assert ratio_block(score, K) == block


def test_block_rule_chooses_pair_discard():
    m = match_block(_dm(np.ones((3, 2))), 2)
    assert len(m.discarded_exposed) == 1
    assert all(ms.block_k == 2 for ms in m.sets)


def test_empty_stratum_gives_empty_matching():
    dm = DistanceMatrix((), (), np.zeros((0, 0)))
    assert variable_ratio_match([], [], {}, dm, 3) == Matching()


def test_variable_ratio_blocks_equal_brute_force(rng):
    n = 30
    ids = [f"s{i:02d}" for i in range(n)]
    exposed = rng.random(n) < 0.35
    x = rng.standard_normal((n, 1))
    scores = dict(zip(ids, rng.uniform(0.12, 0.9, n)))
    dm = rank_mahalanobis_matrix(x, exposed, ids)
    e_ids = [s for s, f in zip(ids, exposed) if f]
    c_ids = [s for s, f in zip(ids, exposed) if not f]
    K = 3
    m = variable_ratio_match(e_ids, c_ids, scores, dm, K)
    for k in range(1, K + 1):
        be = sorted(s for s in e_ids if ratio_block(scores[s], K) == k)
        bc = sorted(s for s in c_ids if ratio_block(scores[s], K) == k)
        sets = [ms for ms in m.sets if ms.block_k == k]
        if not be or not bc:
            assert not sets
            continue
        sub = dm.submatrix(be, bc)
        cost = scale_costs(sub.entries)
        if len(be) > len(bc):
            expected = brute_force_injection(cost)
        else:
            expected = brute_force_assignment(cost, min(k, len(bc) // len(be)))
        assert _scaled_total(Matching(tuple(sets)), sub) == expected


def test_variable_ratio_cache_is_transparent(rng):
    n = 40
    ids = [f"s{i:02d}" for i in range(n)]
    exposed = rng.random(n) < 0.3
    scores = dict(zip(ids, rng.uniform(0.05, 0.95, n)))
    dm = rank_mahalanobis_matrix(rng.standard_normal((n, 2)), exposed, ids)
    e_ids = [s for s, f in zip(ids, exposed) if f]
    c_ids = [s for s, f in zip(ids, exposed) if not f]
    cache = {}
    for K in (2, 3, 4):
        assert variable_ratio_match(e_ids, c_ids, scores, dm, K, cache=cache) == variable_ratio_match(
            e_ids, c_ids, scores, dm, K
        )


def test_k_below_two_rejected():
    with pytest.raises(ValueError):
        variable_ratio_match(["a"], ["b"], {"a": 0.5, "b": 0.5}, _dm([[1.0]]), 1)


def test_select_k_prefers_most_matched():
    cands = {2: matching_from([1, 2]), 3: matching_from([1, 2, 3]), 4: matching_from([3, 3])}
    sel = select_K(cands, {2: 0.1, 3: 0.15, 4: 0.1})
    assert sel.K == 3
    assert sel.balanced


def test_select_k_tie_goes_to_smaller():
    cands = {2: matching_from([2]), 3: matching_from([2])}
    assert select_K(cands, {2: 0.1, 3: 0.05}).K == 2


def test_select_k_singleton_range():
    sel = select_K({2: matching_from([1])}, {2: 0.01})
    assert sel.K == 2
    assert len(sel.table) == 1


def test_select_k_unbalanced_falls_back():
    cands = {2: matching_from([1]), 3: matching_from([1, 1]), 4: matching_from([2, 2])}
    sel = select_K(cands, {2: 0.4, 3: 0.3, 4: 0.5})
    assert sel.K == 3
    assert not sel.balanced


def _subjects(groups):
    return [Subject(f"s{i}", g, {}, {}) for i, g in enumerate(groups)]


def test_four_comparisons():
    plans = build_comparisons(_subjects([FOOTBALL, SPORT_CONTROL, NONSPORT_CONTROL, FOOTBALL]))
    assert [p.name for p in plans] == ["FB_vs_AC", "FB_vs_SC", "FB_vs_NSC", "SC_vs_NSC"]
    assert not any(p.empty for p in plans)
    ac = plans[0]
    assert ac.exposed_ids == ("s0", "s3")
    assert ac.control_ids == ("s1", "s2")
    sc_nsc = plans[3]
    assert set(sc_nsc.exposed_ids).isdisjoint(sc_nsc.control_ids)


def test_missing_sport_controls_empty_plans():
    plans = build_comparisons(_subjects([FOOTBALL, NONSPORT_CONTROL]))
    assert [p.empty for p in plans] == [False, True, False, True]


def test_matching_rejects_reuse():
    with pytest.raises(ValueError):
        Matching((MatchedSet("e", ("c",)), MatchedSet("f", ("c",))))


def test_matched_set_needs_control():
    with pytest.raises(ValueError):
        MatchedSet("e", ())


def test_restrict_and_composition():
    m = matching_from([1, 2, 3])
    assert m.composition() == {1: 1, 2: 1, 3: 1}
    r = m.restrict({"e1", "c1_0", "e2", "c2_0", "c2_1", "e0"})
    assert [len(ms.control_ids) for ms in r.sets] == [1, 2]


def test_flow_matches_scipy(rng):
    for _ in range(20):
        c = rng.integers(0, 1000, size=(rng.integers(1, 12), 15))
        rows = min_cost_assignment(c, 1)
        r, col = linear_sum_assignment(c)
        assert sum(c[i, rows[i][0]] for i in range(c.shape[0])) == c[r, col].sum()


def test_flow_requires_integers():
    with pytest.raises(TypeError):
        min_cost_assignment(np.ones((2, 2)))
    with pytest.raises(ValueError):
        min_cost_assignment(np.ones((2, 3), dtype=int), 2)


def test_infinite_costs_are_avoided():
    d = np.array([[np.inf, 1.0], [2.0, np.inf]])
    rows = min_cost_assignment(scale_costs(d), 1)
    assert rows == [[1], [0]]
