from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_plan
from replan.bench import mutate_joins
from replan.errors import InputError
from replan.learning import (
    LearnConfig, Rewrite, abstract, discover, kmeans_filter, kmeans_filter_bruteforce, learn_workload, rank,
    segment_query, split_sse, unique_subqueries,
)
from replan.plan import Lolepop, Plan, PopType, TableRef, parse_plan, serialize_plan
from replan.pattern import HAS_HIGHER_CARD, HAS_LOWER_CARD
from replan.rdf import HAS_TABLE_INSTANCE, HAS_TABLE_NAME, Literal, Triple, pop_iri
from replan.scenarios import mixed_workload, motif_workload, rename_workload, suite_catalog
from replan.sim.cost import RuntimeStats
from replan.sim.query import parse_workload
from test_plan import MINIMAL, SPILL_FRAGMENT

CATALOG = suite_catalog()

WEB = parse_workload("""QUERY web
REF WEB_SALES ws
REF ITEM i
REF DATE_DIM d
JOIN ws.WS_ITEM_SK = i.I_ITEM_SK EST 0.00001 TRUE 0.00001
JOIN ws.WS_SOLD_DATE_SK = d.D_DATE_SK EST 0.0000137 TRUE 0.0000137
""")[0]


def _stats(elapsed, reads=100):
    return RuntimeStats(elapsed, reads, 0, 1.0, 0)


# ---------------------------------------------------------------------------
# run filtering


def test_kmeans_drops_the_slow_outlier():
    assert kmeans_filter([10, 10, 11, 100]) == ([0, 1, 2], [3])


def test_kmeans_keeps_identical_runs():
    assert kmeans_filter([5, 5, 5, 5]) == ([0, 1, 2, 3], [])


def test_kmeans_two_values():
    assert kmeans_filter([100, 1]) == ([1], [0])


def test_kmeans_ignores_small_spread():
    assert kmeans_filter([100, 101, 102, 103]) == ([0, 1, 2, 3], [])


@pytest.mark.parametrize("values", [[], [3.0]])
def test_kmeans_needs_two_values(values):
    with pytest.raises(InputError):
        kmeans_filter(values)


def _same_split(a, b, values):
    if a == b:
        return True
    # distinct partitions are acceptable only when both are optimal
    sa, sb = split_sse(values, a[0]), split_sse(values, b[0])
    return abs(sa - sb) <= 1e-9 * max(1.0, sum(v * v for v in values))


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=1e6, allow_nan=False), min_size=2, max_size=100))
def test_kmeans_matches_exhaustive_search(values):
    assert _same_split(kmeans_filter(values), kmeans_filter_bruteforce(values), values)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=20), min_size=2, max_size=30))
def test_kmeans_matches_exhaustive_search_with_ties(values):
    values = [float(v) for v in values]
    assert _same_split(kmeans_filter(values), kmeans_filter_bruteforce(values), values)


# ---------------------------------------------------------------------------
# ranking


def test_rank_prefers_lower_median():
    a, b = parse_plan(MINIMAL), parse_plan(SPILL_FRAGMENT)
    assert rank([(a, [_stats(100)] * 3), (b, [_stats(60)] * 3)]) is b


def test_rank_breaks_near_ties_on_logical_reads():
    a, b = parse_plan(MINIMAL), parse_plan(SPILL_FRAGMENT)
    assert rank([(a, [_stats(100, 500)] * 3), (b, [_stats(100.5, 400)] * 3)]) is b


def test_rank_ignores_anomalous_runs():
    a, b = parse_plan(MINIMAL), parse_plan(SPILL_FRAGMENT)
    noisy = [_stats(50), _stats(51), _stats(50), _stats(900), _stats(950)]
    assert rank([(a, noisy), (b, [_stats(70)] * 5)]) is a


def test_rank_single_candidate():
    a = parse_plan(MINIMAL)
    assert rank([(a, [_stats(1)])]) is a


def test_rank_needs_candidates():
    with pytest.raises(InputError):
        rank([])


def test_rank_does_not_depend_on_candidate_order():
    a, b = parse_plan(MINIMAL), parse_plan(SPILL_FRAGMENT)
    cands = [(a, [_stats(100, 400)] * 3), (b, [_stats(100, 400)] * 3)]
    assert rank(cands) is rank(cands[::-1])


# ---------------------------------------------------------------------------
# segmentation


def test_segments_with_one_join():
    subs = segment_query(WEB, 1)
    assert [s.tables for s in subs] == [("ws", "i"), ("ws", "d")]


def test_segments_with_two_joins_add_the_whole_query():
    subs = segment_query(WEB, 2)
    assert len(subs) == 3
    assert subs[-1].tables == ("ws", "i", "d")


def test_disconnected_pairs_are_skipped():
    assert ("i", "d") not in [s.tables for s in segment_query(WEB, 2)]


def test_single_table_query_has_no_segments():
    q = parse_workload("QUERY one\nREF ITEM i\n")[0]
    assert segment_query(q, 4) == []


def test_identical_subqueries_are_deduplicated():
    q2 = parse_workload("""QUERY web2
REF WEB_SALES ws
REF ITEM i
JOIN ws.WS_ITEM_SK = i.I_ITEM_SK EST 0.00001 TRUE 0.00001
""")[0]
    unique, total = unique_subqueries([WEB, q2], 2)
    assert total == 4 and len(unique) == 3


# ---------------------------------------------------------------------------
# discovery and abstraction


def _spill_rewrites():
    sub = segment_query(motif_workload("sort_spill")[0], 4)[0]
    return discover(sub, CATALOG, LearnConfig())


def test_discover_finds_hash_join_for_spilling_sort():
    rws = _spill_rewrites()
    anchored = [r for r in rws if "spill_q1:e+o" in r.stats_context]
    assert anchored
    r = max(anchored, key=lambda r: r.improvement_ratio)
    prob = r.problem_plan[r.problem_plan[r.problem_plan.root].inputs[0]]
    sol = r.solution_plan[r.solution_plan[r.solution_plan.root].inputs[0]]
    assert prob.pop_type is PopType.MSJOIN and sol.pop_type is PopType.HSJOIN
    outer = lambda plan, j: next(p.table_ref.instance for p in plan.preorder(j.inputs[0]) if p.table_ref)
    assert outer(r.problem_plan, prob) != outer(r.solution_plan, sol)
    assert all(x.improvement_ratio >= 1.10 for x in rws)


def test_each_winning_interval_gets_its_own_rewrite():
    rws = _spill_rewrites()
    assert len(rws) >= 2
    pairs = {(serialize_plan(r.problem_plan), serialize_plan(r.solution_plan)) for r in rws}
    assert len(pairs) == len(rws)
    contexts = [set(r.stats_context) for r in rws]
    assert all(not (a & b) for i, a in enumerate(contexts) for b in contexts[i + 1:])


def test_discover_finds_nothing_for_accurate_estimates():
    for q in motif_workload("healthy"):
        for sub in segment_query(q, 4):
            assert discover(sub, CATALOG, LearnConfig()) == []


def test_abstraction_labels_and_bounds():
    r = max(_spill_rewrites(), key=lambda r: r.improvement_ratio)
    t = abstract(r, "wl", "2024-01-01T00:00:00Z", "t1")
    names = {str(x.o) for x in t.pattern_graph if x.p == HAS_TABLE_NAME}
    insts = {str(x.o) for x in t.pattern_graph if x.p == HAS_TABLE_INSTANCE}
    assert names == {"T1", "T2"} and insts == {"Q1", "Q2"}
    assert t.n_joins == 1
    assert sorted(leaf.tabid for leaf in t.guideline.leaves()) == ["Q1", "Q2"]
    assert t.provenance.query_id.startswith("spill_q1")


def test_cardinality_bounds_become_triples():
    plan = parse_plan(SPILL_FRAGMENT)
    rw = Rewrite(plan, plan, 2.0, {(2, "Cardinality"): (19771.0, 128500.0)}, ())
    t = abstract(rw, template_id="t")
    assert Triple(pop_iri(1), HAS_LOWER_CARD, Literal(19771.0)) in t.pattern_graph
    assert Triple(pop_iri(1), HAS_HIGHER_CARD, Literal(128500.0)) in t.pattern_graph


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32))
def test_abstraction_ignores_concrete_names(seed):
    rng = random.Random(seed)
    plan = random_plan(rng, max_tables=5)
    if not any(p.pop_type.is_join for p in plan.pops.values()):
        return
    ren = {}

    def rename(p: Lolepop) -> Lolepop:
        if p.table_ref is None:
            return p
        tn = ren.setdefault(p.table_ref.table_name, f"X{len(ren)}")
        return Lolepop(p.id, p.pop_type, p.est_cardinality, p.est_row_size, p.est_cost,
                       TableRef(tn, "z" + p.table_ref.instance), p.index_name and "IX_" + p.index_name, p.inputs)

    other = Plan(plan.root, {k: rename(p) for k, p in plan.pops.items()}, plan.query_id)
    sol = mutate_joins(plan, random.Random(seed))
    sol_other = Plan(sol.root, {k: rename(p) for k, p in sol.pops.items()}, sol.query_id)
    a = abstract(Rewrite(plan, sol, 2.0, {}, ()), "w", "ts", "t")
    b = abstract(Rewrite(other, sol_other, 2.0, {}, ()), "w", "ts", "t")
    assert a.same_content(b)
    assert len(a.guideline.leaves()) == a.n_joins + 1


# ---------------------------------------------------------------------------
# whole workloads


def test_empty_workload_learns_nothing():
    res = learn_workload([], CATALOG, LearnConfig())
    assert len(res.kb) == 0 and res.n_subqueries == 0


def test_mixed_workload_learns_several_motifs():
    res = learn_workload(mixed_workload(), CATALOG, LearnConfig(seed=1), "mixed", "2024-01-01T00:00:00Z")
    assert len(res.kb) >= 3
    sources = {t.provenance.query_id.split("_")[0] for t in res.kb.templates.values()}
    assert len(sources) >= 3
    assert not any(t.provenance.query_id.startswith("healthy") for t in res.kb.templates.values())


def test_learning_is_deterministic_and_rename_invariant():
    wl = motif_workload("sort_spill") + motif_workload("stale_range")
    cfg = LearnConfig(seed=3)
    a = learn_workload(wl, CATALOG, cfg, "w", "ts")
    b = learn_workload(wl, CATALOG, cfg, "w", "ts")
    assert a.kb.same_content(b.kb)
    cat2, wl2, _ = rename_workload(CATALOG, wl)
    c = learn_workload(wl2, cat2, cfg, "w", "ts")
    assert len(a.kb) == len(c.kb)
    assert {t.structure_key() for t in a.kb.templates.values()} == {t.structure_key() for t in c.kb.templates.values()}


def test_parallel_learning_matches_serial():
    wl = motif_workload("sort_spill")
    a = learn_workload(wl, CATALOG, LearnConfig(workers=1), "w", "ts")
    b = learn_workload(wl, CATALOG, LearnConfig(workers=2), "w", "ts")
    assert a.kb.same_content(b.kb)
