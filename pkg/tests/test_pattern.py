from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import binding_set, random_pattern_query, small_graph
from replan.pattern import (
    DistinctFilter, NumericFilter, PathPattern, PatternQuery, QueryTooLargeError, TriplePattern, Var,
    compile_pattern_graph, evaluate, evaluate_brute,
)
from replan.plan import parse_plan
from replan.rdf import (
    HAS_CARD, HAS_OUTPUT, HAS_POP_TYPE, IRI, Literal, Triple, TripleGraph, plan_to_graph, pop_iri,
)
from replan.template import with_bounds
from test_rdf import NESTED_INDEX_PLAN

NESTED = plan_to_graph(parse_plan(NESTED_INDEX_PLAN))


def test_select_nljoins():
    q = PatternQuery(["x"], [TriplePattern(Var("x"), HAS_POP_TYPE, Literal("NLJOIN"))])
    assert sorted(str(b["x"]) for b in evaluate(q, NESTED)) == [pop_iri(2).value, pop_iri(4).value]


@pytest.mark.parametrize("op, bound, kept", [("<=", 1372, True), (">=", 1372, True), ("<", 1372, False),
                                             ("<=", 1371.5, False)])
def test_numeric_filters_are_inclusive_where_asked(op, bound, kept):
    q = PatternQuery(["ih"], [TriplePattern(pop_iri(2), HAS_CARD, Var("ih"))], filters=[NumericFilter("ih", op, bound)])
    assert bool(evaluate(q, NESTED)) is kept


def test_empty_query_yields_one_empty_binding():
    assert evaluate(PatternQuery([]), NESTED) == [{}]
    assert evaluate(PatternQuery([]), TripleGraph()) == [{}]


def test_query_over_empty_graph_is_empty():
    q = PatternQuery(["x"], [TriplePattern(Var("x"), HAS_POP_TYPE, Literal("NLJOIN"))])
    assert evaluate(q, TripleGraph()) == [] == evaluate_brute(q, TripleGraph())


def test_path_pattern_follows_output_edges():
    q = PatternQuery(["x"], [TriplePattern(Var("x"), HAS_POP_TYPE, Literal("IXSCAN"))],
                     [PathPattern(Var("x"), pop_iri(2), 3)])
    assert len(evaluate(q, NESTED)) == 2
    q2 = PatternQuery(["x"], q.triple_patterns, [PathPattern(Var("x"), pop_iri(2), 4)])
    assert evaluate(q2, NESTED) == []


def test_unselected_variables_are_projected_away():
    q = PatternQuery(["x"], [TriplePattern(Var("x"), HAS_OUTPUT, Var("y"))])
    rows = evaluate(q, NESTED)
    assert all(set(r) == {"x"} for r in rows)
    assert len(rows) == len({r["x"] for r in rows})


def test_selected_variable_must_occur_in_a_pattern():
    with pytest.raises(ValueError):
        PatternQuery(["nope"], [TriplePattern(Var("x"), HAS_POP_TYPE, Literal("NLJOIN"))])


def test_bounds_compile_to_two_filters():
    g = with_bounds(NESTED, {(2, "Cardinality"): (19771.0, 128500.0)})
    q = compile_pattern_graph(g)
    card_var = next(tp.o.name for tp in q.triple_patterns if tp.s == Var("pop_2") and tp.p == HAS_CARD)
    assert NumericFilter(card_var, ">=", 19771.0) in q.filters
    assert NumericFilter(card_var, "<=", 128500.0) in q.filters


def test_same_typed_pops_get_a_distinctness_filter():
    q = compile_pattern_graph(NESTED)
    assert any(isinstance(f, DistinctFilter) and {f.a, f.b} == {"pop_cs", "pop_d"} for f in q.filters)


def test_edges_compile_to_output_stream_patterns():
    q = compile_pattern_graph(NESTED)
    assert TriplePattern(Var("pop_5"), HAS_OUTPUT, Var("pop_4")) in q.triple_patterns
    assert "?pop_5 predURI:hasOutputStream ?pop_4 ." in q.explain()


def test_compiled_graph_matches_its_source():
    q = compile_pattern_graph(NESTED)
    rows = evaluate(q, NESTED)
    assert len(rows) >= 1
    assert binding_set(rows) == binding_set(evaluate_brute(q, NESTED))


def test_brute_force_refuses_large_graphs():
    g = TripleGraph(Triple(pop_iri(k), HAS_POP_TYPE, Literal("TBSCAN")) for k in range(13))
    with pytest.raises(QueryTooLargeError):
        evaluate_brute(PatternQuery([]), g)


def test_unknown_predicate_matches_nothing():
    q = PatternQuery([], [TriplePattern(Var("x"), IRI("http://replan/qep/property/zzz"), Var("y"))])
    assert evaluate(q, NESTED) == []


@settings(max_examples=300, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32))
def test_evaluator_agrees_with_brute_force(seed):
    rng = random.Random(seed)
    _, g = small_graph(rng)
    q = random_pattern_query(rng, g)
    assert binding_set(evaluate(q, g)) == binding_set(evaluate_brute(q, g))
