from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_plan
from replan.errors import InputError
from replan.plan import PopType, parse_plan
from replan.rdf import (
    HAS_CARD, HAS_INNER, HAS_OUTER, HAS_OUTPUT, HAS_POP_TYPE, IRI, Literal, MissingPropertyError, Triple,
    TripleGraph, dump_graph, graph_to_plan, load_graph, match_basic, plan_to_graph, pop_iri,
)
from test_plan import MINIMAL, SPILL_FRAGMENT

NESTED_INDEX_PLAN = """POP 1 RETURN
CARD 1372
ROWSZ 64
COST 9000
INPUTS 2

POP 2 NLJOIN
CARD 1372
ROWSZ 64
COST 9000
INPUTS 3 4

POP 3 TBSCAN
CARD 500
ROWSZ 32
COST 100
TABLE STORE s

POP 4 NLJOIN
CARD 3
ROWSZ 32
COST 17
INPUTS 5 7

POP 5 FETCH
CARD 2
ROWSZ 16
COST 8
INPUTS 6

POP 6 IXSCAN
CARD 2
ROWSZ 16
COST 4
TABLE CATALOG_SALES cs
INDEX CS_SOLD_DATE

POP 7 FETCH
CARD 1
ROWSZ 16
COST 8
INPUTS 8

POP 8 IXSCAN
CARD 1
ROWSZ 16
COST 4
TABLE DATE_DIM d
INDEX D_DATE_SK
"""


def test_join_pop_triples():
    g = plan_to_graph(parse_plan(SPILL_FRAGMENT.replace("MSJOIN", "NLJOIN")))
    p2 = pop_iri(2)
    assert Triple(p2, HAS_POP_TYPE, Literal("NLJOIN")) in g
    assert Triple(p2, HAS_CARD, Literal(2949250.0)) in g
    assert Triple(p2, HAS_OUTER, pop_iri(3)) in g
    assert Triple(pop_iri(3), HAS_OUTPUT, p2) in g
    assert Triple(p2, HAS_INNER, pop_iri(5)) in g


def test_minimal_graph_round_trip():
    plan = parse_plan(MINIMAL)
    assert graph_to_plan(plan_to_graph(plan)) == plan


def test_nested_index_plan_round_trip():
    plan = parse_plan(NESTED_INDEX_PLAN)
    back = graph_to_plan(plan_to_graph(plan))
    assert back == plan
    assert back[4].pop_type is PopType.NLJOIN
    assert [back[c].pop_type for c in back[4].inputs] == [PopType.FETCH, PopType.FETCH]


def test_missing_pop_type_is_reported():
    g = plan_to_graph(parse_plan(MINIMAL))
    g.remove(Triple(pop_iri(2), HAS_POP_TYPE, Literal("TBSCAN")))
    with pytest.raises(MissingPropertyError):
        graph_to_plan(g)


def test_match_basic_lookups():
    g = plan_to_graph(parse_plan(SPILL_FRAGMENT))
    assert len(match_basic(g, s=pop_iri(2))) >= 3
    t = Triple(pop_iri(2), HAS_POP_TYPE, Literal("MSJOIN"))
    assert match_basic(g, t.s, t.p, t.o) == [t]
    assert match_basic(g, p=IRI("http://replan/qep/property/nothing")) == []
    assert len(match_basic(g)) == len(g)


def test_graph_is_a_set_and_indexes_follow_mutations():
    g = TripleGraph()
    t = Triple(pop_iri(1), HAS_POP_TYPE, Literal("RETURN"))
    assert g.add(t) and not g.add(t)
    assert len(g) == 1 and g.match(p=HAS_POP_TYPE) == [t]
    assert g.remove(t) and not g.remove(t)
    assert g.match(p=HAS_POP_TYPE) == [] and g.match(s=pop_iri(1)) == []


def test_literal_cannot_be_a_subject():
    with pytest.raises((InputError, TypeError)):
        load_graph('"x" <http://replan/qep/property/hasPopType> "y"\n')


def test_text_form_round_trip_with_awkward_strings():
    g = TripleGraph([Triple(pop_iri(1), HAS_POP_TYPE, Literal('a "quoted" \\ value\nwith newline')),
                     Triple(pop_iri(1), HAS_CARD, Literal(0.1))])
    assert load_graph(dump_graph(g)) == g


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32))
def test_codec_is_a_bijection_on_random_plans(seed):
    plan = random_plan(random.Random(seed))
    g = plan_to_graph(plan)
    assert graph_to_plan(g, plan.query_id) == plan
    assert plan_to_graph(graph_to_plan(g)) == g
    assert load_graph(dump_graph(g)) == g
