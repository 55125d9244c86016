from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_plan
from replan.plan import (
    ArityError, CycleError, DuplicateIdError, Lolepop, Plan, PlanStructureError, PlanSyntaxError, PopType,
    TableRef, count_join_windows_bruteforce, enumerate_subplans, format_number, parse_plan, serialize_plan,
)

SPILL_FRAGMENT = """PLAN spill
POP 1 RETURN
CARD 2949250
ROWSZ 200
COST 150000.5
INPUTS 2

POP 2 MSJOIN
CARD 2949250
ROWSZ 200
COST 150000.5
INPUTS 3 5

POP 3 SORT
CARD 8000
ROWSZ 100
COST 70000
INPUTS 4

POP 4 TBSCAN
CARD 8000
ROWSZ 100
COST 48829
TABLE ENTRY_IDX e

POP 5 SORT
CARD 900000
ROWSZ 100
COST 60000
INPUTS 6

POP 6 TBSCAN
CARD 900000
ROWSZ 100
COST 24415
TABLE OPEN_IN o
"""

MINIMAL = "POP 1 RETURN\nCARD 10\nROWSZ 8\nCOST 3\nINPUTS 2\n\nPOP 2 TBSCAN\nCARD 10\nROWSZ 8\nCOST 3\nTABLE T t\n"


def left_deep(n_tables: int) -> Plan:
    pops = {1: Lolepop(1, PopType.RETURN, 1, 8, 1, inputs=(2,))}
    scans = [Lolepop(100 + k, PopType.TBSCAN, 10, 8, 1, TableRef("T", f"t{k}")) for k in range(n_tables)]
    for s in scans:
        pops[s.id] = s
    below = scans[0].id
    for k in range(1, n_tables):
        jid = 50 - k
        pops[jid] = Lolepop(jid, PopType.HSJOIN, 10, 8, 1, inputs=(below, scans[k].id))
        below = jid
    pops[1] = Lolepop(1, PopType.RETURN, 1, 8, 1, inputs=(below,))
    return Plan(1, pops)


def test_parse_fragment_keeps_join_cardinality():
    plan = parse_plan(SPILL_FRAGMENT)
    assert plan.query_id == "spill"
    assert plan[2].pop_type is PopType.MSJOIN
    assert plan[2].est_cardinality == 2949250
    assert plan[2].outer == 3 and plan[2].inner == 5


def test_minimal_plan_has_two_pops():
    plan = parse_plan(MINIMAL)
    assert len(plan.pops) == 2
    assert serialize_plan(plan) == MINIMAL


def test_join_with_one_input_is_an_arity_error():
    bad = MINIMAL.replace("INPUTS 2", "INPUTS 3") + "\nPOP 3 HSJOIN\nCARD 1\nROWSZ 8\nCOST 1\nINPUTS 2\n"
    with pytest.raises(ArityError):
        parse_plan(bad)


@pytest.mark.parametrize("text, err", [
    ("POP 1 RETURN\nCARD x\nROWSZ 8\nCOST 1\n", PlanSyntaxError),
    ("POP 1 RETURN\nCARD 1\nROWSZ 8\nCOST 1\nINPUTS 9\n", PlanStructureError),
    (MINIMAL + "\nPOP 2 TBSCAN\nCARD 1\nROWSZ 8\nCOST 1\nTABLE T u\n", DuplicateIdError),
    ("POP 1 RETURN\nCARD 1\nROWSZ 8\nCOST 1\nINPUTS 2\n\nPOP 2 SORT\nCARD 1\nROWSZ 8\nCOST 1\nINPUTS 3\n\n"
     "POP 3 SORT\nCARD 1\nROWSZ 8\nCOST 1\nINPUTS 2\n", CycleError),
    ("POP 1 BOGUS\nCARD 1\nROWSZ 8\nCOST 1\n", PlanSyntaxError),
    ("POP 1 RETURN\nCARD 1\nROWSZ 8\nCOST 1\nINPUTS 2\n\nPOP 2 TBSCAN\nCARD 1\nROWSZ 8\nCOST 1\n", PlanStructureError),
])
def test_malformed_plans_are_rejected(text, err):
    with pytest.raises(err):
        parse_plan(text)


def test_syntax_errors_name_line_and_column():
    with pytest.raises(PlanSyntaxError) as e:
        parse_plan("POP 1 RETURN\nCARD 1\nROWSZ eight\nCOST 1\n")
    assert e.value.line == 3
    assert "line 3" in str(e.value)


def test_hash_join_lists_outer_input_first():
    text = SPILL_FRAGMENT.replace("MSJOIN", "HSJOIN").replace("INPUTS 3 5", "INPUTS 4 6")
    text = text.replace("POP 3 SORT\nCARD 8000\nROWSZ 100\nCOST 70000\nINPUTS 4\n\n", "")
    text = text.replace("POP 5 SORT\nCARD 900000\nROWSZ 100\nCOST 60000\nINPUTS 6\n\n", "")
    out = serialize_plan(parse_plan(text))
    assert out.index("TABLE ENTRY_IDX") < out.index("TABLE OPEN_IN")
    assert "INPUTS 4 6" in out


@pytest.mark.parametrize("x, text", [(3.0, "3"), (2949250.0, "2949250"), (0.5, "0.5"), (1e-7, "1e-07")])
def test_format_number(x, text):
    assert format_number(x) == text


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32))
def test_serialize_is_idempotent(seed):
    plan = random_plan(random.Random(seed))
    text = serialize_plan(plan)
    assert parse_plan(text) == plan
    assert serialize_plan(parse_plan(text)) == text


def test_subplans_of_three_table_left_deep_plan():
    plan = left_deep(3)
    assert len(enumerate_subplans(plan, 1)) == 2
    subs = enumerate_subplans(plan, 2)
    assert len(subs) == 3
    assert [s.n_joins for s in subs] == [1, 1, 2]


def test_subplans_climb_bottom_up_to_the_top_join():
    plan = left_deep(5)
    subs = enumerate_subplans(plan, 4)
    assert subs[0].root == 49  # lowest join first
    assert subs[-1].root == 46 and subs[-1].n_joins == 4


def test_single_scan_plan_has_no_subplans():
    assert enumerate_subplans(parse_plan(MINIMAL), 4) == []


def test_subplan_windows_stop_at_cut_joins():
    plan = left_deep(4)
    top = next(s for s in enumerate_subplans(plan, 1) if s.root == 47)
    assert 48 not in top.pops and 103 in top.pops


def test_max_joins_must_be_positive():
    with pytest.raises(ValueError):
        enumerate_subplans(left_deep(2), 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32), st.integers(min_value=1, max_value=5))
def test_window_count_matches_subset_oracle(seed, max_joins):
    plan = random_plan(random.Random(seed), max_tables=9)
    assert len(enumerate_subplans(plan, max_joins)) == count_join_windows_bruteforce(plan, max_joins)
