"""Seeded generators shared by the test modules."""

from __future__ import annotations

import random

from replan.bench import mutate_joins, synthetic_plan
from replan.kb import KnowledgeBase
from replan.pattern import DistinctFilter, NumericFilter, PathPattern, PatternQuery, TriplePattern, Var
from replan.plan import Lolepop, Plan, PopType
from replan.learning import Rewrite, abstract
from replan.rdf import IRI, Literal, TripleGraph, plan_to_graph
from replan.template import Template

NUMBER_FORMS = (
    lambda r: float(r.randint(1, 10 ** 7)),
    lambda r: round(r.uniform(0.5, 1e6), r.randint(0, 6)),
    lambda r: r.choice((2949250.0, 2.8804e6, 550597.0, 19771.0, 128500.0, 1372.0)),
    lambda r: r.uniform(1, 1e9),
)


def random_plan(rng: random.Random, max_tables: int = 8) -> Plan:
    """A random valid plan with awkward numbers and non-sequential pop ids."""
    base = synthetic_plan(rng.randint(1, max_tables), rng, query_id=rng.choice(("", f"q{rng.randrange(99)}")))
    ids = rng.sample(range(1, 4 * len(base.pops) + 1), len(base.pops))
    remap = dict(zip(sorted(base.pops), ids))
    pops = {}
    for pid, p in base.pops.items():
        pops[remap[pid]] = Lolepop(
            remap[pid], p.pop_type, rng.choice(NUMBER_FORMS)(rng), rng.randint(1, 4000),
            rng.choice(NUMBER_FORMS)(rng), p.table_ref, p.index_name, tuple(remap[c] for c in p.inputs))
    return Plan(remap[base.root], pops, base.query_id)


def small_graph(rng: random.Random, max_pops: int = 12) -> tuple[Plan, TripleGraph]:
    while True:
        plan = random_plan(rng, max_tables=5)
        if len(plan.pops) <= max_pops:
            return plan, plan_to_graph(plan)


def random_pattern_query(rng: random.Random, graph: TripleGraph, max_vars: int = 6) -> PatternQuery:
    """Patterns sampled from the graph's own triples, with some positions abstracted to variables.

    Constants are sometimes perturbed so empty answers are exercised too.
    """
    triples = graph.sorted()
    names: dict[object, str] = {}
    pats: list[TriplePattern] = []

    def term(t):
        if rng.random() < 0.7 and (t in names or len(names) < max_vars):
            if t not in names:
                names[t] = f"v{len(names)}"
            return Var(names[t])
        if isinstance(t, Literal) and rng.random() < 0.2:
            return Literal(t.value + 1) if t.is_number else Literal(str(t.value) + "x")
        return t

    for _ in range(rng.randint(1, 5)):
        t = rng.choice(triples)
        pats.append(TriplePattern(term(t.s), t.p, term(t.o)))
    if rng.random() < 0.2:
        pats.append(TriplePattern(Var("v0") if "v0" in names.values() else rng.choice(triples).s,
                                  IRI("http://replan/qep/property/unused"), Var("zz")))
    pop_vars = sorted({n for t, n in names.items() if isinstance(t, IRI)})
    num_vars = sorted({n for t, n in names.items() if isinstance(t, Literal) and t.is_number})
    paths, filters = [], []
    if len(pop_vars) >= 2 and rng.random() < 0.5:
        a, b = rng.sample(pop_vars, 2)
        paths.append(PathPattern(Var(a), Var(b), rng.randint(1, 2)))
    if pop_vars and rng.random() < 0.3:
        paths.append(PathPattern(Var(rng.choice(pop_vars)), rng.choice(triples).s, 1))
    for v in num_vars:
        if rng.random() < 0.5:
            filters.append(NumericFilter(v, rng.choice(("<=", ">=", "<", ">", "=")), rng.choice(NUMBER_FORMS)(rng)))
    if len(pop_vars) >= 2 and rng.random() < 0.6:
        a, b = rng.sample(pop_vars, 2)
        filters.append(DistinctFilter(a, b, ordered=rng.random() < 0.5))
    q = PatternQuery([], pats, paths, filters)
    chosen = sorted(q.pattern_vars())
    return PatternQuery(rng.sample(chosen, rng.randint(0, len(chosen))) if chosen else [], pats, paths, filters)


def binding_set(rows) -> set[frozenset]:
    return {frozenset(r.items()) for r in rows}


def random_template(rng: random.Random, tid: str | None = None) -> Template:
    """A template abstracted from a random join window (at least one join)."""
    plan = synthetic_plan(rng.randint(2, 4), rng, f"q{rng.randrange(1000)}")
    bounds = {}
    for p in plan.pops.values():
        if p.pop_type is not PopType.RETURN and rng.random() < 0.7:
            c = p.est_cardinality
            bounds[(p.id, "Cardinality")] = (round(c * rng.uniform(0.1, 1), 3), round(c * rng.uniform(1, 10), 3))
        if p.pop_type.is_scan and rng.random() < 0.5:
            bounds[(p.id, "RowSize")] = (float(p.est_row_size), float(p.est_row_size + rng.randint(0, 50)))
    rw = Rewrite(plan, mutate_joins(plan, rng), round(rng.uniform(1.11, 50), 4), bounds, ())
    return abstract(rw, rng.choice(("", "wl", "wl a")), "2024-01-01T00:00:00Z",
                    tid or f"{rng.getrandbits(128):032x}")


def random_kb(rng: random.Random, max_templates: int = 6) -> KnowledgeBase:
    """A normalized KB: no two templates share a structure, as learning guarantees."""
    ts: dict[tuple, Template] = {}
    for _ in range(rng.randint(0, max_templates)):
        t = random_template(rng)
        ts.setdefault(t.structure_key(), t)
    ts = list(ts.values())
    prov = [f"learn run {k} \"quoted\"" for k in range(rng.randint(0, 2))]
    return KnowledgeBase.from_templates(ts, created=rng.choice(("", "2024-05-01T10:00:00Z")), provenance=prov)


TEST_CATALOG = """
TABLE A 1000 100
TABLE B 50000 40
TABLE C 200 64
TABLE ITEM 102000 200
COLUMN A.ID 1000
COLUMN A.BID 500
COLUMN B.ID 50000
COLUMN B.CID 200
COLUMN C.ID 200
COLUMN C.X 20
COLUMN ITEM.CAT 2 PROFILE 1949 74426
COLUMN ITEM.FLAT 4 PROFILE 100 100 100 100
INDEX B_ID ON B(ID) CLUSTERED
INDEX C_ID ON C(ID)
"""
