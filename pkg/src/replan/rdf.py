"""Triple representation of plans and templates.

A :class:`TripleGraph` is an in-memory set of ``(subject, predicate, object)``
triples with subject, predicate and predicate/object indexes.  ``plan_to_graph``
and ``graph_to_plan`` form a lossless codec between :class:`~replan.plan.Plan`
values and graphs.
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

from .errors import InputError
from .plan import Lolepop, Plan, PopType, TableRef, format_number

POP_NS = "http://replan/qep/pop/"
PROP_NS = "http://replan/qep/property/"


@dataclass(frozen=True, slots=True)
class IRI:
    value: str

    def __str__(self) -> str:
        return self.value

    def n3(self) -> str:
        return f"<{self.value}>"


@dataclass(frozen=True, slots=True)
class Literal:
    """A string or numeric literal.  Numbers compare by value."""

    value: Union[str, float]

    def __post_init__(self):
        v = self.value
        if isinstance(v, bool) or not isinstance(v, (str, int, float)):
            raise TypeError(f"unsupported literal {v!r}")
        if isinstance(v, int):
            object.__setattr__(self, "value", float(v))

    @property
    def is_number(self) -> bool:
        return isinstance(self.value, float)

    def __str__(self) -> str:
        return format_number(self.value) if self.is_number else self.value

    def n3(self) -> str:
        if self.is_number:
            return format_number(self.value)
        return json.dumps(self.value, ensure_ascii=True)


Term = Union[IRI, Literal]


class Triple(NamedTuple):
    s: IRI
    p: IRI
    o: Term


def term_key(t: Term) -> tuple:
    """Total order over terms: IRIs, then strings, then numbers."""
    if isinstance(t, IRI):
        return (0, t.value, 0.0)
    if t.is_number:
        return (2, "", t.value)
    return (1, t.value, 0.0)


def triple_key(t: Triple) -> tuple:
    return (term_key(t.s), term_key(t.p), term_key(t.o))


def pop_iri(pop_id: int | str, ns: str = POP_NS) -> IRI:
    return IRI(f"{ns}{pop_id}")


def prop(name: str) -> IRI:
    return IRI(PROP_NS + name)


HAS_POP_TYPE = prop("hasPopType")
HAS_CARD = prop("hasEstimateCardinality")
HAS_ROW_SIZE = prop("hasRowSize")
HAS_COST = prop("hasCost")
HAS_OUTER = prop("hasOuterInputStream")
HAS_INNER = prop("hasInnerInputStream")
HAS_INPUT = prop("hasInputStream")
HAS_OUTPUT = prop("hasOutputStream")
HAS_TABLE_NAME = prop("hasTableName")
HAS_TABLE_INSTANCE = prop("hasTableInstance")
HAS_INDEX_NAME = prop("hasIndexName")

INPUT_PREDICATES = (HAS_OUTER, HAS_INNER, HAS_INPUT)


class TripleGraph:
    """Set of triples with the indexes needed for pattern evaluation.

    One writer or many readers; graphs handed to matching are not mutated.
    """

    __slots__ = ("_triples", "_by_s", "_by_p", "_by_po")

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples: set[Triple] = set()
        self._by_s: dict[IRI, set[Triple]] = defaultdict(set)
        self._by_p: dict[IRI, set[Triple]] = defaultdict(set)
        self._by_po: dict[tuple[IRI, Term], set[Triple]] = defaultdict(set)
        for t in triples:
            self.add(t)

    def add(self, t: Triple) -> bool:
        t = Triple(*t)
        if t in self._triples:
            return False
        if not isinstance(t.s, IRI) or not isinstance(t.p, IRI):
            raise TypeError(f"subject and predicate must be IRIs: {t}")
        self._triples.add(t)
        self._by_s[t.s].add(t)
        self._by_p[t.p].add(t)
        self._by_po[(t.p, t.o)].add(t)
        return True

    def remove(self, t: Triple) -> bool:
        if t not in self._triples:
            return False
        self._triples.discard(t)
        for index, key in ((self._by_s, t.s), (self._by_p, t.p), (self._by_po, (t.p, t.o))):
            bucket = index[key]
            bucket.discard(t)
            if not bucket:
                del index[key]
        return True

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def __contains__(self, t: object) -> bool:
        return t in self._triples

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TripleGraph):
            return NotImplemented
        return self._triples == other._triples

    def __repr__(self) -> str:
        return f"TripleGraph({len(self)} triples)"

    def sorted(self) -> list[Triple]:
        """Triples in lexicographic order of their serialized (s, p, o)."""
        return sorted(self._triples, key=lambda t: (t.s.n3(), t.p.n3(), t.o.n3()))

    def subjects(self) -> set[IRI]:
        return set(self._by_s)

    def match(self, s: Optional[Term] = None, p: Optional[Term] = None,
              o: Optional[Term] = None) -> list[Triple]:
        """Triples agreeing with every bound position."""
        candidates: Optional[set[Triple]]
        if p is not None and o is not None:
            candidates = self._by_po.get((p, o), set())
            if s is not None:
                t = Triple(s, p, o)
                return [t] if t in candidates else []
        elif s is not None:
            candidates = self._by_s.get(s, set())
            if p is not None:
                other = self._by_p.get(p, set())
                if len(other) < len(candidates):
                    candidates = other
        elif p is not None:
            candidates = self._by_p.get(p, set())
        elif o is not None:
            candidates = None
        else:
            return list(self._triples)
        pool = self._triples if candidates is None else candidates
        return [
            t for t in pool
            if (s is None or t.s == s) and (p is None or t.p == p) and (o is None or t.o == o)
        ]

    def objects(self, s: IRI, p: IRI) -> list[Term]:
        bucket = self._by_s.get(s)
        if not bucket:
            return []
        return [t.o for t in bucket if t.p == p]

    def value(self, s: IRI, p: IRI) -> Optional[Term]:
        objs = self.objects(s, p)
        return objs[0] if objs else None

    def restrict(self, subjects: set[IRI]) -> TripleGraph:
        """Sub-graph on the given subjects, dropping edges that leave the set."""
        g = TripleGraph()
        for s in subjects:
            for t in self._by_s.get(s, ()):
                if isinstance(t.o, IRI) and t.o.value.startswith(POP_NS) and t.o not in subjects:
                    continue
                g.add(t)
        return g

    def copy(self) -> TripleGraph:
        return TripleGraph(self._triples)


def match_basic(graph: TripleGraph, s: Optional[Term] = None, p: Optional[Term] = None,
                o: Optional[Term] = None) -> list[Triple]:
    return graph.match(s, p, o)


# ---------------------------------------------------------------------------
# plan codec


def pop_triples(pop: Lolepop, ns: str = POP_NS) -> list[Triple]:
    s = pop_iri(pop.id, ns)
    out = [
        Triple(s, HAS_POP_TYPE, Literal(pop.pop_type.value)),
        Triple(s, HAS_CARD, Literal(pop.est_cardinality)),
        Triple(s, HAS_ROW_SIZE, Literal(pop.est_row_size)),
        Triple(s, HAS_COST, Literal(pop.est_cost)),
    ]
    if pop.table_ref is not None:
        out.append(Triple(s, HAS_TABLE_NAME, Literal(pop.table_ref.table_name)))
        out.append(Triple(s, HAS_TABLE_INSTANCE, Literal(pop.table_ref.instance)))
    if pop.index_name is not None:
        out.append(Triple(s, HAS_INDEX_NAME, Literal(pop.index_name)))
    preds = (HAS_OUTER, HAS_INNER) if pop.pop_type.is_join else (HAS_INPUT,)
    for pred, child in zip(preds, pop.inputs):
        c = pop_iri(child, ns)
        out.append(Triple(s, pred, c))
        out.append(Triple(c, HAS_OUTPUT, s))
    return out


def plan_to_graph(plan: Plan, pops: Optional[Iterable[int]] = None) -> TripleGraph:
    """Encode a plan (or the given subset of its pops) as triples."""
    keep = None if pops is None else set(pops)
    g = TripleGraph()
    for pop in plan.pops.values():
        if keep is not None and pop.id not in keep:
            continue
        for t in pop_triples(pop):
            if keep is not None and t.p in (HAS_OUTPUT, *INPUT_PREDICATES):
                child, parent = (t.s, t.o) if t.p == HAS_OUTPUT else (t.o, t.s)
                if _pop_id(child) not in keep or _pop_id(parent) not in keep:
                    continue
            g.add(t)
    return g


def _pop_id(iri: IRI) -> int:
    return int(iri.value.rsplit("/", 1)[1])


class GraphDecodeError(InputError):
    pass


class MissingPropertyError(GraphDecodeError):
    def __init__(self, subject: IRI, prop_name: str):
        super().__init__(f"{subject.value} lacks {prop_name}")
        self.subject = subject


class DanglingEdgeError(GraphDecodeError):
    pass


def graph_to_plan(graph: TripleGraph, query_id: str = "") -> Plan:
    subjects = sorted((s for s in graph.subjects() if s.value.startswith(POP_NS)),
                      key=lambda s: s.value)

    def required(s: IRI, p: IRI) -> Term:
        v = graph.value(s, p)
        if v is None:
            raise MissingPropertyError(s, p.value.rsplit("/", 1)[1])
        return v

    types: dict[IRI, PopType] = {}
    for s in subjects:
        raw = str(required(s, HAS_POP_TYPE))
        try:
            types[s] = PopType(raw)
        except ValueError:
            raise GraphDecodeError(f"{s.value}: unknown pop type {raw!r}") from None

    pops: dict[int, Lolepop] = {}
    for s in subjects:
        try:
            pid = _pop_id(s)
        except ValueError:
            raise GraphDecodeError(f"malformed pop IRI {s.value}") from None
        ptype = types[s]
        table_ref = None
        if ptype.is_scan:
            table_ref = TableRef(str(required(s, HAS_TABLE_NAME)),
                                 str(required(s, HAS_TABLE_INSTANCE)))
        index = graph.value(s, HAS_INDEX_NAME)
        preds = (HAS_OUTER, HAS_INNER) if ptype.is_join else (HAS_INPUT,)
        inputs = []
        for pred in preds[: ptype.arity]:
            child = required(s, pred)
            if child not in types:
                raise DanglingEdgeError(f"{s.value} points at unknown pop {child}")
            if graph.value(child, HAS_OUTPUT) != s:
                raise DanglingEdgeError(f"{child} lacks the output edge back to {s.value}")
            inputs.append(_pop_id(child))
        pops[pid] = Lolepop(
            id=pid,
            pop_type=ptype,
            est_cardinality=required(s, HAS_CARD).value,
            est_row_size=int(required(s, HAS_ROW_SIZE).value),
            est_cost=required(s, HAS_COST).value,
            table_ref=table_ref,
            index_name=None if index is None else str(index),
            inputs=tuple(inputs),
        )
    for t in graph.match(p=HAS_OUTPUT):
        if t.s not in graph.subjects() or not isinstance(t.o, IRI) or t.o not in graph.subjects():
            raise DanglingEdgeError(f"output edge {t.s} -> {t.o} leaves the graph")
    roots = [p.id for p in pops.values() if p.pop_type is PopType.RETURN]
    if len(roots) != 1:
        raise GraphDecodeError(f"expected one RETURN pop, found {len(roots)}")
    return Plan(root=roots[0], pops=pops, query_id=query_id)


# ---------------------------------------------------------------------------
# line format


_TOKEN = re.compile(r'\s*(<[^<>\s]*>|"(?:[^"\\]|\\.)*"|[-+0-9.eE]+|inf|-inf|nan)')


def format_triple(t: Triple) -> str:
    return f"{t.s.n3()} {t.p.n3()} {t.o.n3()}"


def parse_term(token: str) -> Term:
    if token.startswith("<"):
        return IRI(token[1:-1])
    if token.startswith('"'):
        return Literal(json.loads(token))
    return Literal(float(token))


def parse_triple_line(line: str, lineno: int = 0) -> Triple:
    pos = 0
    terms = []
    for _ in range(3):
        m = _TOKEN.match(line, pos)
        if not m:
            raise InputError(f"line {lineno}: malformed triple")
        try:
            terms.append(parse_term(m.group(1)))
        except ValueError:
            raise InputError(f"line {lineno}: bad term {m.group(1)!r}") from None
        pos = m.end()
    if line[pos:].strip():
        raise InputError(f"line {lineno}: trailing characters after triple")
    s, p, o = terms
    if not isinstance(s, IRI) or not isinstance(p, IRI):
        raise InputError(f"line {lineno}: subject and predicate must be IRIs")
    return Triple(s, p, o)


def dump_graph(graph: TripleGraph) -> str:
    return "".join(format_triple(t) + "\n" for t in graph.sorted())


def load_graph(text: str) -> TripleGraph:
    g = TripleGraph()
    for i, line in enumerate(text.split("\n"), start=1):
        if line.strip() and not line.startswith("#"):
            g.add(parse_triple_line(line, i))
    return g
