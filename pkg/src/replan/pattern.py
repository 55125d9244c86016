"""Basic-graph-pattern queries over :class:`~replan.rdf.TripleGraph`.

The query fragment is what the matching engine generates: conjunctive triple
patterns with constant predicates, transitive ``hasOutputStream`` paths,
numeric comparison filters and IRI-distinctness filters.
"""

from __future__ import annotations

import operator
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from itertools import combinations
from typing import TYPE_CHECKING, Optional, Union

from .errors import InputError
from .rdf import (
    HAS_CARD,
    HAS_INDEX_NAME,
    HAS_INNER,
    HAS_INPUT,
    HAS_OUTER,
    HAS_OUTPUT,
    HAS_POP_TYPE,
    HAS_ROW_SIZE,
    HAS_TABLE_INSTANCE,
    HAS_TABLE_NAME,
    IRI,
    Literal,
    Term,
    TripleGraph,
    prop,
    term_key,
)

if TYPE_CHECKING:
    from .template import Template


@dataclass(frozen=True, slots=True)
class Var:
    name: str

    def __str__(self) -> str:
        return "?" + self.name


Node = Union[Var, IRI, Literal]


@dataclass(frozen=True)
class TriplePattern:
    s: Node
    p: IRI
    o: Node

    def vars(self) -> set[str]:
        return {x.name for x in (self.s, self.o) if isinstance(x, Var)}


@dataclass(frozen=True)
class PathPattern:
    """``o`` is reachable from ``s`` over at least ``min_hops`` output edges."""

    s: Node
    o: Node
    min_hops: int = 1

    def vars(self) -> set[str]:
        return {x.name for x in (self.s, self.o) if isinstance(x, Var)}


_OPS = {
    "<=": operator.le,
    ">=": operator.ge,
    "<": operator.lt,
    ">": operator.gt,
    "=": operator.eq,
}


@dataclass(frozen=True)
class NumericFilter:
    var: str
    op: str
    value: float

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unsupported comparison {self.op!r}")

    def vars(self) -> set[str]:
        return {self.var}

    def test(self, b: dict[str, Term]) -> bool:
        t = b[self.var]
        return isinstance(t, Literal) and t.is_number and _OPS[self.op](t.value, self.value)


@dataclass(frozen=True)
class DistinctFilter:
    """``STR(?a) > STR(?b)`` when ``ordered``, otherwise ``STR(?a) != STR(?b)``."""

    a: str
    b: str
    ordered: bool = True

    def vars(self) -> set[str]:
        return {self.a, self.b}

    def test(self, b: dict[str, Term]) -> bool:
        x, y = str(b[self.a]), str(b[self.b])
        return x > y if self.ordered else x != y


Filter = Union[NumericFilter, DistinctFilter]
Binding = dict[str, Term]


@dataclass
class PatternQuery:
    select_vars: list[str]
    triple_patterns: list[TriplePattern] = field(default_factory=list)
    path_patterns: list[PathPattern] = field(default_factory=list)
    filters: list[Filter] = field(default_factory=list)

    def __post_init__(self):
        bound = self.pattern_vars()
        missing = [v for v in self.select_vars if v not in bound]
        if missing:
            raise InputError(f"selected variables {missing} occur in no pattern")
        for f in self.filters:
            if not f.vars() <= bound:
                raise InputError(f"filter {f} references unbound variables")
        for pp in self.path_patterns:
            if pp.min_hops < 1:
                raise InputError("path patterns need min_hops >= 1")

    def pattern_vars(self) -> set[str]:
        out: set[str] = set()
        for pat in (*self.triple_patterns, *self.path_patterns):
            out |= pat.vars()
        return out

    def explain(self) -> str:
        """SPARQL-like rendering for debugging; not meant to be parsed back."""
        def node(n: Node) -> str:
            if isinstance(n, Var):
                return str(n)
            if isinstance(n, IRI):
                if n.value.startswith(prop("").value):
                    return "predURI:" + n.value[len(prop("").value):]
                return n.n3()
            return n.n3()

        lines = ["SELECT " + " ".join("?" + v for v in self.select_vars), "WHERE {"]
        for tp in self.triple_patterns:
            lines.append(f"  {node(tp.s)} {node(tp.p)} {node(tp.o)} .")
        for pp in self.path_patterns:
            hops = "+" if pp.min_hops == 1 else f"{{{pp.min_hops},}}"
            lines.append(f"  {node(pp.s)} predURI:hasOutputStream{hops} {node(pp.o)} .")
        for f in self.filters:
            if isinstance(f, NumericFilter):
                lines.append(f"  FILTER (?{f.var} {f.op} {Literal(f.value).n3()})")
            else:
                cmp = ">" if f.ordered else "!="
                lines.append(f"  FILTER (STR(?{f.a}) {cmp} STR(?{f.b}))")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _finish(query: PatternQuery, rows: Iterable[Binding]) -> list[Binding]:
    seen = set()
    out = []
    for b in rows:
        key = tuple(b[v] for v in query.select_vars)
        if key not in seen:
            seen.add(key)
            out.append({v: b[v] for v in query.select_vars})
    out.sort(key=lambda b: tuple(term_key(b[v]) for v in query.select_vars))
    return out


# ---------------------------------------------------------------------------
# indexed evaluator


def _node_count(graph: TripleGraph) -> int:
    return len({x for t in graph.match(p=HAS_OUTPUT) for x in (t.s, t.o)})


def _reach(graph: TripleGraph, start: Term, min_hops: int, forward: bool = True) -> set[Term]:
    """Terms at walk length >= min_hops from ``start``.

    Any longer walk can be shortened by dropping cycles, so lengths up to
    ``min_hops + node_count`` are enough.
    """
    cap = min_hops + _node_count(graph)
    out: set[Term] = set()
    frontier = {start}
    for hop in range(1, cap + 1):
        nxt = set()
        for n in frontier:
            if forward:
                if isinstance(n, IRI):
                    nxt.update(graph.objects(n, HAS_OUTPUT))
            else:
                nxt.update(t.s for t in graph.match(p=HAS_OUTPUT, o=n))
        if not nxt:
            break
        if hop >= min_hops:
            out |= nxt
        frontier = nxt
    return out


class _Evaluator:
    def __init__(self, query: PatternQuery, graph: TripleGraph):
        self.q = query
        self.g = graph
        self.results: list[Binding] = []
        steps: list[Union[TriplePattern, PathPattern]] = [*query.triple_patterns, *query.path_patterns]
        self.order = self._plan(steps)
        # filters become checkable right after the step that binds their last var
        bound: set[str] = set()
        self.after: list[list[Filter]] = []
        pending = list(query.filters)
        for st in self.order:
            bound |= st.vars()
            ready = [f for f in pending if f.vars() <= bound]
            pending = [f for f in pending if not f.vars() <= bound]
            self.after.append(ready)

    def _size(self, st: Union[TriplePattern, PathPattern]) -> int:
        if isinstance(st, PathPattern):
            return 1 << 30
        s = None if isinstance(st.s, Var) else st.s
        o = None if isinstance(st.o, Var) else st.o
        if s is not None or o is not None:
            return len(self.g.match(s, st.p, o))
        return len(self.g.match(p=st.p))

    def _plan(self, steps):
        """Greedy order: most bound positions first, then smallest index bucket."""
        remaining = list(steps)
        order = []
        bound: set[str] = set()
        sizes = {id(st): self._size(st) for st in remaining}
        while remaining:
            def score(st):
                nodes = (st.s, st.o)
                nbound = sum(1 for n in nodes if not isinstance(n, Var) or n.name in bound)
                connected = bool(st.vars() & bound) or not bound
                return (-nbound, not connected, sizes[id(st)])
            best = min(remaining, key=score)
            remaining.remove(best)
            order.append(best)
            bound |= best.vars()
        return order

    def run(self) -> list[Binding]:
        self._step(0, {})
        return _finish(self.q, self.results)

    def _check(self, filters, b) -> bool:
        return all(f.test(b) for f in filters)

    def _resolve(self, n: Node, b: Binding) -> Optional[Term]:
        if isinstance(n, Var):
            return b.get(n.name)
        return n

    def _step(self, i: int, b: Binding) -> None:
        if i == len(self.order):
            self.results.append(dict(b))
            return
        st = self.order[i]
        s = self._resolve(st.s, b)
        o = self._resolve(st.o, b)
        if isinstance(st, TriplePattern):
            pairs = ((t.s, t.o) for t in self.g.match(s, st.p, o))
        else:
            pairs = self._path_pairs(st, s, o)
        for ts, to in pairs:
            nb = b
            added = []
            ok = True
            for n, val in ((st.s, ts), (st.o, to)):
                if isinstance(n, Var):
                    cur = nb.get(n.name)
                    if cur is None:
                        nb[n.name] = val
                        added.append(n.name)
                    elif cur != val:
                        ok = False
                        break
            if ok and self._check(self.after[i], nb):
                self._step(i + 1, nb)
            for name in added:
                del nb[name]

    def _path_pairs(self, st: PathPattern, s: Optional[Term], o: Optional[Term]):
        if s is not None:
            for t in sorted(_reach(self.g, s, st.min_hops), key=term_key):
                if o is None or t == o:
                    yield s, t
        elif o is not None:
            for t in sorted(_reach(self.g, o, st.min_hops, forward=False), key=term_key):
                yield t, o
        else:
            starts = sorted({t.s for t in self.g.match(p=HAS_OUTPUT)}, key=term_key)
            for start in starts:
                for t in sorted(_reach(self.g, start, st.min_hops), key=term_key):
                    yield start, t


def evaluate(query: PatternQuery, graph: TripleGraph) -> list[Binding]:
    """All bindings satisfying every pattern and filter, deduplicated and sorted."""
    if not query.triple_patterns and not query.path_patterns:
        return [{}] if all(f.test({}) for f in query.filters) else []
    return _Evaluator(query, graph).run()


# ---------------------------------------------------------------------------
# brute-force oracle

BRUTE_MAX_SUBJECTS = 12


class QueryTooLargeError(InputError):
    pass


def evaluate_brute(query: PatternQuery, graph: TripleGraph) -> list[Binding]:
    """Reference evaluator: enumerate assignments over every graph term.

    Variables are assigned in a fixed order; a pattern or filter is checked by
    linear membership tests once all of its variables carry values.  No index
    is consulted and no reordering takes place.
    """
    subjects = {t.s for t in graph}
    if len(subjects) > BRUTE_MAX_SUBJECTS:
        raise QueryTooLargeError(f"{len(subjects)} subjects exceed the cap of {BRUTE_MAX_SUBJECTS}")
    triples = list(graph)
    triple_set = set(triples)
    edges = [(t.s, t.o) for t in triples if t.p == HAS_OUTPUT]
    n_nodes = len({x for e in edges for x in e})
    cap = max([pp.min_hops for pp in query.path_patterns], default=1) + n_nodes

    # walk-length reachability by repeated relational composition
    reach: set[tuple[Term, Term, int]] = set()
    layer = {(a, b) for a, b in edges}
    for hop in range(1, cap + 1):
        reach.update((a, b, hop) for a, b in layer)
        layer = {(a, d) for a, b in layer for c, d in edges if b == c}
        if not layer:
            break

    def path_ok(a: Term, b: Term, k: int) -> bool:
        return any((a, b, h) in reach for h in range(k, k + n_nodes + 1))

    domain = sorted({t.s for t in triples} | {t.o for t in triples}, key=term_key)
    var_order: list[str] = []
    for pat in (*query.triple_patterns, *query.path_patterns):
        for n in (pat.s, pat.o):
            if isinstance(n, Var) and n.name not in var_order:
                var_order.append(n.name)

    checks = []
    for tp in query.triple_patterns:
        checks.append(("t", tp, tp.vars()))
    for pp in query.path_patterns:
        checks.append(("p", pp, pp.vars()))
    for f in query.filters:
        checks.append(("f", f, f.vars()))
    by_depth: list[list] = [[] for _ in range(len(var_order) + 1)]
    for kind, obj, vs in checks:
        depth = max((var_order.index(v) + 1 for v in vs), default=0)
        by_depth[depth].append((kind, obj))

    def val(n: Node, b: Binding) -> Term:
        return b[n.name] if isinstance(n, Var) else n

    def holds(kind, obj, b) -> bool:
        if kind == "t":
            return (val(obj.s, b), obj.p, val(obj.o, b)) in triple_set
        if kind == "p":
            return path_ok(val(obj.s, b), val(obj.o, b), obj.min_hops)
        return obj.test(b)

    out: list[Binding] = []

    def assign(depth: int, b: Binding) -> None:
        if not all(holds(k, o, b) for k, o in by_depth[depth]):
            return
        if depth == len(var_order):
            out.append(dict(b))
            return
        name = var_order[depth]
        for term in domain:
            b[name] = term
            assign(depth + 1, b)
        b.pop(name, None)

    assign(0, {})
    return _finish(query, out)


# ---------------------------------------------------------------------------
# template compilation

HAS_LOWER_CARD = prop("hasLowerCardinality")
HAS_HIGHER_CARD = prop("hasHigherCardinality")
HAS_LOWER_ROW_SIZE = prop("hasLowerRowSize")
HAS_HIGHER_ROW_SIZE = prop("hasHigherRowSize")

# bounded property -> (value predicate on plans, lower-bound predicate, upper-bound predicate)
BOUNDED_PROPERTIES = {
    "Cardinality": (HAS_CARD, HAS_LOWER_CARD, HAS_HIGHER_CARD),
    "RowSize": (HAS_ROW_SIZE, HAS_LOWER_ROW_SIZE, HAS_HIGHER_ROW_SIZE),
}


def pop_var_name(graph: TripleGraph, subject: IRI) -> str:
    """Result-handler name: ``pop_<id>``, or ``pop_<instance>`` for table access."""
    inst = graph.value(subject, HAS_TABLE_INSTANCE)
    if inst is not None:
        return f"pop_{inst}"
    return "pop_" + subject.value.rsplit("/", 1)[1]


def _pop_order(s: IRI) -> tuple:
    tail = s.value.rsplit("/", 1)[1]
    return (int(tail),) if tail.isdigit() else (1 << 30, tail)


def compile_pattern_graph(graph: TripleGraph) -> PatternQuery:
    pops = sorted((t.s for t in graph.match(p=HAS_POP_TYPE)), key=_pop_order)
    names = {s: pop_var_name(graph, s) for s in pops}
    patterns: list[TriplePattern] = []
    filters: list[Filter] = []
    select: list[str] = [names[s] for s in pops]
    extra: list[str] = []

    for s in pops:
        v = Var(names[s])
        patterns.append(TriplePattern(v, HAS_POP_TYPE, graph.value(s, HAS_POP_TYPE)))
    for s in pops:
        for pred in (HAS_OUTER, HAS_INNER, HAS_INPUT):
            child = graph.value(s, pred)
            if child is not None and child in names:
                # relationship handler, plus the input position so outer and
                # inner roles cannot be swapped by the match
                patterns.append(TriplePattern(Var(names[child]), HAS_OUTPUT, Var(names[s])))
                patterns.append(TriplePattern(Var(names[s]), pred, Var(names[child])))
    for s in pops:
        table = graph.value(s, HAS_TABLE_NAME)
        if table is not None:
            patterns.append(TriplePattern(Var(names[s]), HAS_TABLE_NAME, Var(str(table))))
            if str(table) not in extra:
                extra.append(str(table))
        index = graph.value(s, HAS_INDEX_NAME)
        if index is not None:
            patterns.append(TriplePattern(Var(names[s]), HAS_INDEX_NAME, Var(str(index))))
            if str(index) not in extra:
                extra.append(str(index))

    ih = 0
    for s in pops:
        for value_pred, lo_pred, hi_pred in BOUNDED_PROPERTIES.values():
            lo, hi = graph.value(s, lo_pred), graph.value(s, hi_pred)
            if lo is None and hi is None:
                continue
            ih += 1
            var = f"ih{ih}"
            patterns.append(TriplePattern(Var(names[s]), value_pred, Var(var)))
            if lo is not None:
                filters.append(NumericFilter(var, ">=", lo.value))
            if hi is not None:
                filters.append(NumericFilter(var, "<=", hi.value))

    by_type: dict[str, list[IRI]] = {}
    for s in pops:
        by_type.setdefault(str(graph.value(s, HAS_POP_TYPE)), []).append(s)
    for group in by_type.values():
        for a, b in combinations(group, 2):
            filters.append(DistinctFilter(names[a], names[b], ordered=False))

    return PatternQuery(select_vars=select + extra, triple_patterns=patterns, filters=filters)


def compile_from_template(template: "Template") -> PatternQuery:
    return compile_pattern_graph(template.pattern_graph)
