"""Problem-pattern templates: an anonymized plan fragment, property bounds, and its remedy guideline."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .errors import InputError
from .pattern import BOUNDED_PROPERTIES, HAS_HIGHER_CARD, HAS_HIGHER_ROW_SIZE, HAS_LOWER_CARD, HAS_LOWER_ROW_SIZE
from .rdf import (
    HAS_CARD, HAS_COST, HAS_INDEX_NAME, HAS_POP_TYPE, HAS_ROW_SIZE, HAS_TABLE_INSTANCE, HAS_TABLE_NAME,
    Literal, Triple, TripleGraph, pop_iri,
)
from .sim.guideline import GuidelineDoc, GuidelineNode, to_xml

TABLE_LABEL = re.compile(r"T[1-9][0-9]*")
INSTANCE_LABEL = re.compile(r"Q[1-9][0-9]*")
INDEX_LABEL = re.compile(r"I[1-9][0-9]*")

# numeric annotations that do not take part in structural identity
NUMERIC_PREDICATES = frozenset({HAS_CARD, HAS_ROW_SIZE, HAS_COST, HAS_LOWER_CARD, HAS_HIGHER_CARD,
                                HAS_LOWER_ROW_SIZE, HAS_HIGHER_ROW_SIZE})

BoundKey = tuple[int, str]  # (canonical pop number, "Cardinality" | "RowSize")


class TemplateInvariantError(InputError):
    pass


@dataclass(frozen=True)
class Provenance:
    workload_id: str
    query_id: str
    timestamp: str


@dataclass
class Template:
    template_id: str
    pattern_graph: TripleGraph
    bounds: dict[BoundKey, tuple[float, float]]
    guideline: GuidelineNode
    improvement_ratio: float
    provenance: Provenance
    _compiled: Optional[object] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.pattern_graph = with_bounds(self.pattern_graph, self.bounds)

    def check(self) -> None:
        tables = {str(t.o) for t in self.pattern_graph.match(p=HAS_TABLE_NAME)}
        insts = {str(t.o) for t in self.pattern_graph.match(p=HAS_TABLE_INSTANCE)}
        indexes = {str(t.o) for t in self.pattern_graph.match(p=HAS_INDEX_NAME)}
        for label_set, rx, what in ((tables, TABLE_LABEL, "table"), (insts, INSTANCE_LABEL, "instance"),
                                    (indexes, INDEX_LABEL, "index")):
            bad = [x for x in label_set if not rx.fullmatch(x)]
            if bad:
                raise TemplateInvariantError(f"template {self.template_id}: non-canonical {what} name(s) {sorted(bad)}")
        for leaf in self.guideline.leaves():
            if leaf.tabid not in insts:
                raise TemplateInvariantError(f"template {self.template_id}: guideline TABID {leaf.tabid} not in pattern")
            if leaf.index is not None and leaf.index not in indexes:
                raise TemplateInvariantError(f"template {self.template_id}: guideline INDEX {leaf.index} not in pattern")
        if not self.improvement_ratio > 1:
            raise TemplateInvariantError(f"template {self.template_id}: improvement ratio must exceed 1")
        for (k, prop), (lo, hi) in self.bounds.items():
            if lo > hi:
                raise TemplateInvariantError(f"template {self.template_id}: bound {prop} on pop {k} is inverted")

    @property
    def n_joins(self) -> int:
        return sum(1 for t in self.pattern_graph.match(p=HAS_POP_TYPE) if str(t.o).endswith("JOIN"))

    def pop_types(self) -> Counter:
        return Counter(str(t.o) for t in self.pattern_graph.match(p=HAS_POP_TYPE))

    def structure_key(self) -> tuple:
        """Identity up to id, bounds, numeric annotations and provenance."""
        core = frozenset(t for t in self.pattern_graph if t.p not in NUMERIC_PREDICATES)
        return core, to_xml(GuidelineDoc((self.guideline,)))

    def compiled(self):
        if self._compiled is None:
            from .pattern import compile_pattern_graph
            self._compiled = compile_pattern_graph(self.pattern_graph)
        return self._compiled

    def same_content(self, other: Template) -> bool:
        """Equality ignoring template_id and provenance."""
        return (self.pattern_graph == other.pattern_graph and self.bounds == other.bounds
                and self.guideline == other.guideline and self.improvement_ratio == other.improvement_ratio)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Template):
            return NotImplemented
        return self.template_id == other.template_id and self.provenance == other.provenance and self.same_content(other)

    __hash__ = None  # type: ignore[assignment]


def with_bounds(graph: TripleGraph, bounds: dict[BoundKey, tuple[float, float]]) -> TripleGraph:
    g = TripleGraph(t for t in graph if t.p not in {HAS_LOWER_CARD, HAS_HIGHER_CARD,
                                                    HAS_LOWER_ROW_SIZE, HAS_HIGHER_ROW_SIZE})
    for (k, prop), (lo, hi) in bounds.items():
        _, lo_pred, hi_pred = BOUNDED_PROPERTIES[prop]
        g.add(Triple(pop_iri(k), lo_pred, Literal(float(lo))))
        g.add(Triple(pop_iri(k), hi_pred, Literal(float(hi))))
    return g


def bounds_from_graph(graph: TripleGraph) -> dict[BoundKey, tuple[float, float]]:
    out: dict[BoundKey, tuple[float, float]] = {}
    for prop, (_, lo_pred, hi_pred) in BOUNDED_PROPERTIES.items():
        for t in graph.match(p=lo_pred):
            hi = graph.value(t.s, hi_pred)
            if hi is None:
                raise TemplateInvariantError(f"{t.s.n3()} has a lower {prop} bound but no upper bound")
            out[(int(t.s.value.rsplit("/", 1)[1]), prop)] = (float(t.o.value), float(hi.value))
    return out


def union_bounds(a: dict[BoundKey, tuple[float, float]],
                 b: dict[BoundKey, tuple[float, float]]) -> dict[BoundKey, tuple[float, float]]:
    out = dict(a)
    for k, (lo, hi) in b.items():
        if k in out:
            out[k] = (min(out[k][0], lo), max(out[k][1], hi))
        else:
            out[k] = (lo, hi)
    return dict(sorted(out.items()))


def coalesce(a: Template, b: Template, keep_first: bool = False) -> Template:
    """Merge two structurally identical templates.

    The survivor (id, numeric annotations, provenance) is the smaller id, which
    makes the merge order-independent, or ``a`` when ``keep_first`` is set.
    """
    keep = a if keep_first or a.template_id <= b.template_id else b
    return Template(keep.template_id, keep.pattern_graph.copy(), union_bounds(a.bounds, b.bounds),
                    keep.guideline, max(a.improvement_ratio, b.improvement_ratio), keep.provenance)

