"""Cost model shared by the optimizer's estimates and the simulated executor.

Every operator contributes a work vector (sequential pages, random pages,
spilled pages, CPU rows, index probes, sort-heap high-water mark). Cost is a
fixed linear function of that vector, so estimated and "true" runs differ only
in which selectivities feed the cardinalities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..errors import InputError
from ..plan import Lolepop, Plan, PopType, TableRef
from .catalog import Catalog, Index
from .query import Query

EST = "est"
TRUE = "true"


class Work(NamedTuple):
    seq: float = 0.0
    rand: float = 0.0
    spill: float = 0.0
    cpu: float = 0.0
    probes: float = 0.0
    hwm: float = 0.0

    def __add__(self, other: Work) -> Work:  # type: ignore[override]
        return Work(self.seq + other.seq, self.rand + other.rand, self.spill + other.spill,
                    self.cpu + other.cpu, self.probes + other.probes, max(self.hwm, other.hwm))

    def scaled(self, k: float) -> Work:
        return Work(self.seq * k, self.rand * k, self.spill * k, self.cpu * k, self.probes * k, self.hwm)


@dataclass(frozen=True)
class PlanNode:
    """Id-free operator tree used while planning; ``materialize`` turns it into a Plan."""

    pop_type: PopType
    inputs: tuple[PlanNode, ...] = ()
    instance: Optional[str] = None
    index: Optional[str] = None


@dataclass(frozen=True)
class NodeResult:
    card: float
    row_size: int
    work: Work
    leaves: frozenset[str]
    cost: float


@dataclass(frozen=True)
class RuntimeStats:
    elapsed: float
    logical_reads: int
    physical_reads: int
    cpu_time: float
    sort_heap_hwm: int

    def __post_init__(self):
        if min(self.elapsed, self.logical_reads, self.physical_reads, self.cpu_time, self.sort_heap_hwm) < 0:
            raise ValueError("runtime statistics must be non-negative")
        if self.physical_reads > self.logical_reads:
            raise ValueError("physical reads exceed logical reads")


class CostModel:
    """Per-(query, catalog, mode) evaluator with cached selectivity products."""

    def __init__(self, query: Query, catalog: Catalog, mode: str = EST):
        if mode not in (EST, TRUE):
            raise ValueError(f"mode must be {EST!r} or {TRUE!r}")
        self.query = query
        self.catalog = catalog
        self.mode = mode
        self.params = catalog.params
        self.table_of = {t.instance: t.table_name for t in query.tables}
        for name in self.table_of.values():
            catalog.table(name)
        self.base_card: dict[str, float] = {}
        self.local_sel: dict[str, float] = {}
        self.col_sel: dict[tuple[str, str], float] = {}
        for inst, table in self.table_of.items():
            self.base_card[inst] = float(catalog.table(table).cardinality)
            self.local_sel[inst] = 1.0
        for lp in query.local_preds:
            s = lp.sel(mode)
            self.local_sel[lp.instance] *= s
            key = (lp.instance, lp.col.column)
            self.col_sel[key] = self.col_sel.get(key, 1.0) * s
        self.joins = [(jp, jp.left.instance, jp.right.instance, jp.sel(mode)) for jp in query.join_preds]
        self._set_card: dict[frozenset[str], float] = {}

    # -- helpers ---------------------------------------------------------

    def cost_of(self, w: Work) -> float:
        p = self.params
        return (w.seq + p.random_io_penalty * w.rand + p.spill_multiplier * w.spill
                + p.cpu_row_cost * w.cpu + p.index_probe_cost * w.probes)

    def pages_for(self, rows: float, row_size: int) -> float:
        return math.ceil(rows * row_size / self.params.page_size) if rows > 0 else 0

    def set_card(self, leaves: frozenset[str]) -> float:
        c = self._set_card.get(leaves)
        if c is None:
            c = 1.0
            for i in leaves:
                c *= self.base_card[i] * self.local_sel[i]
            for _, a, b, s in self.joins:
                if a in leaves and b in leaves:
                    c *= s
            self._set_card[leaves] = c
        return c

    def index(self, name: str, instance: str) -> Index:
        ix = self.catalog.index(name)
        if ix.table != self.table_of[instance]:
            raise InputError(f"index {name} is not on table {self.table_of[instance]}")
        return ix

    def _index_io(self, ix: Index, sel: float) -> Work:
        pages = sel * self.catalog.pages(ix.table)
        return Work(seq=pages) if ix.clustered else Work(rand=pages)

    def merge_column(self, outer: frozenset[str], inner: frozenset[str]) -> Optional[tuple[tuple[str, str], tuple[str, str]]]:
        """(outer instance, column), (inner instance, column) of the first predicate linking the sides."""
        for jp, a, b, _ in self.joins:
            if a in outer and b in inner:
                return (a, jp.left.column), (b, jp.right.column)
            if b in outer and a in inner:
                return (b, jp.right.column), (a, jp.left.column)
        return None

    def ordered_on(self, node: PlanNode, key: tuple[str, str]) -> bool:
        """True if ``node`` emits rows in ``key`` order (an index scan on that column)."""
        if node.pop_type is PopType.FETCH:
            node = node.inputs[0]
        if node.pop_type is PopType.IXSCAN:
            ix = self.catalog.index(node.index)
            return node.instance == key[0] and ix.column == key[1]
        return False

    def _probe(self, outer: NodeResult, inner: PlanNode) -> Optional[Work]:
        """Per-outer-row work when the inner is an index lookup on a join column."""
        fetch = inner if inner.pop_type is PopType.FETCH else None
        scan = fetch.inputs[0] if fetch is not None else inner
        if scan.pop_type is not PopType.IXSCAN:
            return None
        inst = scan.instance
        ix = self.index(scan.index, inst)
        sel = None
        for jp, a, b, s in self.joins:
            if (a == inst and b in outer.leaves and jp.left.column == ix.column) or \
               (b == inst and a in outer.leaves and jp.right.column == ix.column):
                sel = s if sel is None else sel * s
        if sel is None:
            return None
        sel *= self.col_sel.get((inst, ix.column), 1.0)
        rows = self.base_card[inst] * sel
        return Work(probes=1.0, cpu=rows) + self._index_io(ix, sel)

    # -- evaluation --------------------------------------------------------

    def leaf(self, node: PlanNode) -> NodeResult:
        inst = node.instance
        if inst not in self.table_of:
            raise InputError(f"plan references instance {inst!r} not in query {self.query.id}")
        table = self.table_of[inst]
        if node.pop_type is PopType.TBSCAN:
            card = self.base_card[inst] * self.local_sel[inst]
            w = Work(seq=float(self.catalog.pages(table)))
            return NodeResult(card, self.catalog.table(table).row_size, w, frozenset((inst,)), self.cost_of(w))
        ix = self.index(node.index, inst)
        sel = self.col_sel.get((inst, ix.column), 1.0)
        w = Work(probes=1.0) + self._index_io(ix, sel)
        return NodeResult(self.base_card[inst] * sel, self.params.index_key_size, w,
                          frozenset((inst,)), self.cost_of(w))

    def apply(self, node: PlanNode, kids: tuple[NodeResult, ...]) -> NodeResult:
        t = node.pop_type
        p = self.params
        if t.is_scan:
            return self.leaf(node)
        if t is PopType.RETURN:
            k = kids[0]
            return NodeResult(k.card, k.row_size, k.work, k.leaves, k.cost)
        if t is PopType.FETCH:
            k = kids[0]
            inst = next(iter(k.leaves))
            card = self.base_card[inst] * self.local_sel[inst]
            # table pages were already charged by the index scan below
            return NodeResult(card, self.catalog.table(self.table_of[inst]).row_size, k.work, k.leaves, k.cost)
        if t is PopType.SORT:
            k = kids[0]
            n = k.card
            pages = self.pages_for(n, k.row_size)
            w = k.work + Work(cpu=n * math.log2(n) if n > 1 else 0.0, hwm=min(pages, p.sort_heap_pages))
            if pages > p.sort_heap_pages:
                w = w + Work(spill=pages)
            return NodeResult(n, k.row_size, w, k.leaves, self.cost_of(w))
        o, i = kids
        leaves = o.leaves | i.leaves
        if o.leaves & i.leaves:
            raise InputError("join inputs share a table instance")
        card = self.set_card(leaves)
        rows = o.row_size + i.row_size
        if t is PopType.NLJOIN:
            probe = self._probe(o, node.inputs[1])
            w = o.work + (probe if probe is not None else i.work).scaled(o.card)
            if probe is None:
                w = w + Work(hwm=i.work.hwm)
        elif t is PopType.HSJOIN:
            w = o.work + i.work + Work(cpu=1.2 * (o.card + i.card))
            build = self.pages_for(i.card, i.row_size)
            w = w + Work(hwm=min(build, p.sort_heap_pages))
            if build > p.sort_heap_pages:
                w = w + Work(spill=build + self.pages_for(o.card, o.row_size))
        else:
            w = o.work + i.work + Work(cpu=o.card + i.card)
        return NodeResult(card, rows, w, leaves, self.cost_of(w))

    def evaluate(self, node: PlanNode) -> NodeResult:
        return self.apply(node, tuple(self.evaluate(c) for c in node.inputs))


# ---------------------------------------------------------------------------
# Plan <-> PlanNode


def plan_to_node(plan: Plan, pop_id: Optional[int] = None) -> PlanNode:
    pop = plan[plan.root if pop_id is None else pop_id]
    return PlanNode(
        pop.pop_type,
        tuple(plan_to_node(plan, c) for c in pop.inputs),
        pop.table_ref.instance if pop.table_ref else None,
        pop.index_name,
    )


def _sig(x: float) -> float:
    return float(f"{x:.6g}")


def materialize(node: PlanNode, query: Query, catalog: Catalog, model: Optional[CostModel] = None) -> Plan:
    """Assign preorder ids (RETURN = 1) and annotate estimates."""
    model = model or CostModel(query, catalog, EST)
    if node.pop_type is not PopType.RETURN:
        node = PlanNode(PopType.RETURN, (node,))
    pops: dict[int, Lolepop] = {}
    counter = [0]

    def visit(n: PlanNode) -> tuple[int, NodeResult]:
        counter[0] += 1
        my_id = counter[0]
        kids = [visit(c) for c in n.inputs]
        r = model.apply(n, tuple(k[1] for k in kids))
        table_ref = TableRef(model.table_of[n.instance], n.instance) if n.pop_type.is_scan else None
        pops[my_id] = Lolepop(my_id, n.pop_type, _sig(r.card), int(r.row_size), _sig(r.cost),
                              table_ref, n.index, tuple(k[0] for k in kids))
        return my_id, r

    visit(node)
    return Plan(1, pops, query.id)


# ---------------------------------------------------------------------------
# public operations


def _check_plan(plan: Plan, query: Query) -> None:
    for s in plan.scans():
        t = s.table_ref
        if t.instance not in query.instances:
            raise InputError(f"plan scans instance {t.instance} that query {query.id} does not declare")
        if query.table_of(t.instance) != t.table_name:
            raise InputError(f"plan scans {t.table_name} as {t.instance}, query says {query.table_of(t.instance)}")


def _per_pop(plan: Plan, model: CostModel) -> dict[int, NodeResult]:
    out: dict[int, NodeResult] = {}
    for pop in plan.postorder():
        node = plan_to_node(plan, pop.id) if pop.pop_type is PopType.NLJOIN else PlanNode(
            pop.pop_type, (), pop.table_ref.instance if pop.table_ref else None, pop.index_name)
        out[pop.id] = model.apply(node, tuple(out[c] for c in pop.inputs))
    return out


def estimate(plan: Plan, query: Query, catalog: Catalog) -> tuple[float, dict[int, tuple[float, int, float]]]:
    """Estimated cost and per-pop (cardinality, row size, cost)."""
    _check_plan(plan, query)
    res = _per_pop(plan, CostModel(query, catalog, EST))
    return res[plan.root].cost, {k: (r.card, r.row_size, r.cost) for k, r in res.items()}


def annotate(plan: Plan, query: Query, catalog: Catalog) -> Plan:
    """Same plan with estimates recomputed from the cost model."""
    _check_plan(plan, query)
    res = _per_pop(plan, CostModel(query, catalog, EST))
    pops = {k: Lolepop(p.id, p.pop_type, _sig(res[k].card), int(res[k].row_size), _sig(res[k].cost),
                       p.table_ref, p.index_name, p.inputs) for k, p in plan.pops.items()}
    return Plan(plan.root, pops, plan.query_id)


def true_work(plan: Plan, query: Query, catalog: Catalog) -> tuple[float, Work]:
    _check_plan(plan, query)
    model = CostModel(query, catalog, TRUE)
    r = _per_pop(plan, model)[plan.root]
    return r.cost, r.work


def noise_factor(seed: int, sigma: float) -> float:
    if sigma == 0:
        return 1.0
    z = np.random.default_rng(seed).standard_normal()
    return float(math.exp(sigma * z))


def stats_from_work(cost: float, work: Work, catalog: Catalog, seed: int) -> RuntimeStats:
    p = catalog.params
    logical = round(work.seq + work.rand + work.spill)
    physical = round(work.rand + work.spill + 0.25 * work.seq)
    return RuntimeStats(
        elapsed=cost * noise_factor(seed, p.noise_sigma),
        logical_reads=logical,
        physical_reads=min(physical, logical),
        cpu_time=work.cpu * p.cpu_row_cost,
        sort_heap_hwm=math.ceil(work.hwm),
    )


def true_run(plan: Plan, query: Query, catalog: Catalog, seed: int) -> RuntimeStats:
    """Simulated execution: true selectivities plus seeded log-normal noise on elapsed time."""
    cost, work = true_work(plan, query, catalog)
    return stats_from_work(cost, work, catalog, seed)
