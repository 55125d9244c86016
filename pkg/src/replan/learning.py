"""Offline discovery of plan rewrites and their abstraction into templates."""

from __future__ import annotations

import hashlib
import statistics
import uuid
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

from .errors import InputError
from .kb import KnowledgeBase, merge_kb
from .plan import Plan, PopType, serialize_plan
from .rdf import (
    HAS_INDEX_NAME, HAS_TABLE_INSTANCE, HAS_TABLE_NAME, IRI, Literal, Triple, TripleGraph, plan_to_graph, pop_iri,
)
from .sim.catalog import Catalog
from .sim.cost import RuntimeStats, stats_from_work, true_work
from .sim.guideline import guideline_from_plan, relabel
from .sim.optimizer import optimize, random_plan
from .sim.query import Query
from .sim.variants import sample_ranges
from .template import Provenance, Template, coalesce

BOUNDED_SCAN_ONLY = "RowSize"


@dataclass(frozen=True)
class LearnConfig:
    max_joins: int = 4
    k_variants: int = 5
    n_random: int = 20
    run_count: int = 5
    min_improvement: float = 1.10
    seed: int = 0
    workers: int = 1
    tie_tolerance: float = 0.01


@dataclass(frozen=True)
class SubQuery:
    parent_query_id: str
    query: Query
    # instance positions within the parent query; rename-invariant identity for seeding
    positions: tuple[int, ...]

    @property
    def tables(self) -> tuple[str, ...]:
        return self.query.instances


def stable_seed(*parts: object) -> int:
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big") >> 1


# ---------------------------------------------------------------------------
# segmentation


def segment_query(query: Query, max_joins: int) -> list[SubQuery]:
    """Connected table subsets of 2..max_joins+1 instances, smallest first, then positional order."""
    if max_joins < 1:
        raise InputError("max_joins must be >= 1")
    insts = query.instances
    n = len(insts)
    out: list[SubQuery] = []
    masks = [m for m in range(1, 1 << n) if 2 <= bin(m).count("1") <= max_joins + 1]
    masks.sort(key=lambda m: (bin(m).count("1"), [k for k in range(n) if m >> k & 1]))
    for m in masks:
        pos = tuple(k for k in range(n) if m >> k & 1)
        subset = [insts[k] for k in pos]
        if not query.is_connected(subset):
            continue
        sub = query.restrict(subset, new_id=f"{query.id}:{'+'.join(subset)}")
        out.append(SubQuery(query.id, sub, pos))
    return out


def subquery_signature(sq: SubQuery) -> tuple:
    """Structure of a sub-query with instance names replaced by their position in it."""
    q = sq.query
    local = {i: k for k, i in enumerate(q.instances)}
    tables = tuple(
        (t.table_name, tuple(sorted((p.col.column, p.op, p.value, p.est_selectivity, p.true_selectivity)
                                    for p in q.local_preds if p.instance == t.instance)))
        for t in q.tables
    )
    joins = tuple(sorted(
        tuple(sorted(((local[j.left.instance], j.left.column), (local[j.right.instance], j.right.column))))
        + (j.est_selectivity, j.true_selectivity)
        for j in q.join_preds
    ))
    return tables, joins


# ---------------------------------------------------------------------------
# run filtering and ranking


def kmeans_filter(elapsed: Sequence[float], min_separation: float = 0.10) -> tuple[list[int], list[int]]:
    """Optimal 1-D 2-means split; the lower cluster is prospective, the upper one anomalous."""
    n = len(elapsed)
    if n < 2:
        raise InputError("kmeans_filter needs at least two values")
    order = sorted(range(n), key=lambda i: (elapsed[i], i))
    xs = [float(elapsed[i]) for i in order]
    pre = [0.0]
    pre2 = [0.0]
    for x in xs:
        pre.append(pre[-1] + x)
        pre2.append(pre2[-1] + x * x)

    def sse(a: int, b: int) -> float:
        s = pre[b] - pre[a]
        return max(0.0, (pre2[b] - pre2[a]) - s * s / (b - a))

    best_k, best = 1, None
    for k in range(1, n):
        v = sse(0, k) + sse(k, n)
        if best is None or v < best:
            best_k, best = k, v
    lo_mean = (pre[best_k]) / best_k
    hi_mean = (pre[n] - pre[best_k]) / (n - best_k)
    if hi_mean - lo_mean < min_separation * abs(lo_mean) or hi_mean == lo_mean:
        return list(range(n)), []
    return sorted(order[:best_k]), sorted(order[best_k:])


def kmeans_filter_bruteforce(elapsed: Sequence[float], min_separation: float = 0.10) -> tuple[list[int], list[int]]:
    """Reference: score every contiguous split directly, no running sums."""
    n = len(elapsed)
    if n < 2:
        raise InputError("kmeans_filter needs at least two values")
    order = sorted(range(n), key=lambda i: (elapsed[i], i))
    xs = [float(elapsed[i]) for i in order]

    def sse(part: list[float]) -> float:
        m = statistics.fmean(part)
        return sum((x - m) ** 2 for x in part)

    scored = [(sse(xs[:k]) + sse(xs[k:]), k) for k in range(1, n)]
    best = min(s for s, _ in scored)
    k = next(k for s, k in scored if s == best)
    lo, hi = statistics.fmean(xs[:k]), statistics.fmean(xs[k:])
    if hi - lo < min_separation * abs(lo) or hi == lo:
        return list(range(n)), []
    return sorted(order[:k]), sorted(order[k:])


def split_sse(elapsed: Sequence[float], prospective: Sequence[int]) -> float:
    keep = set(prospective)
    total = 0.0
    for part in ([elapsed[i] for i in range(len(elapsed)) if i in keep],
                 [elapsed[i] for i in range(len(elapsed)) if i not in keep]):
        if part:
            m = statistics.fmean(part)
            total += sum((x - m) ** 2 for x in part)
    return total


@dataclass(frozen=True)
class RunSummary:
    score: float
    tie_keys: tuple[float, float, float, float]


def summarize_runs(runs: Sequence[RuntimeStats]) -> RunSummary:
    if not runs:
        raise InputError("a candidate needs at least one run")
    elapsed = [r.elapsed for r in runs]
    keep = kmeans_filter(elapsed)[0] if len(runs) >= 2 else [0]
    return RunSummary(
        statistics.median(elapsed[i] for i in keep),
        (statistics.median(r.logical_reads for r in runs), statistics.median(r.physical_reads for r in runs),
         statistics.median(r.cpu_time for r in runs), statistics.median(r.sort_heap_hwm for r in runs)),
    )


def rank(candidates: Sequence[tuple[Plan, Sequence[RuntimeStats]]], tie_tolerance: float = 0.01) -> Plan:
    """Lowest median prospective elapsed; near-ties go to cheaper secondary statistics."""
    return candidates[_rank_index(candidates, tie_tolerance)][0]


def _rank_index(candidates: Sequence[tuple[Plan, Sequence[RuntimeStats]]], tie_tolerance: float = 0.01,
                last_key: Callable[[Plan], object] = serialize_plan) -> int:
    if not candidates:
        raise InputError("rank needs at least one candidate")
    sums = [summarize_runs(runs) for _, runs in candidates]
    best = min(s.score for s in sums)
    tied = [k for k, s in enumerate(sums) if s.score <= best * (1 + tie_tolerance)]
    return min(tied, key=lambda k: (sums[k].tie_keys, last_key(candidates[k][0])))


# ---------------------------------------------------------------------------
# discovery


def plan_shape(plan: Plan) -> tuple:
    """Structure without numbers: preorder of (type, instance, index, arity)."""
    return tuple((p.pop_type.value, p.table_ref.instance if p.table_ref else None, p.index_name, len(p.inputs))
                 for p in plan.preorder())


def positional_shape(plan: Plan, query: Query, catalog: Catalog) -> str:
    """Like plan_shape but with names replaced by positions, so seeds survive renaming."""
    inst = {t.instance: k for k, t in enumerate(query.tables)}
    idx = {ix.name: k for k, ix in enumerate(catalog.indexes)}
    return ";".join(f"{p.pop_type.value}/{inst[p.table_ref.instance] if p.table_ref else '-'}/"
                    f"{idx[p.index_name] if p.index_name else '-'}/{len(p.inputs)}" for p in plan.preorder())


@dataclass(frozen=True)
class Rewrite:
    problem_plan: Plan
    solution_plan: Plan
    improvement_ratio: float
    bounds: dict[tuple[int, str], tuple[float, float]]
    stats_context: tuple[str, ...]


@dataclass(frozen=True)
class VariantOutcome:
    query: Query
    baseline: Plan
    winner: Plan
    improvement: float


class _Runner:
    """True costs are cached per plan structure; runs only add seeded noise."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self._cache: dict[tuple, tuple] = {}

    def runs(self, plan: Plan, query: Query, seeds: Sequence[int]) -> list[RuntimeStats]:
        key = (plan_shape(plan), query)
        got = self._cache.get(key)
        if got is None:
            got = true_work(plan, query, self.catalog)
            self._cache[key] = got
        return [stats_from_work(got[0], got[1], self.catalog, s) for s in seeds]


def _variant_sweeps(query: Query, catalog: Catalog, k: int) -> list[list[Query]]:
    if not query.local_preds or k <= 1:
        return [[query]]
    sweeps = []
    for p in range(len(query.local_preds)):
        qs = [v.query for v in sample_ranges(query, catalog, p, k)]
        qs.append(query)
        seen: dict[float, Query] = {}
        for q in qs:
            s = q.local_preds[p].true_selectivity
            if s not in seen or q is query:
                seen[s] = q
        sweeps.append([seen[s] for s in sorted(seen)])
    return sweeps


def _outcome(query: Query, catalog: Catalog, cfg: LearnConfig, runner: _Runner, key: tuple) -> VariantOutcome:
    baseline = optimize(query, catalog)
    cands = [baseline]
    shapes = {plan_shape(baseline)}
    for r in range(cfg.n_random):
        p = random_plan(query, catalog, stable_seed(cfg.seed, "random", key, r))
        if plan_shape(p) not in shapes:
            shapes.add(plan_shape(p))
            cands.append(p)
    runs = []
    for c_idx, plan in enumerate(cands):
        pos = positional_shape(plan, query, catalog)
        seeds = [stable_seed(cfg.seed, "run", key, pos, j) for j in range(cfg.run_count)]
        runs.append((plan, runner.runs(plan, query, seeds)))
    w = _rank_index(runs, cfg.tie_tolerance, lambda p: positional_shape(p, query, catalog))
    base_score = summarize_runs(runs[0][1]).score
    win_score = summarize_runs(runs[w][1]).score
    return VariantOutcome(query, baseline, runs[w][0], base_score / win_score if win_score > 0 else 1.0)


def _confirmed(o: VariantOutcome, catalog: Catalog, cfg: LearnConfig, runner: _Runner, key: tuple) -> bool:
    """Re-measure baseline and winner with fresh seeds."""
    seeds_b = [stable_seed(cfg.seed, "confirm", key, "b", j) for j in range(cfg.run_count)]
    seeds_w = [stable_seed(cfg.seed, "confirm", key, "w", j) for j in range(cfg.run_count)]
    b = summarize_runs(runner.runs(o.baseline, o.query, seeds_b)).score
    w = summarize_runs(runner.runs(o.winner, o.query, seeds_w)).score
    return w > 0 and b / w >= cfg.min_improvement


def _bounds(plans: Sequence[Plan]) -> dict[tuple[int, str], tuple[float, float]]:
    out: dict[tuple[int, str], tuple[float, float]] = {}
    for plan in plans:
        for pop in plan.pops.values():
            if pop.pop_type is PopType.RETURN:
                continue
            items = [("Cardinality", pop.est_cardinality)]
            if pop.pop_type.is_scan:
                items.append((BOUNDED_SCAN_ONLY, float(pop.est_row_size)))
            for prop, v in items:
                k = (pop.id, prop)
                lo, hi = out.get(k, (v, v))
                out[k] = (min(lo, v), max(hi, v))
    return dict(sorted(out.items()))


def discover(sub: SubQuery, catalog: Catalog, config: Optional[LearnConfig] = None) -> list[Rewrite]:
    """Rewrites for one sub-query: one per maximal run of variants sharing a losing baseline and a winner."""
    cfg = config or LearnConfig()
    runner = _Runner(catalog)
    original = sub.query
    found: dict[tuple, Rewrite] = {}
    # the original query sits in every sweep; measure it once so all sweeps agree on it
    original_outcome: Optional[tuple[VariantOutcome, bool]] = None
    for s_idx, sweep in enumerate(_variant_sweeps(original, catalog, cfg.k_variants)):
        outcomes = []
        for v_idx, q in enumerate(sweep):
            if q is original and original_outcome is not None:
                outcomes.append(original_outcome)
                continue
            key = (sub.positions, "original") if q is original else (sub.positions, s_idx, v_idx)
            o = _outcome(q, catalog, cfg, runner, key)
            good = (plan_shape(o.winner) != plan_shape(o.baseline) and o.improvement >= cfg.min_improvement
                    and _confirmed(o, catalog, cfg, runner, key))
            outcomes.append((o, good))
            if q is original:
                original_outcome = outcomes[-1]
        k = 0
        while k < len(outcomes):
            o, good = outcomes[k]
            if not good:
                k += 1
                continue
            ident = (plan_shape(o.baseline), plan_shape(o.winner))
            end = k
            while end + 1 < len(outcomes) and outcomes[end + 1][1] and \
                    (plan_shape(outcomes[end + 1][0].baseline), plan_shape(outcomes[end + 1][0].winner)) == ident:
                end += 1
            group = [x for x, _ in outcomes[k:end + 1]]
            anchor = next((x for x in group if x.query is original), group[len(group) // 2])
            rw = Rewrite(
                problem_plan=_with_query_id(anchor.baseline, original.id),
                solution_plan=_with_query_id(anchor.winner, original.id),
                improvement_ratio=min(x.improvement for x in group),
                bounds=_bounds([x.baseline for x in group]),
                stats_context=tuple(x.query.id for x in group),
            )
            if ident in found:
                prev = found[ident]
                merged = dict(prev.bounds)
                for bk, (lo, hi) in rw.bounds.items():
                    plo, phi = merged.get(bk, (lo, hi))
                    merged[bk] = (min(lo, plo), max(hi, phi))
                keep = rw if any(x.query is original for x in group) else prev
                rw = Rewrite(keep.problem_plan, keep.solution_plan,
                             min(prev.improvement_ratio, rw.improvement_ratio), dict(sorted(merged.items())),
                             prev.stats_context + rw.stats_context)
            found[ident] = rw
            k = end + 1
    return list(found.values())


def _with_query_id(plan: Plan, qid: str) -> Plan:
    return Plan(plan.root, plan.pops, qid)


# ---------------------------------------------------------------------------
# abstraction


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def abstract(rewrite: Rewrite, workload_id: str = "", timestamp: Optional[str] = None,
             template_id: Optional[str] = None) -> Template:
    """Replace concrete names by traversal-order labels and attach bounds and the remedy guideline."""
    plan = rewrite.problem_plan
    top = plan[plan.root]
    if top.pop_type is PopType.RETURN:
        top = plan[top.inputs[0]]
    renum: dict[int, int] = {}
    tables: dict[str, str] = {}
    insts: dict[str, str] = {}
    indexes: dict[str, str] = {}
    for pop in plan.preorder(top.id):
        renum[pop.id] = len(renum) + 1
        if pop.table_ref is not None:
            tables.setdefault(pop.table_ref.table_name, f"T{len(tables) + 1}")
            insts.setdefault(pop.table_ref.instance, f"Q{len(insts) + 1}")
        if pop.index_name is not None:
            indexes.setdefault(pop.index_name, f"I{len(indexes) + 1}")

    concrete = plan_to_graph(plan, renum.keys())
    g = TripleGraph()
    for t in concrete:
        s = pop_iri(renum[int(t.s.value.rsplit("/", 1)[1])])
        o = t.o
        if isinstance(o, IRI):
            o = pop_iri(renum[int(o.value.rsplit("/", 1)[1])])
        elif t.p == HAS_TABLE_NAME:
            o = Literal(tables[str(o)])
        elif t.p == HAS_TABLE_INSTANCE:
            o = Literal(insts[str(o)])
        elif t.p == HAS_INDEX_NAME:
            o = Literal(indexes[str(o)])
        g.add(Triple(s, t.p, o))

    bounds = {(renum[k], prop): v for (k, prop), v in rewrite.bounds.items() if k in renum}
    guide = guideline_from_plan(rewrite.solution_plan, keep_index=set(indexes))
    guide = relabel(guide, insts, indexes)
    tmpl = Template(
        template_id=template_id or uuid.uuid4().hex,
        pattern_graph=g,
        bounds=dict(sorted(bounds.items())),
        guideline=guide,
        improvement_ratio=rewrite.improvement_ratio,
        provenance=Provenance(workload_id, rewrite.problem_plan.query_id, timestamp or _now()),
    )
    tmpl.check()
    return tmpl


# ---------------------------------------------------------------------------
# workload


@dataclass
class LearnReportRow:
    template_id: str
    query_id: str
    n_joins: int
    improvement_ratio: float


@dataclass
class LearnResult:
    kb: KnowledgeBase
    report: list[LearnReportRow] = field(default_factory=list)
    n_subqueries: int = 0
    n_unique_subqueries: int = 0


def _discover_task(args) -> list[Rewrite]:
    sub, catalog, cfg = args
    return discover(sub, catalog, cfg)


def unique_subqueries(workload: Sequence[Query], max_joins: int) -> tuple[list[SubQuery], int]:
    seen: set[tuple] = set()
    unique: list[SubQuery] = []
    total = 0
    for q in workload:
        for sq in segment_query(q, max_joins):
            total += 1
            sig = subquery_signature(sq)
            if sig not in seen:
                seen.add(sig)
                unique.append(sq)
    return unique, total


def learn_workload(workload: Sequence[Query], catalog: Catalog, config: Optional[LearnConfig] = None,
                   workload_id: str = "", timestamp: Optional[str] = None) -> LearnResult:
    cfg = config or LearnConfig()
    for q in workload:
        q.check_catalog(catalog)
    unique, total = unique_subqueries(workload, cfg.max_joins)
    tasks = [(sq, catalog, cfg) for sq in unique]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_discover_task, tasks, chunksize=max(1, len(tasks) // (4 * cfg.workers))))
    else:
        results = [_discover_task(t) for t in tasks]
    stamp = timestamp or _now()
    templates: dict[tuple, Template] = {}
    for rewrites in results:
        for rw in rewrites:
            t = abstract(rw, workload_id, stamp)
            key = t.structure_key()
            templates[key] = coalesce(templates[key], t, keep_first=True) if key in templates else t
    kb = KnowledgeBase.from_templates(templates.values(), created=stamp,
                                      provenance=[f"learn workload={workload_id} queries={len(workload)}"])
    report = [LearnReportRow(t.template_id, t.provenance.query_id, t.n_joins, t.improvement_ratio)
              for t in kb.templates.values()]
    return LearnResult(kb, report, total, len(unique))


def learn_into(kb: KnowledgeBase, delta: KnowledgeBase) -> KnowledgeBase:
    return merge_kb(kb, delta)
