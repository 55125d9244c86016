"""Online side: find template matches in a plan and re-optimize with the assembled guidelines."""

from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .errors import InvariantViolation
from .kb import KnowledgeBase
from .learning import stable_seed
from .pattern import evaluate
from .plan import Plan, enumerate_subplans
from .rdf import IRI, Term, plan_to_graph
from .sim.catalog import Catalog
from .sim.cost import stats_from_work, true_work
from .sim.guideline import GuidelineDoc, GuidelineNode, relabel, to_xml
from .sim.optimizer import IgnoredGuideline, optimize, optimize_with_report
from .sim.query import Query
from .template import Template


@dataclass(frozen=True)
class Match:
    template_id: str
    binding: tuple[tuple[str, Term], ...]
    covered_pops: frozenset[int]
    expected_improvement: float
    guideline: GuidelineNode = field(compare=False, repr=False)

    def __post_init__(self):
        if not self.covered_pops:
            raise InvariantViolation("a match must cover at least one pop")

    def bound(self) -> dict[str, Term]:
        return dict(self.binding)


def _pop_id(term: Term) -> Optional[int]:
    if isinstance(term, IRI):
        tail = term.value.rsplit("/", 1)[1]
        if tail.isdigit():
            return int(tail)
    return None


def match_plan(plan: Plan, kb: KnowledgeBase, max_joins: int = 4) -> list[Match]:
    """Climb the plan's join windows bottom-up and evaluate every compatible template on each."""
    by_joins: dict[int, list[tuple[Template, Counter]]] = {}
    for t in kb.templates.values():
        by_joins.setdefault(t.n_joins, []).append((t, t.pop_types()))
    out: list[Match] = []
    seen: set[tuple[str, frozenset[int]]] = set()
    for window in enumerate_subplans(plan, max_joins):
        cands = by_joins.get(window.n_joins)
        if not cands:
            continue
        have = Counter(plan[p].pop_type.value for p in window.pops)
        graph = None
        for t, need in cands:
            if any(have[k] < v for k, v in need.items()):
                continue
            if graph is None:
                graph = plan_to_graph(plan, window.pops)
            for row in evaluate(t.compiled(), graph):
                covered = frozenset(i for i in (_pop_id(v) for v in row.values()) if i is not None)
                key = (t.template_id, covered)
                if key in seen:
                    continue
                seen.add(key)
                out.append(Match(t.template_id, tuple(sorted(row.items())), covered,
                                 t.improvement_ratio, t.guideline))
    return out


def select_matches(matches: list[Match]) -> list[Match]:
    """Greedy by expected improvement; keep only pop-disjoint matches."""
    kept: list[Match] = []
    used: set[int] = set()
    for m in sorted(matches, key=lambda m: (-m.expected_improvement, len(m.covered_pops), m.template_id,
                                            sorted(m.covered_pops))):
        if used.isdisjoint(m.covered_pops):
            kept.append(m)
            used |= m.covered_pops
    return kept


def instantiate(match: Match, plan: Plan) -> GuidelineNode:
    b = match.bound()
    tabids: dict[str, str] = {}
    indexes: dict[str, str] = {}
    for leaf in match.guideline.leaves():
        var = f"pop_{leaf.tabid}"
        if var not in b or _pop_id(b[var]) not in plan.pops:
            raise InvariantViolation(f"template {match.template_id}: label {leaf.tabid} is unbound")
        pop = plan[_pop_id(b[var])]
        if pop.table_ref is None:
            raise InvariantViolation(f"template {match.template_id}: {leaf.tabid} bound to a non-scan pop")
        tabids[leaf.tabid] = pop.table_ref.instance
        if leaf.index is not None:
            if leaf.index not in b:
                raise InvariantViolation(f"template {match.template_id}: index label {leaf.index} is unbound")
            indexes[leaf.index] = str(b[leaf.index])
    return relabel(match.guideline, tabids, indexes)


def build_guidelines(kept: list[Match], plan: Plan) -> GuidelineDoc:
    return GuidelineDoc(tuple(instantiate(m, plan) for m in kept))


# ---------------------------------------------------------------------------
# re-optimization


@dataclass(frozen=True)
class ReoptConfig:
    max_joins: int = 4
    verify: bool = False
    run_count: int = 5
    seed: int = 0


@dataclass
class ReoptReport:
    query_id: str
    applied: list[Match] = field(default_factory=list)
    dropped: list[Match] = field(default_factory=list)
    ignored: list[tuple[Match, str]] = field(default_factory=list)
    est_cost_before: float = 0.0
    est_cost_after: float = 0.0
    elapsed_before: Optional[float] = None
    elapsed_after: Optional[float] = None
    guideline_xml: str = ""
    fell_back: bool = False

    @property
    def matched(self) -> int:
        return len(self.applied) + len(self.dropped) + len(self.ignored)


def median_elapsed(plan: Plan, query: Query, catalog: Catalog, run_count: int, seed: int) -> float:
    """Median simulated elapsed time; the same seeds are used for every plan of a query."""
    cost, work = true_work(plan, query, catalog)
    seeds = [stable_seed(seed, "verify", query.id, j) for j in range(run_count)]
    return statistics.median(stats_from_work(cost, work, catalog, s).elapsed for s in seeds)


def reoptimize(query: Query, catalog: Catalog, kb: KnowledgeBase,
               config: Optional[ReoptConfig] = None) -> tuple[Plan, ReoptReport]:
    cfg = config or ReoptConfig()
    plan0 = optimize(query, catalog)
    found = match_plan(plan0, kb, cfg.max_joins)
    kept = select_matches(found)
    kept_ids = {id(m) for m in kept}
    report = ReoptReport(query.id, est_cost_before=plan0.cost)
    report.dropped = [m for m in found if id(m) not in kept_ids]
    doc = build_guidelines(kept, plan0)
    report.guideline_xml = to_xml(doc)
    if not kept:
        plan1, ignored = plan0, []
    else:
        plan1, ignored = optimize_with_report(query, catalog, doc)
    for m, root in zip(kept, doc.roots):
        hit = next((ig for ig in ignored if ig.guideline is root), None)
        if hit is not None:
            report.ignored.append((m, hit.reason))
        else:
            report.applied.append(m)
    report.est_cost_after = plan1.cost
    if cfg.verify:
        report.elapsed_before = median_elapsed(plan0, query, catalog, cfg.run_count, cfg.seed)
        report.elapsed_after = median_elapsed(plan1, query, catalog, cfg.run_count, cfg.seed)
        if report.applied and report.elapsed_after >= report.elapsed_before:
            plan1 = plan0
            report.fell_back = True
            report.dropped = report.applied + report.dropped
            report.applied = []
            report.est_cost_after = plan0.cost
            report.elapsed_after = report.elapsed_before
    return plan1, report


def ignored_summary(ignored: list[IgnoredGuideline]) -> list[str]:
    return [f"{to_xml(GuidelineDoc((ig.guideline,))).strip()} :: {ig.reason}" for ig in ignored]
