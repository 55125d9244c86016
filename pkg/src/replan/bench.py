"""Desk-scale benchmark harness: learning cost, matching latency and routinization grids.

Every measurement is a list of flat rows (dicts) so it can be written as a
tab-separated table with a header row.
"""

from __future__ import annotations

import csv
import gc
import io
import random
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, TextIO, Union

import numpy as np

from .kb import KnowledgeBase
from .learning import LearnConfig, Rewrite, abstract, discover, learn_workload, unique_subqueries
from .matching import match_plan
from .plan import Lolepop, Plan, PopType, TableRef, enumerate_subplans
from .scenarios import generated_workload, mixed_workload, recombined_workload, suite_catalog

Row = dict[str, object]


@dataclass(frozen=True)
class BenchConfig:
    seed: int = 0
    max_joins: int = 4
    thresholds: tuple[int, ...] = (2, 3, 4)
    table_counts: tuple[int, ...] = (4, 8, 12, 16, 24, 32)
    plans_per_size: int = 3
    latency_templates: int = 100
    repeats: int = 3
    grid_queries: tuple[int, ...] = (20, 50, 100)
    grid_templates: tuple[int, ...] = (100, 250, 500, 1000)
    workload_sizes: tuple[int, ...] = (10, 20, 30, 40, 50)
    workers: int = 1


QUICK = BenchConfig(table_counts=(4, 8, 16), plans_per_size=2, latency_templates=30,
                    grid_queries=(5, 10), grid_templates=(20, 40, 80), workload_sizes=(5, 10, 15))


# ---------------------------------------------------------------------------
# synthetic plans and templates


def synthetic_plan(n_tables: int, rng: random.Random, query_id: str = "synthetic",
                   n_table_names: int = 12) -> Plan:
    """A random bushy join tree over ``n_tables`` table references with plausible estimates.

    Scans are table scans or FETCH over IXSCAN; merge joins get SORT inputs.
    """
    if n_tables < 1:
        raise ValueError("n_tables must be >= 1")
    # nodes: (pop_type, card, row_size, cost, table_ref, index, children)
    forest = []
    for k in range(n_tables):
        tab = f"TAB{rng.randrange(n_table_names)}"
        ref = TableRef(tab, f"t{k}")
        card = float(round(10 ** rng.uniform(1.5, 6.0)))
        width = rng.choice((16, 24, 40, 64, 96, 128, 200))
        if rng.random() < 0.3:
            sel = 10 ** rng.uniform(-3, 0)
            out = max(1.0, round(card * sel))
            ix = ("IXSCAN", out, 16, 20 + out * 0.05, ref, f"IX{tab[3:]}", ())
            forest.append(("FETCH", out, width, ix[3] + out * 0.2, None, None, (ix,)))
        else:
            forest.append(("TBSCAN", card, width, card * width / 4096 + 1, ref, None, ()))
    while len(forest) > 1:
        a = forest.pop(rng.randrange(len(forest)))
        b = forest.pop(rng.randrange(len(forest)))
        method = rng.choice(("NLJOIN", "HSJOIN", "MSJOIN"))
        if method == "MSJOIN":
            a = ("SORT", a[1], a[2], a[3] * 1.3, None, None, (a,))
            b = ("SORT", b[1], b[2], b[3] * 1.3, None, None, (b,))
        card = max(1.0, round(max(a[1], b[1]) * 10 ** rng.uniform(-1.5, 0.5)))
        forest.append((method, card, a[2] + b[2], a[3] + b[3] + card * 0.01, None, None, (a, b)))
    top = forest[0]
    return _number(("RETURN", top[1], top[2], top[3], None, None, (top,)), query_id)


def _number(tree: tuple, query_id: str) -> Plan:
    pops: dict[int, Lolepop] = {}
    counter = iter(range(1, 1 << 30))

    def visit(node: tuple) -> int:
        pid = next(counter)
        kids = tuple(visit(c) for c in node[6])
        pops[pid] = Lolepop(pid, PopType(node[0]), float(node[1]), int(node[2]), round(float(node[3]), 2),
                            node[4], node[5], kids)
        return pid

    root = visit(tree)
    return Plan(root, pops, query_id)


def mutate_joins(plan: Plan, rng: random.Random) -> Plan:
    """Same leaves, different join methods and input order: a stand-in solution plan."""
    pops = {}
    for pid, p in plan.pops.items():
        if p.pop_type.is_join:
            method = rng.choice([m for m in (PopType.NLJOIN, PopType.HSJOIN, PopType.MSJOIN) if m != p.pop_type])
            inputs = p.inputs[::-1] if rng.random() < 0.5 else p.inputs
            pops[pid] = Lolepop(pid, method, p.est_cardinality, p.est_row_size, p.est_cost,
                                p.table_ref, p.index_name, inputs)
        else:
            pops[pid] = p
    return Plan(plan.root, pops, plan.query_id)


def synthetic_templates(n: int, seed: int = 0, max_joins: int = 4, spread: float = 4.0) -> KnowledgeBase:
    """``n`` templates abstracted from random join windows, with bounds of +/- ``spread``x."""
    rng = random.Random(seed)
    out = []
    for k in range(n):
        n_joins = rng.randint(1, max_joins)
        plan = synthetic_plan(n_joins + 1, rng, f"syn{k}")
        bounds = {}
        for p in plan.pops.values():
            if p.pop_type is PopType.RETURN:
                continue
            bounds[(p.id, "Cardinality")] = (max(1.0, p.est_cardinality / spread), p.est_cardinality * spread)
            if p.pop_type.is_scan:
                bounds[(p.id, "RowSize")] = (float(p.est_row_size), float(p.est_row_size))
        rw = Rewrite(plan, mutate_joins(plan, rng), round(rng.uniform(1.1, 3.0), 3), bounds, ())
        out.append(abstract(rw, "synthetic", "1970-01-01T00:00:00Z", f"{rng.getrandbits(128):032x}"))
    return KnowledgeBase.from_templates(out, created="1970-01-01T00:00:00Z", provenance=["synthetic"])


# ---------------------------------------------------------------------------
# measurements


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line; returns (slope, intercept, r_squared)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def learning_threshold_sweep(cfg: BenchConfig) -> list[Row]:
    """Discovery time per sub-query as the join threshold grows."""
    catalog, workload = recombined_workload(suite_catalog(), mixed_workload(), cfg.seed)
    rows = []
    for threshold in cfg.thresholds:
        lc = LearnConfig(max_joins=threshold, seed=cfg.seed)
        unique, total = unique_subqueries(workload, threshold)
        by_joins: dict[int, list[float]] = {}
        t_all = time.perf_counter()
        for sq in unique:
            t0 = time.perf_counter()
            discover(sq, catalog, lc)
            by_joins.setdefault(len(sq.query.tables) - 1, []).append(time.perf_counter() - t0)
        elapsed = time.perf_counter() - t_all
        for j, times in sorted(by_joins.items()):
            rows.append({"threshold": threshold, "queries": len(workload), "subqueries": total,
                         "unique_subqueries": len(unique), "joins": j, "n": len(times),
                         "mean_subquery_s": round(sum(times) / len(times), 6),
                         "total_s": round(elapsed, 4), "per_query_s": round(elapsed / len(workload), 6)})
    return rows


def learning_scalability(cfg: BenchConfig) -> list[Row]:
    """Learning time against workload size; each size is timed ``repeats`` times and the minimum kept."""
    catalog = suite_catalog()
    lc = LearnConfig(max_joins=cfg.max_joins, seed=cfg.seed, workers=cfg.workers)

    def once(wl):
        gc.collect()
        t0 = time.perf_counter()
        res = learn_workload(wl, catalog, lc, workload_id=f"generated{len(wl)}", timestamp="1970-01-01T00:00:00Z")
        return time.perf_counter() - t0, res

    once(generated_workload(min(cfg.workload_sizes), cfg.seed))  # warm-up
    rows = []
    for n in cfg.workload_sizes:
        wl = generated_workload(n, cfg.seed)
        secs, res = min((once(wl) for _ in range(max(1, cfg.repeats - 1))), key=lambda x: x[0])
        rows.append({"queries": n, "unique_subqueries": res.n_unique_subqueries, "templates": len(res.kb),
                     "seconds": round(secs, 4)})
    return rows


def time_matching(plans: Iterable[Plan], kb: KnowledgeBase, max_joins: int) -> tuple[float, int]:
    gc.collect()
    t0 = time.perf_counter()
    matches = sum(len(match_plan(p, kb, max_joins)) for p in plans)
    return time.perf_counter() - t0, matches


def matching_latency(cfg: BenchConfig, kb: Optional[KnowledgeBase] = None) -> list[Row]:
    """Per-rewrite matching time on plans with a growing number of table references."""
    kb = kb if kb is not None else synthetic_templates(cfg.latency_templates, cfg.seed, cfg.max_joins)
    rng = random.Random(cfg.seed)
    rows = []
    for n in cfg.table_counts:
        plans = [synthetic_plan(n, rng, f"lat{n}_{k}") for k in range(cfg.plans_per_size)]
        secs, matches = min(time_matching(plans, kb, cfg.max_joins) for _ in range(max(1, cfg.repeats)))
        windows = sum(len(enumerate_subplans(p, cfg.max_joins)) for p in plans)
        rows.append({"tables": n, "plans": len(plans), "templates": len(kb), "windows": windows,
                     "matches": matches, "seconds": round(secs, 6),
                     "per_rewrite_ms": round(1000 * secs / (len(plans) * max(1, len(kb))), 6)})
    return rows


def routinization(cfg: BenchConfig) -> list[Row]:
    """Total matching time over a (queries x templates) grid."""
    rng = random.Random(cfg.seed + 1)
    all_plans = [synthetic_plan(rng.randint(4, 10), rng, f"q{k}") for k in range(max(cfg.grid_queries))]
    full = synthetic_templates(max(cfg.grid_templates), cfg.seed + 2, cfg.max_joins)
    ids = list(full.templates)
    rows = []
    for nq in cfg.grid_queries:
        for nt in cfg.grid_templates:
            kb = KnowledgeBase({t: full.templates[t] for t in ids[:nt]})
            secs, matches = time_matching(all_plans[:nq], kb, cfg.max_joins)
            rows.append({"queries": nq, "templates": nt, "matches": matches, "seconds": round(secs, 4)})
    return rows


# ---------------------------------------------------------------------------
# output


def write_tsv(rows: Sequence[Row], out: Union[TextIO, str, Path]) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", encoding="utf-8", newline="") as fh:
            write_tsv(rows, fh)
        return
    if not rows:
        return
    w = csv.DictWriter(out, fieldnames=list(rows[0]), delimiter="\t", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def tsv_text(rows: Sequence[Row]) -> str:
    buf = io.StringIO()
    write_tsv(rows, buf)
    return buf.getvalue()


def summary(threshold: list[Row], scal: list[Row], latency: list[Row], grid: list[Row]) -> list[Row]:
    out: list[Row] = []
    if scal:
        _, _, r2 = linear_fit([r["queries"] for r in scal], [r["seconds"] for r in scal])
        out.append({"measure": "learning_time_vs_queries_r2", "value": round(r2, 4)})
    if latency:
        base = latency[0]
        worst = max(r["per_rewrite_ms"] / (base["per_rewrite_ms"] * r["tables"] / base["tables"]) for r in latency)
        out.append({"measure": "latency_ratio_to_linear_max", "value": round(worst, 4)})
        out.append({"measure": "latency_ms_per_rewrite_largest", "value": latency[-1]["per_rewrite_ms"]})
    for nq in sorted({r["queries"] for r in grid}):
        cells = [r for r in grid if r["queries"] == nq]
        if len(cells) >= 2:
            _, _, r2 = linear_fit([r["templates"] for r in cells], [r["seconds"] for r in cells])
            out.append({"measure": f"grid_time_vs_templates_r2_q{nq}", "value": round(r2, 4)})
    if threshold:
        per = {}
        for r in threshold:
            per[r["threshold"]] = r["total_s"]
        out += [{"measure": f"learning_total_s_threshold{t}", "value": v} for t, v in per.items()]
    return out


def run_bench(cfg: BenchConfig, out_dir: Union[str, Path]) -> dict[str, list[Row]]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = {
        "learning_threshold": learning_threshold_sweep(cfg),
        "learning_scalability": learning_scalability(cfg),
        "matching_latency": matching_latency(cfg),
        "routinization": routinization(cfg),
    }
    tables["summary"] = summary(tables["learning_threshold"], tables["learning_scalability"],
                                tables["matching_latency"], tables["routinization"])
    for name, rows in tables.items():
        write_tsv(rows, out / f"{name}.tsv")
    return tables
