"""Seeded misestimation scenarios plus generators for renamed, recombined and scaled workloads."""

from __future__ import annotations

import random
from dataclasses import replace
from importlib import resources

from ..plan import TableRef
from ..sim.catalog import Catalog, parse_catalog, rename_catalog
from ..sim.query import ColRef, JoinPred, LocalPred, Query, parse_workload, rename_query

MOTIFS = ("sort_spill", "index_flooding", "scan_inversion", "stale_range")


def _text(name: str) -> str:
    return resources.files(__package__).joinpath(name).read_text(encoding="utf-8")


def suite_catalog() -> Catalog:
    return parse_catalog(_text("suite.catalog"))


def motif_workload(name: str) -> list[Query]:
    if name not in MOTIFS and name != "healthy":
        raise KeyError(name)
    return parse_workload(_text(f"{name}.workload"))


def mixed_workload() -> list[Query]:
    """All motif queries plus accurately estimated ones (ten queries)."""
    out: list[Query] = []
    for m in MOTIFS:
        out += motif_workload(m)
    return out + motif_workload("healthy")


# ---------------------------------------------------------------------------
# renaming and recombination


def rename_workload(catalog: Catalog, workload: list[Query], prefix: str = "R"
                    ) -> tuple[Catalog, list[Query], dict[str, dict[str, str]]]:
    """Bijectively rename every table, column, index and instance."""
    tables = {t: f"{prefix}TAB{k}" for k, t in enumerate(catalog.tables)}
    columns: dict[str, str] = {}
    for _, c in catalog.columns:
        columns.setdefault(c, f"{prefix}COL{len(columns)}")
    indexes = {ix.name: f"{prefix}IDX{k}" for k, ix in enumerate(catalog.indexes)}
    insts: dict[str, str] = {}
    for q in workload:
        for t in q.tables:
            insts.setdefault(t.instance, f"{prefix.lower()}{len(insts)}")
    new_cat = rename_catalog(catalog, tables, columns, indexes)
    new_wl = [rename_query(q, tables, columns, insts, new_id=f"{prefix}_{q.id}") for q in workload]
    return new_cat, new_wl, {"tables": tables, "columns": columns, "indexes": indexes, "instances": insts}


def combine(a: Query, b: Query, new_id: str) -> Query:
    """Join two queries on the table instances they share (same table, same instance name).

    Shared instances keep ``a``'s local predicates; ``b``'s other instances are
    suffixed so they cannot collide.
    """
    shared = {t.instance for t in a.tables} & {t.instance for t in b.tables}
    for inst in shared:
        if a.table_of(inst) != b.table_of(inst):
            raise ValueError(f"instance {inst} names different tables")
    ren = {t.instance: t.instance if t.instance in shared else t.instance + "x" for t in b.tables}

    def col(c: ColRef) -> ColRef:
        return ColRef(ren[c.instance], c.column)

    tables = list(a.tables) + [TableRef(t.table_name, ren[t.instance]) for t in b.tables if t.instance not in shared]
    joins = list(a.join_preds) + [replace(j, left=col(j.left), right=col(j.right)) for j in b.join_preds]
    preds = list(a.local_preds) + [replace(p, col=col(p.col)) for p in b.local_preds if p.instance not in shared]
    return Query(new_id, tuple(tables), tuple(joins), tuple(preds))


def recombined_workload(catalog: Catalog, workload: list[Query], seed: int = 0, prefix: str = "R"
                        ) -> tuple[Catalog, list[Query]]:
    """Rename everything, then merge queries that share a table instance into larger queries."""
    cat, renamed, _ = rename_workload(catalog, workload, prefix)
    rng = random.Random(seed)
    pool = list(renamed)
    rng.shuffle(pool)
    out: list[Query] = []
    used: set[int] = set()
    for i, a in enumerate(pool):
        if i in used:
            continue
        partner = None
        for j in range(i + 1, len(pool)):
            if j in used:
                continue
            b = pool[j]
            shared = {t.instance for t in a.tables} & {t.instance for t in b.tables}
            if shared and all(a.table_of(s) == b.table_of(s) for s in shared) and \
                    len(a.tables) + len(b.tables) - len(shared) <= 5:
                partner = j
                break
        if partner is None:
            out.append(a)
        else:
            used.add(partner)
            out.append(combine(a, pool[partner], f"{a.id}+{pool[partner].id}"))
        used.add(i)
    return cat, out


# ---------------------------------------------------------------------------
# scaled workloads


def _jitter(rng: random.Random, sel: float, spread: float = 0.25) -> float:
    return min(1.0, sel * (1 + rng.uniform(-spread, spread)))


def generated_workload(n: int, seed: int = 0) -> list[Query]:
    """``n`` distinct queries cycling through the motif queries with jittered selectivities."""
    base = mixed_workload()
    rng = random.Random(seed)
    out = []
    for k in range(n):
        q = base[k % len(base)]
        preds = []
        for p in q.local_preds:
            ratio = p.est_selectivity / p.true_selectivity
            t = _jitter(rng, p.true_selectivity)
            preds.append(replace(p, true_selectivity=t, est_selectivity=min(1.0, t * ratio)))
        out.append(Query(f"gen{k}_{q.id}", q.tables, q.join_preds, tuple(preds)))
    return out
