"""Conjunctive queries (tables, equi-joins, local predicates) and the workload file format."""

from __future__ import annotations

import shlex
from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from typing import Optional

from ..errors import InputError
from ..plan import TableRef, format_number
from .catalog import Catalog


@dataclass(frozen=True, order=True)
class ColRef:
    instance: str
    column: str

    def __str__(self) -> str:
        return f"{self.instance}.{self.column}"

    @classmethod
    def parse(cls, text: str) -> ColRef:
        inst, sep, col = text.partition(".")
        if not sep or not inst or not col:
            raise InputError(f"expected <instance>.<column>, got {text!r}")
        return cls(inst, col)


@dataclass(frozen=True)
class JoinPred:
    left: ColRef
    right: ColRef
    est_selectivity: float
    true_selectivity: float

    def instances(self) -> frozenset[str]:
        return frozenset((self.left.instance, self.right.instance))

    def sel(self, mode: str) -> float:
        return self.est_selectivity if mode == "est" else self.true_selectivity


@dataclass(frozen=True)
class LocalPred:
    col: ColRef
    op: str
    value: str
    est_selectivity: float
    true_selectivity: float

    @property
    def instance(self) -> str:
        return self.col.instance

    def sel(self, mode: str) -> float:
        return self.est_selectivity if mode == "est" else self.true_selectivity


@dataclass(frozen=True)
class Query:
    id: str
    tables: tuple[TableRef, ...]
    join_preds: tuple[JoinPred, ...] = ()
    local_preds: tuple[LocalPred, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(self.tables))
        object.__setattr__(self, "join_preds", tuple(self.join_preds))
        object.__setattr__(self, "local_preds", tuple(self.local_preds))
        insts = [t.instance for t in self.tables]
        if len(set(insts)) != len(insts):
            raise InputError(f"query {self.id}: duplicate table instance")
        known = set(insts)
        for jp in self.join_preds:
            if not jp.instances() <= known:
                raise InputError(f"query {self.id}: join {jp.left} = {jp.right} references an undeclared instance")
            if jp.left.instance == jp.right.instance:
                raise InputError(f"query {self.id}: join predicate within one instance")
        for lp in self.local_preds:
            if lp.instance not in known:
                raise InputError(f"query {self.id}: predicate on undeclared instance {lp.instance}")
        for p in (*self.join_preds, *self.local_preds):
            for s in (p.est_selectivity, p.true_selectivity):
                if not 0 < s <= 1:
                    raise InputError(f"query {self.id}: selectivity {s} outside (0, 1]")

    @property
    def instances(self) -> tuple[str, ...]:
        return tuple(t.instance for t in self.tables)

    def table_of(self, instance: str) -> str:
        for t in self.tables:
            if t.instance == instance:
                return t.table_name
        raise InputError(f"query {self.id}: unknown instance {instance}")

    def neighbours(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {i: set() for i in self.instances}
        for jp in self.join_preds:
            a, b = jp.left.instance, jp.right.instance
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def is_connected(self, subset: Optional[Iterable[str]] = None) -> bool:
        nodes = set(self.instances if subset is None else subset)
        if not nodes:
            return False
        adj = self.neighbours()
        start = next(iter(nodes))
        seen = {start}
        stack = [start]
        while stack:
            for n in adj[stack.pop()]:
                if n in nodes and n not in seen:
                    seen.add(n)
                    stack.append(n)
        return seen == nodes

    def restrict(self, subset: Iterable[str], new_id: Optional[str] = None) -> Query:
        """Sub-query on ``subset`` with exactly the predicates it fully covers."""
        keep = set(subset)
        return Query(
            id=new_id or self.id,
            tables=tuple(t for t in self.tables if t.instance in keep),
            join_preds=tuple(j for j in self.join_preds if j.instances() <= keep),
            local_preds=tuple(p for p in self.local_preds if p.instance in keep),
        )

    def check_catalog(self, catalog: Catalog) -> None:
        for t in self.tables:
            catalog.table(t.table_name)
        for p in (*(jp.left for jp in self.join_preds), *(jp.right for jp in self.join_preds),
                  *(lp.col for lp in self.local_preds)):
            table = self.table_of(p.instance)
            if (table, p.column) not in catalog.columns:
                raise InputError(f"query {self.id}: unknown column {table}.{p.column}")

    def with_local_pred(self, index: int, pred: LocalPred) -> Query:
        preds = list(self.local_preds)
        preds[index] = pred
        return replace(self, local_preds=tuple(preds))


# ---------------------------------------------------------------------------
# workload file


def parse_workload(text: str) -> list[Query]:
    queries: list[Query] = []
    cur: Optional[dict] = None

    def flush():
        if cur is not None:
            queries.append(Query(cur["id"], tuple(cur["refs"]), tuple(cur["joins"]), tuple(cur["preds"])))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            tok = shlex.split(line)
        except ValueError as e:
            raise InputError(f"workload line {lineno}: {e}") from None
        try:
            if tok[0] == "QUERY" and len(tok) == 2:
                flush()
                cur = {"id": tok[1], "refs": [], "joins": [], "preds": []}
                continue
            if cur is None:
                raise InputError("statement before the first QUERY")
            if tok[0] == "REF" and len(tok) == 3:
                cur["refs"].append(TableRef(tok[1], tok[2]))
            elif tok[0] == "JOIN" and len(tok) == 8 and tok[2] == "=" and tok[4] == "EST" and tok[6] == "TRUE":
                cur["joins"].append(JoinPred(ColRef.parse(tok[1]), ColRef.parse(tok[3]),
                                             float(tok[5]), float(tok[7])))
            elif tok[0] == "PRED" and len(tok) == 8 and tok[4] == "EST" and tok[6] == "TRUE":
                cur["preds"].append(LocalPred(ColRef.parse(tok[1]), tok[2], tok[3],
                                              float(tok[5]), float(tok[7])))
            else:
                raise InputError(f"cannot parse {line!r}")
        except (InputError, ValueError) as e:
            raise InputError(f"workload line {lineno}: {e}") from None
    flush()
    return queries


def _quote(v: str) -> str:
    return shlex.quote(v) if v else "''"


def serialize_workload(queries: Iterable[Query]) -> str:
    out = []
    for q in queries:
        out.append(f"QUERY {q.id}")
        for t in q.tables:
            out.append(f"REF {t.table_name} {t.instance}")
        for j in q.join_preds:
            out.append(f"JOIN {j.left} = {j.right} EST {format_number(j.est_selectivity)} "
                       f"TRUE {format_number(j.true_selectivity)}")
        for p in q.local_preds:
            out.append(f"PRED {p.col} {_quote(p.op)} {_quote(p.value)} EST {format_number(p.est_selectivity)} "
                       f"TRUE {format_number(p.true_selectivity)}")
        out.append("")
    return "\n".join(out)


def rename_query(q: Query, tables: dict[str, str], columns: dict[str, str],
                 instances: dict[str, str], new_id: Optional[str] = None) -> Query:
    def col(c: ColRef) -> ColRef:
        return ColRef(instances.get(c.instance, c.instance), columns.get(c.column, c.column))

    return Query(
        id=new_id or q.id,
        tables=tuple(TableRef(tables.get(t.table_name, t.table_name), instances.get(t.instance, t.instance))
                     for t in q.tables),
        join_preds=tuple(replace(j, left=col(j.left), right=col(j.right)) for j in q.join_preds),
        local_preds=tuple(replace(p, col=col(p.col)) for p in q.local_preds),
    )
