"""Query execution plan model: operators, the line-oriented plan file format,
and bounded sub-plan enumeration used by both learning and matching."""

from __future__ import annotations

import enum
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

from .errors import InputError


class PopType(str, enum.Enum):
    NLJOIN = "NLJOIN"
    HSJOIN = "HSJOIN"
    MSJOIN = "MSJOIN"
    TBSCAN = "TBSCAN"
    IXSCAN = "IXSCAN"
    FETCH = "FETCH"
    SORT = "SORT"
    RETURN = "RETURN"

    @property
    def is_join(self) -> bool:
        return self in JOIN_TYPES

    @property
    def is_scan(self) -> bool:
        return self in SCAN_TYPES

    @property
    def arity(self) -> int:
        if self in JOIN_TYPES:
            return 2
        if self in SCAN_TYPES:
            return 0
        return 1


JOIN_TYPES = frozenset({PopType.NLJOIN, PopType.HSJOIN, PopType.MSJOIN})
SCAN_TYPES = frozenset({PopType.TBSCAN, PopType.IXSCAN})


class PlanError(InputError):
    """Base class for invalid plan text or structure."""

    kind = "invalid-plan"


class PlanSyntaxError(PlanError):
    kind = "syntax"

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ArityError(PlanError):
    kind = "arity"


class DuplicateIdError(PlanError):
    kind = "duplicate-id"


class CycleError(PlanError):
    kind = "cycle"


class PlanStructureError(PlanError):
    """Root, reachability, table-reference or dangling-input violations."""

    kind = "structure"


@dataclass(frozen=True, order=True)
class TableRef:
    table_name: str
    instance: str


@dataclass(frozen=True)
class Lolepop:
    id: int
    pop_type: PopType
    est_cardinality: float
    est_row_size: int
    est_cost: float
    table_ref: Optional[TableRef] = None
    index_name: Optional[str] = None
    inputs: tuple[int, ...] = ()

    @property
    def outer(self) -> Optional[int]:
        return self.inputs[0] if self.inputs else None

    @property
    def inner(self) -> Optional[int]:
        return self.inputs[1] if len(self.inputs) > 1 else None


@dataclass(frozen=True)
class Plan:
    root: int
    pops: Mapping[int, Lolepop]
    query_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pops", dict(self.pops))
        validate_plan(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Plan):
            return NotImplemented
        return (self.root, self.query_id, self.pops) == (other.root, other.query_id, other.pops)

    def __hash__(self) -> int:
        return hash((self.root, self.query_id, tuple(sorted(self.pops.items()))))

    def __getitem__(self, pop_id: int) -> Lolepop:
        return self.pops[pop_id]

    def preorder(self, start: Optional[int] = None) -> Iterator[Lolepop]:
        """Depth-first traversal, outer input before inner."""
        stack = [self.root if start is None else start]
        while stack:
            pop = self.pops[stack.pop()]
            yield pop
            stack.extend(reversed(pop.inputs))

    def postorder(self) -> list[Lolepop]:
        out: list[Lolepop] = []

        def visit(pid: int) -> None:
            pop = self.pops[pid]
            for child in pop.inputs:
                visit(child)
            out.append(pop)

        visit(self.root)
        return out

    def parents(self) -> dict[int, int]:
        return {c: p.id for p in self.pops.values() for c in p.inputs}

    def joins(self) -> list[Lolepop]:
        return [p for p in self.preorder() if p.pop_type.is_join]

    def scans(self) -> list[Lolepop]:
        return [p for p in self.preorder() if p.pop_type.is_scan]

    def instances(self) -> frozenset[str]:
        return frozenset(p.table_ref.instance for p in self.scans())

    def leaf_instances(self, pop_id: int) -> frozenset[str]:
        return frozenset(p.table_ref.instance for p in self.preorder(pop_id) if p.table_ref)

    @property
    def cost(self) -> float:
        return self.pops[self.root].est_cost


def validate_plan(plan: Plan) -> None:
    pops = plan.pops
    for pid, pop in pops.items():
        if pid != pop.id:
            raise PlanStructureError(f"pop keyed {pid} carries id {pop.id}")
        if pop.id < 1:
            raise PlanStructureError(f"pop id must be positive, got {pop.id}")
        if len(pop.inputs) != pop.pop_type.arity:
            raise ArityError(
                f"pop {pid} {pop.pop_type.value} expects {pop.pop_type.arity} input(s), "
                f"got {len(pop.inputs)}"
            )
        if pop.est_cardinality < 0 or pop.est_row_size < 0 or pop.est_cost < 0:
            raise PlanStructureError(f"pop {pid} has a negative estimate")
        if pop.pop_type.is_scan != (pop.table_ref is not None):
            raise PlanStructureError(f"pop {pid}: table reference present iff TBSCAN/IXSCAN")
        if (pop.pop_type is PopType.IXSCAN) != (pop.index_name is not None):
            raise PlanStructureError(f"pop {pid}: index name present iff IXSCAN")
        for child in pop.inputs:
            if child not in pops:
                raise PlanStructureError(f"pop {pid} references unknown input {child}")

    returns = [p.id for p in pops.values() if p.pop_type is PopType.RETURN]
    if len(returns) != 1:
        raise PlanStructureError(f"expected exactly one RETURN, found {len(returns)}")
    if plan.root != returns[0]:
        raise PlanStructureError(f"root {plan.root} is not the RETURN pop {returns[0]}")

    # cycle check before the consumer check so a loop is reported as such
    state: dict[int, int] = {}
    for start in pops:
        if start in state:
            continue
        stack = [(start, iter(pops[start].inputs))]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            child = next(it, None)
            if child is None:
                state[node] = 2
                stack.pop()
            elif state.get(child) == 1:
                raise CycleError(f"cycle through pops {node} -> {child}")
            elif child not in state:
                state[child] = 1
                stack.append((child, iter(pops[child].inputs)))

    consumers: dict[int, int] = {}
    for pop in pops.values():
        for child in pop.inputs:
            if child in consumers:
                raise PlanStructureError(f"pop {child} feeds more than one consumer")
            consumers[child] = pop.id
    if plan.root in consumers:
        raise PlanStructureError("RETURN pop cannot be an input")
    orphans = set(pops) - set(consumers) - {plan.root}
    if orphans:
        raise PlanStructureError(f"pops {sorted(orphans)} do not reach the root")

    seen: set[str] = set()
    for pop in pops.values():
        if pop.table_ref is not None:
            inst = pop.table_ref.instance
            if not inst or not pop.table_ref.table_name:
                raise PlanStructureError(f"pop {pop.id} has an empty table reference")
            if inst in seen:
                raise PlanStructureError(f"table instance {inst} appears twice")
            seen.add(inst)


# ---------------------------------------------------------------------------
# text format


def format_number(x: float) -> str:
    """Shortest round-trip rendering; integral values print without a fraction."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def serialize_plan(plan: Plan) -> str:
    lines: list[str] = []
    if plan.query_id:
        lines += [f"PLAN {plan.query_id}", ""]
    for pop in plan.preorder():
        lines.append(f"POP {pop.id} {pop.pop_type.value}")
        lines.append(f"CARD {format_number(pop.est_cardinality)}")
        lines.append(f"ROWSZ {pop.est_row_size}")
        lines.append(f"COST {format_number(pop.est_cost)}")
        if pop.table_ref is not None:
            lines.append(f"TABLE {pop.table_ref.table_name} {pop.table_ref.instance}")
        if pop.index_name is not None:
            lines.append(f"INDEX {pop.index_name}")
        if pop.inputs:
            lines.append("INPUTS " + " ".join(str(i) for i in pop.inputs))
        lines.append("")
    return "\n".join(lines[:-1]) + "\n"


_FIELDS = ("CARD", "ROWSZ", "COST", "TABLE", "INDEX", "INPUTS")


def parse_plan(text: str) -> Plan:
    query_id = ""
    stanzas: list[dict] = []
    current: Optional[dict] = None

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            current = None
            continue
        if line != line.lstrip():
            raise PlanSyntaxError("unexpected indentation", lineno, 1)
        tokens = line.split()
        key = tokens[0]

        def fail(msg: str, tok: int = 0) -> PlanSyntaxError:
            col = line.find(tokens[tok]) + 1 if tok < len(tokens) else len(line) + 1
            return PlanSyntaxError(msg, lineno, col)

        if key == "PLAN":
            if stanzas or current is not None or len(tokens) != 2:
                raise fail("PLAN header must be the first line and name one query")
            query_id = tokens[1]
            continue
        if key == "POP":
            if current is not None:
                raise fail("POP must start a new stanza")
            if len(tokens) != 3:
                raise fail("expected 'POP <id> <type>'")
            try:
                pid = int(tokens[1])
            except ValueError:
                raise fail("pop id must be an integer", 1) from None
            try:
                ptype = PopType(tokens[2])
            except ValueError:
                raise fail(f"unknown pop type {tokens[2]!r}", 2) from None
            current = {"id": pid, "type": ptype, "line": lineno}
            stanzas.append(current)
            continue
        if current is None:
            raise fail(f"{key} outside of a POP stanza")
        if key not in _FIELDS:
            raise fail(f"unknown field {key!r}")
        if key in current:
            raise fail(f"duplicate {key} field")
        args = tokens[1:]
        try:
            if key == "CARD":
                (current[key],) = (float(a) for a in args)
            elif key == "COST":
                (current[key],) = (float(a) for a in args)
            elif key == "ROWSZ":
                (current[key],) = (int(a) for a in args)
            elif key == "TABLE":
                name, inst = args
                current[key] = TableRef(name, inst)
            elif key == "INDEX":
                (current[key],) = args
            elif key == "INPUTS":
                if len(args) > 2:
                    raise ValueError
                current[key] = tuple(int(a) for a in args)
        except ValueError:
            raise fail(f"malformed {key} field", 1 if len(tokens) > 1 else 0) from None

    if not stanzas:
        raise PlanSyntaxError("no POP stanzas", 1, 1)

    pops: dict[int, Lolepop] = {}
    for st in stanzas:
        for req in ("CARD", "ROWSZ", "COST"):
            if req not in st:
                raise PlanSyntaxError(f"pop {st['id']} lacks {req}", st["line"], 1)
        if st["id"] in pops:
            raise DuplicateIdError(f"pop id {st['id']} defined twice (line {st['line']})")
        pops[st["id"]] = Lolepop(
            id=st["id"],
            pop_type=st["type"],
            est_cardinality=st["CARD"],
            est_row_size=st["ROWSZ"],
            est_cost=st["COST"],
            table_ref=st.get("TABLE"),
            index_name=st.get("INDEX"),
            inputs=st.get("INPUTS", ()),
        )
    # arity first so a join with one input is reported as such, not as a
    # structural problem further down
    for pop in pops.values():
        if len(pop.inputs) != pop.pop_type.arity:
            raise ArityError(
                f"pop {pop.id} {pop.pop_type.value} expects {pop.pop_type.arity} input(s), "
                f"got {len(pop.inputs)}"
            )
    returns = [p.id for p in pops.values() if p.pop_type is PopType.RETURN]
    root = returns[0] if len(returns) == 1 else stanzas[0]["id"]
    return Plan(root=root, pops=pops, query_id=query_id)


# ---------------------------------------------------------------------------
# sub-plans


@dataclass(frozen=True)
class SubPlan:
    """A window of connected joins plus the non-join pops hanging below them.

    Inputs leading to a join outside the window are cut: the cut join is not
    part of ``pops``.
    """

    root: int
    joins: frozenset[int]
    pops: frozenset[int] = field(compare=False)

    @property
    def n_joins(self) -> int:
        return len(self.joins)


def _join_tree(plan: Plan) -> tuple[dict[int, int], dict[int, list[int]]]:
    """Parent/children relation between join pops, skipping unary pops."""
    parent: dict[int, int] = {}
    children: dict[int, list[int]] = {j.id: [] for j in plan.joins()}

    def below(pid: int, owner: int) -> None:
        pop = plan.pops[pid]
        if pop.pop_type.is_join:
            parent[pid] = owner
            children[owner].append(pid)
            return
        for c in pop.inputs:
            below(c, owner)

    for j in children:
        for c in plan.pops[j].inputs:
            below(c, j)
    return parent, children


def _window_pops(plan: Plan, joins: frozenset[int]) -> frozenset[int]:
    out: set[int] = set()
    stack = list(joins)
    while stack:
        pid = stack.pop()
        if pid in out:
            continue
        out.add(pid)
        for c in plan.pops[pid].inputs:
            cpop = plan.pops[c]
            if cpop.pop_type.is_join and c not in joins:
                continue
            stack.append(c)
    return frozenset(out)


def enumerate_subplans(plan: Plan, max_joins: int) -> list[SubPlan]:
    """All connected join windows of at most ``max_joins`` joins, bottom-up.

    Windows are ordered by the post-order position of their top join, then by
    size, so smaller structures low in the tree come first and the walk ends
    at the windows just below RETURN.
    """
    if max_joins < 1:
        raise ValueError("max_joins must be >= 1")
    parent, children = _join_tree(plan)
    post = {p.id: i for i, p in enumerate(plan.postorder())}

    found: set[frozenset[int]] = set()
    for top in children:
        # grow connected sets downward from `top`, which stays the highest join
        frontier = [frozenset({top})]
        while frontier:
            nxt = []
            for s in frontier:
                if s in found:
                    continue
                found.add(s)
                if len(s) == max_joins:
                    continue
                for j in s:
                    for c in children[j]:
                        if c not in s:
                            nxt.append(s | {c})
            frontier = nxt

    def top_of(s: frozenset[int]) -> int:
        return next(j for j in s if parent.get(j) not in s)

    subs = [SubPlan(root=top_of(s), joins=s, pops=_window_pops(plan, s)) for s in found]
    subs.sort(key=lambda sp: (post[sp.root], sp.n_joins, sorted(sp.joins)))
    return subs


def count_join_windows_bruteforce(plan: Plan, max_joins: int) -> int:
    """Reference count of connected join subsets, by testing every subset."""
    parent, _ = _join_tree(plan)
    joins = [j.id for j in plan.joins()]
    total = 0
    for k in range(1, min(max_joins, len(joins)) + 1):
        for combo in combinations(joins, k):
            s = set(combo)
            tops = [j for j in s if parent.get(j) not in s]
            if len(tops) == 1:
                total += 1
    return total
