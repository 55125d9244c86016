"""Guideline-aware join optimizer, exhaustive enumeration oracle, and random plan generator."""

from __future__ import annotations

import random
from collections.abc import Iterator
from dataclasses import dataclass
from typing import Optional, Union

from ..errors import InputError
from ..plan import Plan, PopType
from .catalog import Catalog
from .cost import EST, CostModel, NodeResult, PlanNode, materialize
from .guideline import GuidelineDoc, GuidelineNode
from .query import Query

JOIN_METHODS = (PopType.NLJOIN, PopType.HSJOIN, PopType.MSJOIN)
DP_MAX_TABLES = 6
EXACT_SAMPLING_MAX_TABLES = 8


class DisconnectedQueryError(InputError):
    pass


@dataclass(frozen=True)
class IgnoredGuideline:
    guideline: GuidelineNode
    reason: str


Cand = tuple[PlanNode, NodeResult]


class _Space:
    """Positional view of a query: instance bitmasks, adjacency, access paths."""

    def __init__(self, query: Query, catalog: Catalog, mode: str = EST):
        self.query = query
        self.catalog = catalog
        self.model = CostModel(query, catalog, mode)
        self.insts = list(query.instances)
        self.pos = {inst: k for k, inst in enumerate(self.insts)}
        self.n = len(self.insts)
        self.full = (1 << self.n) - 1
        self.adj = [0] * self.n
        for jp in query.join_preds:
            a, b = self.pos[jp.left.instance], self.pos[jp.right.instance]
            self.adj[a] |= 1 << b
            self.adj[b] |= 1 << a
        self.cross = catalog.params.cross_products
        self._conn: dict[int, bool] = {}
        self._leaves: dict[int, frozenset[str]] = {}

    def leaves(self, mask: int) -> frozenset[str]:
        s = self._leaves.get(mask)
        if s is None:
            s = frozenset(self.insts[k] for k in range(self.n) if mask >> k & 1)
            self._leaves[mask] = s
        return s

    def mask_of(self, insts) -> int:
        m = 0
        for i in insts:
            m |= 1 << self.pos[i]
        return m

    def connected(self, mask: int) -> bool:
        c = self._conn.get(mask)
        if c is None:
            low = mask & -mask
            seen = low
            frontier = low
            while frontier:
                k = (frontier & -frontier).bit_length() - 1
                frontier &= frontier - 1
                new = self.adj[k] & mask & ~seen
                seen |= new
                frontier |= new
            c = seen == mask
            self._conn[mask] = c
        return c

    def linked(self, a: int, b: int) -> bool:
        for k in range(self.n):
            if a >> k & 1 and self.adj[k] & b:
                return True
        return False

    def valid_part(self, mask: int) -> bool:
        return self.cross or self.connected(mask)

    def splits(self, mask: int) -> Iterator[tuple[int, int]]:
        """Ordered (outer, inner) partitions of ``mask`` in a fixed positional order."""
        sub = (mask - 1) & mask
        while sub:
            other = mask ^ sub
            if self.valid_part(sub) and self.valid_part(other) and (self.cross or self.linked(sub, other)):
                yield sub, other
            sub = (sub - 1) & mask

    def access_paths(self, inst: str) -> list[PlanNode]:
        paths = [PlanNode(PopType.TBSCAN, (), inst)]
        for ix in self.catalog.indexes_on(self.query.table_of(inst)):
            paths.append(PlanNode(PopType.FETCH, (PlanNode(PopType.IXSCAN, (), inst, ix.name),)))
        return paths

    def leaf_cands(self, inst: str) -> list[Cand]:
        return [(p, self.model.evaluate(p)) for p in self.access_paths(inst)]

    def join(self, method: PopType, o: Cand, i: Cand) -> Optional[Cand]:
        m = self.model
        if method is PopType.MSJOIN:
            key = m.merge_column(o[1].leaves, i[1].leaves)
            if key is None:
                return None
            sides = []
            for (node, res), k in ((o, key[0]), (i, key[1])):
                if not m.ordered_on(node, k):
                    node = PlanNode(PopType.SORT, (node,))
                    res = m.apply(node, (res,))
                sides.append((node, res))
            node = PlanNode(method, (sides[0][0], sides[1][0]))
            return node, m.apply(node, (sides[0][1], sides[1][1]))
        node = PlanNode(method, (o[0], i[0]))
        return node, m.apply(node, (o[1], i[1]))

    def best_join(self, outers: list[Cand], inners: list[Cand],
                  methods: tuple[PopType, ...] = JOIN_METHODS) -> Optional[Cand]:
        best: Optional[Cand] = None
        for method in methods:
            for o in outers:
                for i in inners:
                    c = self.join(method, o, i)
                    if c is not None and (best is None or c[1].cost < best[1].cost):
                        best = c
        return best


# ---------------------------------------------------------------------------
# guideline resolution


class _Skip(Exception):
    pass


@dataclass(frozen=True)
class _Forced:
    tag: str
    index: Optional[str] = None
    outer: int = 0
    inner: int = 0


def _resolve(space: _Space, node: GuidelineNode, out: dict[int, _Forced]) -> int:
    if node.is_join:
        o = _resolve(space, node.children[0], out)
        i = _resolve(space, node.children[1], out)
        if o & i:
            raise _Skip("table instance referenced twice")
        if not space.cross and not space.linked(o, i):
            raise _Skip("join inputs share no join predicate")
        if node.tag == "MSJOIN" and not space.linked(o, i):
            raise _Skip("merge join needs a join predicate")
        out[o | i] = _Forced(node.tag, None, o, i)
        return o | i
    if node.tabid is not None:
        if node.tabid not in space.pos:
            raise _Skip(f"table instance {node.tabid} not in query")
        inst = node.tabid
    else:
        hits = [t.instance for t in space.query.tables if t.table_name == node.table]
        if len(hits) != 1:
            raise _Skip(f"table {node.table} is {'ambiguous' if hits else 'not'} in query")
        inst = hits[0]
    table = space.query.table_of(inst)
    if node.tag == "IXSCAN":
        names = [ix.name for ix in space.catalog.indexes_on(table)]
        if node.index is not None and node.index not in names:
            raise _Skip(f"index {node.index} does not exist on {table}")
        if not names:
            raise _Skip(f"no index on {table}")
    m = 1 << space.pos[inst]
    if m in out:
        raise _Skip("table instance referenced twice")
    out[m] = _Forced(node.tag, node.index)
    return m


def _laminar(a: int, b: int) -> bool:
    return a & b == 0 or a & b == a or a & b == b


def _accept(space: _Space, doc: Optional[GuidelineDoc]) -> tuple[dict[int, _Forced], list[IgnoredGuideline]]:
    forced: dict[int, _Forced] = {}
    ignored: list[IgnoredGuideline] = []
    if doc is None:
        return forced, ignored
    for root in doc.roots:
        mine: dict[int, _Forced] = {}
        try:
            _resolve(space, root, mine)
            for s, want in mine.items():
                for f, fwant in forced.items():
                    if s == f and want != fwant:
                        raise _Skip("conflicts with an earlier guideline")
                    if not _laminar(s, f):
                        raise _Skip("conflicts with an earlier guideline")
        except _Skip as e:
            ignored.append(IgnoredGuideline(root, str(e)))
            continue
        forced.update(mine)
    return forced, ignored


# ---------------------------------------------------------------------------
# optimization


def _candidates_for_leaf(space: _Space, mask: int, forced: dict[int, _Forced]) -> list[Cand]:
    inst = space.insts[mask.bit_length() - 1]
    cands = space.leaf_cands(inst)
    want = forced.get(mask)
    if want is None:
        return cands
    if want.tag == "TBSCAN":
        return [c for c in cands if c[0].pop_type is PopType.TBSCAN]
    return [c for c in cands if c[0].pop_type is PopType.FETCH
            and (want.index is None or c[0].inputs[0].index == want.index)]


class _Planner:
    def __init__(self, space: _Space, forced: dict[int, _Forced]):
        self.space = space
        self.forced = forced
        self.table: dict[int, list[Cand]] = {}

    def admissible(self, mask: int) -> bool:
        if mask in self.forced:
            return True
        return all(f & mask in (0, f) for f in self.forced)

    def entry(self, mask: int) -> list[Cand]:
        got = self.table.get(mask)
        if got is not None:
            return got
        if mask & (mask - 1) == 0:
            got = _candidates_for_leaf(self.space, mask, self.forced)
        elif mask in self.forced:
            want = self.forced[mask]
            best = self.space.best_join(self.entry(want.outer), self.entry(want.inner), (PopType(want.tag),))
            if best is None:
                raise InputError("forced join cannot be built")
            got = [best]
        else:
            got = []
        self.table[mask] = got
        return got

    def dp(self) -> Cand:
        sp = self.space
        by_size: dict[int, list[int]] = {}
        for mask in range(1, sp.full + 1):
            by_size.setdefault(bin(mask).count("1"), []).append(mask)
        for size in range(2, sp.n + 1):
            for mask in by_size.get(size, ()):
                if mask in self.forced:
                    self.entry(mask)
                    continue
                if not sp.valid_part(mask) or not self.admissible(mask):
                    continue
                best: Optional[Cand] = None
                for a, b in sp.splits(mask):
                    if not (self.admissible(a) and self.admissible(b)):
                        continue
                    ea, eb = self.entry(a), self.entry(b)
                    if not ea or not eb:
                        continue
                    c = sp.best_join(ea, eb)
                    if c is not None and (best is None or c[1].cost < best[1].cost):
                        best = c
                self.table[mask] = [best] if best is not None else []
        return self._pick(sp.full)

    def _pick(self, mask: int) -> Cand:
        cands = self.entry(mask)
        if not cands:
            raise InputError(f"no valid plan for query {self.space.query.id}")
        return min(cands, key=lambda c: c[1].cost)

    def greedy(self) -> Cand:
        sp = self.space
        # maximal forced sets become fixed components; the rest start as single tables
        comps: list[int] = []
        covered = 0
        for f in sorted(self.forced, key=lambda m: (-bin(m).count("1"), m)):
            if f & covered == 0:
                comps.append(f)
                covered |= f
        comps += [1 << k for k in range(sp.n) if not covered >> k & 1]
        comps.sort(key=lambda m: (m & -m))
        while len(comps) > 1:
            best = None
            for x in range(len(comps)):
                for y in range(len(comps)):
                    a, b = comps[x], comps[y]
                    if x == y or not (sp.cross or sp.linked(a, b)):
                        continue
                    c = sp.best_join(self.entry(a), self.entry(b))
                    if c is not None and (best is None or c[1].cost < best[0][1].cost):
                        best = (c, x, y)
            if best is None:
                raise InputError(f"no valid plan for query {sp.query.id}")
            c, x, y = best
            merged = comps[x] | comps[y]
            self.table[merged] = [c]
            comps = [m for k, m in enumerate(comps) if k not in (x, y)] + [merged]
            comps.sort(key=lambda m: (m & -m))
        return self._pick(comps[0])


def optimize_with_report(query: Query, catalog: Catalog,
                         guidelines: Optional[GuidelineDoc] = None) -> tuple[Plan, list[IgnoredGuideline]]:
    """Cheapest estimated plan, honoring whatever guidelines can be applied."""
    if not query.tables:
        raise InputError(f"query {query.id} references no tables")
    query.check_catalog(catalog)
    space = _Space(query, catalog)
    if not space.cross and not space.connected(space.full):
        raise DisconnectedQueryError(f"query {query.id}: join graph is disconnected (cross products disabled)")
    forced, ignored = _accept(space, guidelines)
    planner = _Planner(space, forced)
    node, _ = planner.dp() if space.n <= DP_MAX_TABLES else planner.greedy()
    return materialize(node, query, catalog, space.model), ignored


def optimize(query: Query, catalog: Catalog, guidelines: Optional[GuidelineDoc] = None) -> Plan:
    return optimize_with_report(query, catalog, guidelines)[0]


# ---------------------------------------------------------------------------
# exhaustive enumeration (oracle)


def enumerate_plans(query: Query, catalog: Catalog) -> Iterator[tuple[PlanNode, NodeResult]]:
    """Every plan in the optimizer's search space with its estimated result, by brute force."""
    query.check_catalog(catalog)
    space = _Space(query, catalog)

    def trees(mask: int) -> list[Cand]:
        if mask & (mask - 1) == 0:
            return space.leaf_cands(space.insts[mask.bit_length() - 1])
        out: list[Cand] = []
        for a, b in space.splits(mask):
            ta, tb = trees(a), trees(b)
            for method in JOIN_METHODS:
                for o in ta:
                    for i in tb:
                        c = space.join(method, o, i)
                        if c is not None:
                            out.append(c)
        return out

    if not space.cross and not space.connected(space.full):
        raise DisconnectedQueryError(f"query {query.id}: join graph is disconnected")
    for node, res in trees(space.full):
        ret = PlanNode(PopType.RETURN, (node,))
        yield ret, space.model.apply(ret, (res,))


# ---------------------------------------------------------------------------
# random plans


def _shape_counts(space: _Space) -> dict[int, int]:
    counts: dict[int, int] = {}
    for mask in sorted(range(1, space.full + 1), key=lambda m: bin(m).count("1")):
        if mask & (mask - 1) == 0:
            counts[mask] = 1
        elif space.valid_part(mask):
            counts[mask] = sum(counts.get(a, 0) * counts.get(b, 0) for a, b in space.splits(mask))
    return counts


def _random_shape(space: _Space, rng: random.Random) -> Union[int, tuple]:
    if space.n <= EXACT_SAMPLING_MAX_TABLES:
        counts = _shape_counts(space)

        def draw(mask: int):
            if mask & (mask - 1) == 0:
                return mask
            options = [(a, b, counts.get(a, 0) * counts.get(b, 0)) for a, b in space.splits(mask)]
            r = rng.random() * sum(w for _, _, w in options)
            for a, b, w in options:
                if r < w:
                    return (draw(a), draw(b))
                r -= w
            a, b, _ = options[-1]
            return (draw(a), draw(b))

        return draw(space.full)
    comps: list[tuple[int, Union[int, tuple]]] = [(1 << k, 1 << k) for k in range(space.n)]
    while len(comps) > 1:
        pairs = [(x, y) for x in range(len(comps)) for y in range(len(comps))
                 if x != y and (space.cross or space.linked(comps[x][0], comps[y][0]))]
        x, y = pairs[rng.randrange(len(pairs))]
        merged = (comps[x][0] | comps[y][0], (comps[x][1], comps[y][1]))
        comps = [c for k, c in enumerate(comps) if k not in (x, y)] + [merged]
    return comps[0][1]


def random_plan(query: Query, catalog: Catalog, seed: int) -> Plan:
    """Uniform join shape, then a uniform join method per join and access path per table."""
    query.check_catalog(catalog)
    space = _Space(query, catalog)
    if not space.cross and not space.connected(space.full):
        raise DisconnectedQueryError(f"query {query.id}: join graph is disconnected (cross products disabled)")
    rng = random.Random(seed)
    shape = _random_shape(space, rng)

    def build(s) -> Cand:
        if isinstance(s, int):
            paths = space.access_paths(space.insts[s.bit_length() - 1])
            p = paths[rng.randrange(len(paths))]
            return p, space.model.evaluate(p)
        o, i = build(s[0]), build(s[1])
        methods = [m for m in JOIN_METHODS if m is not PopType.MSJOIN or
                   space.model.merge_column(o[1].leaves, i[1].leaves) is not None]
        c = space.join(methods[rng.randrange(len(methods))], o, i)
        assert c is not None
        return c

    node, _ = build(shape)
    return materialize(node, query, catalog, space.model)
