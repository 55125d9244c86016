"""Synthetic catalog: table/column statistics, indexes, and cost constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from ..errors import InputError


@dataclass(frozen=True)
class CostParams:
    page_size: int = 4096
    sort_heap_pages: int = 256
    random_io_penalty: float = 8.0
    cpu_row_cost: float = 0.001
    spill_multiplier: float = 2.0
    index_probe_cost: float = 3.0
    index_key_size: int = 16
    noise_sigma: float = 0.05
    cross_products: bool = False

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_value(self, key: str, raw: str) -> CostParams:
        if key not in self.keys():
            raise InputError(f"unknown PARAM {key!r}")
        current = getattr(self, key)
        try:
            if isinstance(current, bool):
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(raw)
                value = raw.lower() in ("true", "1")
            elif isinstance(current, int):
                value = int(raw)
            else:
                value = float(raw)
        except ValueError:
            raise InputError(f"bad value {raw!r} for PARAM {key}") from None
        return replace(self, **{key: value})


@dataclass(frozen=True)
class TableStats:
    cardinality: int
    row_size: int


@dataclass(frozen=True)
class ColumnStats:
    distinct: int
    # optional per-value row counts; synthesized when absent
    profile: tuple[int, ...] = ()


@dataclass(frozen=True)
class Index:
    name: str
    table: str
    column: str
    clustered: bool = False


@dataclass
class Catalog:
    tables: dict[str, TableStats] = field(default_factory=dict)
    columns: dict[tuple[str, str], ColumnStats] = field(default_factory=dict)
    indexes: list[Index] = field(default_factory=list)
    params: CostParams = field(default_factory=CostParams)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name, t in self.tables.items():
            if t.cardinality < 1:
                raise InputError(f"table {name} needs cardinality >= 1")
            if t.row_size < 1:
                raise InputError(f"table {name} needs a positive row size")
        for (t, c), col in self.columns.items():
            if t not in self.tables:
                raise InputError(f"column {t}.{c} on unknown table")
            if not 1 <= col.distinct <= self.tables[t].cardinality:
                raise InputError(f"column {t}.{c}: distinct count outside [1, cardinality]")
        names = set()
        for ix in self.indexes:
            if ix.name in names:
                raise InputError(f"index {ix.name} declared twice")
            names.add(ix.name)
            if ix.table not in self.tables:
                raise InputError(f"index {ix.name} on unknown table {ix.table}")
            if (ix.table, ix.column) not in self.columns:
                raise InputError(f"index {ix.name} on undeclared column {ix.table}.{ix.column}")
        if self.params.random_io_penalty < 1:
            raise InputError("random_io_penalty must be >= 1")

    def table(self, name: str) -> TableStats:
        try:
            return self.tables[name]
        except KeyError:
            raise InputError(f"unknown table {name!r}") from None

    def index(self, name: str) -> Index:
        for ix in self.indexes:
            if ix.name == name:
                return ix
        raise InputError(f"unknown index {name!r}")

    def indexes_on(self, table: str) -> list[Index]:
        return [ix for ix in self.indexes if ix.table == table]

    def pages(self, table: str) -> int:
        t = self.table(table)
        return max(1, math.ceil(t.cardinality * t.row_size / self.params.page_size))

    def profile(self, table: str, column: str) -> tuple[int, ...]:
        """Row count per distinct value; a Zipf(1) shape when none was given."""
        col = self.columns.get((table, column))
        if col is None:
            raise InputError(f"unknown column {table}.{column}")
        if col.profile:
            return col.profile
        n = self.table(table).cardinality
        d = col.distinct
        weights = [1.0 / (i + 1) for i in range(d)]
        total = sum(weights)
        return tuple(max(1, round(n * w / total)) for w in weights)


def parse_catalog(text: str) -> Catalog:
    tables: dict[str, TableStats] = {}
    columns: dict[tuple[str, str], ColumnStats] = {}
    indexes: list[Index] = []
    params = CostParams()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "TABLE" and len(tok) == 4:
                tables[tok[1]] = TableStats(int(tok[2]), int(tok[3]))
            elif tok[0] == "COLUMN" and len(tok) >= 3:
                t, c = tok[1].split(".")
                profile: tuple[int, ...] = ()
                if len(tok) > 3:
                    if tok[3] != "PROFILE" or len(tok) == 4:
                        raise ValueError
                    profile = tuple(int(x) for x in tok[4:])
                columns[(t, c)] = ColumnStats(int(tok[2]), profile)
            elif tok[0] == "INDEX" and len(tok) in (4, 5) and tok[2] == "ON":
                target = tok[3]
                if not target.endswith(")") or "(" not in target:
                    raise ValueError
                t, c = target[:-1].split("(")
                clustered = len(tok) == 5
                if clustered and tok[4] != "CLUSTERED":
                    raise ValueError
                indexes.append(Index(tok[1], t, c, clustered))
            elif tok[0] == "PARAM" and len(tok) == 3:
                params = params.with_value(tok[1], tok[2])
            else:
                raise ValueError
        except InputError as e:
            raise InputError(f"catalog line {lineno}: {e}") from None
        except ValueError:
            raise InputError(f"catalog line {lineno}: cannot parse {raw.strip()!r}") from None
    return Catalog(tables, columns, indexes, params)


def serialize_catalog(cat: Catalog) -> str:
    out = []
    for name, t in cat.tables.items():
        out.append(f"TABLE {name} {t.cardinality} {t.row_size}")
    for (t, c), col in cat.columns.items():
        line = f"COLUMN {t}.{c} {col.distinct}"
        if col.profile:
            line += " PROFILE " + " ".join(str(x) for x in col.profile)
        out.append(line)
    for ix in cat.indexes:
        out.append(f"INDEX {ix.name} ON {ix.table}({ix.column})" + (" CLUSTERED" if ix.clustered else ""))
    default = CostParams()
    for key in CostParams.keys():
        v = getattr(cat.params, key)
        if v != getattr(default, key):
            out.append(f"PARAM {key} {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(out) + "\n"


def rename_catalog(cat: Catalog, tables: dict[str, str], columns: dict[str, str],
                   indexes: Optional[dict[str, str]] = None) -> Catalog:
    """Apply a bijective renaming of tables, columns and indexes."""
    indexes = indexes or {}
    return Catalog(
        tables={tables.get(n, n): t for n, t in cat.tables.items()},
        columns={(tables.get(t, t), columns.get(c, c)): s for (t, c), s in cat.columns.items()},
        indexes=[Index(indexes.get(ix.name, ix.name), tables.get(ix.table, ix.table),
                       columns.get(ix.column, ix.column), ix.clustered) for ix in cat.indexes],
        params=cat.params,
    )
