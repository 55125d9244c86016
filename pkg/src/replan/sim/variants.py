"""Query variants that sweep one local predicate across its column's value-frequency profile."""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..errors import InputError
from .catalog import Catalog
from .query import Query


@dataclass(frozen=True)
class QueryVariant:
    query: Query
    pred_index: int
    rows: int
    true_selectivity: float
    est_selectivity: float


def _log_spaced(lo: float, hi: float, k: int) -> list[float]:
    if k == 1 or hi == lo:
        return [lo] * k
    return [lo * (hi / lo) ** (j / (k - 1)) for j in range(k)]


def sample_ranges(query: Query, catalog: Catalog, pred_index: int, k: int = 5) -> list[QueryVariant]:
    """``k`` variants ordered by selectivity; ``k == 1`` yields the query itself.

    Row counts run geometrically from the rarest to the most frequent value of
    the profile. A flat profile has no spread between values, so the sweep then
    runs from one value up to the whole column, i.e. widening range predicates.
    The estimate keeps the original predicate's est/true ratio so the
    misestimation pattern carries over to every variant.
    """
    if not 0 <= pred_index < len(query.local_preds):
        raise InputError(f"predicate index {pred_index} out of range for query {query.id}")
    if k < 1:
        raise InputError("k must be >= 1")
    pred = query.local_preds[pred_index]
    if k == 1:
        rows = round(pred.true_selectivity * catalog.table(query.table_of(pred.instance)).cardinality)
        return [QueryVariant(query, pred_index, rows, pred.true_selectivity, pred.est_selectivity)]
    table = query.table_of(pred.instance)
    n = catalog.table(table).cardinality
    profile = catalog.profile(table, pred.col.column)
    lo, hi = min(profile), max(profile)
    if hi == lo:
        hi = min(sum(profile), n)
    ratio = pred.est_selectivity / pred.true_selectivity
    out = []
    for j, target in enumerate(_log_spaced(float(lo), float(hi), k)):
        rows = max(1, min(n, round(target)))
        true_sel = rows / n
        est_sel = min(1.0, true_sel * ratio)
        variant = query.with_local_pred(pred_index, replace(pred, true_selectivity=true_sel,
                                                            est_selectivity=est_sel))
        out.append(QueryVariant(replace(variant, id=f"{query.id}~{pred_index}.{j}"),
                                pred_index, rows, true_sel, est_sel))
    return out
