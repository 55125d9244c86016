"""Simulated database substrate: catalog, queries, cost model, optimizer."""

from .catalog import Catalog, ColumnStats, CostParams, Index, TableStats, parse_catalog, serialize_catalog
from .cost import RuntimeStats, annotate, estimate, materialize, true_run
from .guideline import GuidelineDoc, GuidelineNode, parse_guidelines, to_xml
from .optimizer import enumerate_plans, optimize, optimize_with_report, random_plan
from .query import ColRef, JoinPred, LocalPred, Query, parse_workload, serialize_workload
from .variants import QueryVariant, sample_ranges

__all__ = [
    "Catalog", "ColumnStats", "CostParams", "Index", "TableStats", "parse_catalog", "serialize_catalog",
    "RuntimeStats", "annotate", "estimate", "materialize", "true_run",
    "GuidelineDoc", "GuidelineNode", "parse_guidelines", "to_xml",
    "enumerate_plans", "optimize", "optimize_with_report", "random_plan",
    "ColRef", "JoinPred", "LocalPred", "Query", "parse_workload", "serialize_workload",
    "QueryVariant", "sample_ranges",
]
