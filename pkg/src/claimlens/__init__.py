"""claimlens: anytime search for natural query refinements that endorse a claim.

Given a single-relation dataset, a group-aggregate query, and a claim that one
group's aggregate exceeds another's, claimlens finds the conjunctive equality
refinements under which the claim holds and ranks them by pluggable
naturalness measures (coverage, statistical significance, embedding
similarity, mutual information, ANOVA), streaming results as they are found.
"""

from .dataset import Attribute, BinningRule, Dataset, Schema, compute_binning, group_sizes, ingest_csv, load_schema
from .task import AggFn, BaselineResult, Claim, Predicate, QuerySpec, Refinement, Task, TaskConfig, TaskValidationError, baseline_check, validate
from .kernel import ComboResult, enumerate_combos, find_predicates, find_predicates_predicate_level
from .measures import EmbeddingTable, MeasureVector, generality_filter
from .precompute import PrecomputeCache, build_cache
from .engine import CollectorSink, JsonlSink, ResultEvent, RunSummary, run

__version__ = "0.1.0"

__all__ = [
    "AggFn",
    "Attribute",
    "BaselineResult",
    "BinningRule",
    "Claim",
    "CollectorSink",
    "ComboResult",
    "Dataset",
    "EmbeddingTable",
    "JsonlSink",
    "MeasureVector",
    "PrecomputeCache",
    "Predicate",
    "QuerySpec",
    "Refinement",
    "ResultEvent",
    "RunSummary",
    "Schema",
    "Task",
    "TaskConfig",
    "TaskValidationError",
    "baseline_check",
    "build_cache",
    "compute_binning",
    "enumerate_combos",
    "find_predicates",
    "find_predicates_predicate_level",
    "generality_filter",
    "group_sizes",
    "ingest_csv",
    "load_schema",
    "run",
    "validate",
]
