"""Relation classification of candidate edges and relation-aware filtering."""

from .cache import ClassificationCache, cache_key
from .classify import (
    DEFAULT_RELATION_WEIGHTS,
    CallBudget,
    EdgeClassification,
    LabeledGraph,
    RefinedGraph,
    apply_relation_filter,
    classify_edges,
    parse_classification,
    validate_weight_table,
)
from .clients import ClassificationRequest, HttpClient, MockClient, response_json
from .prompt import LABELS, TEMPLATE, TEMPLATE_VERSION, build_prompt
from .snippets import FirmSnippets, SnippetStore, extract_snippets

__all__ = [
    "DEFAULT_RELATION_WEIGHTS",
    "LABELS",
    "TEMPLATE",
    "TEMPLATE_VERSION",
    "CallBudget",
    "ClassificationCache",
    "ClassificationRequest",
    "EdgeClassification",
    "FirmSnippets",
    "HttpClient",
    "LabeledGraph",
    "MockClient",
    "RefinedGraph",
    "SnippetStore",
    "apply_relation_filter",
    "build_prompt",
    "cache_key",
    "classify_edges",
    "extract_snippets",
    "parse_classification",
    "response_json",
    "validate_weight_table",
]
