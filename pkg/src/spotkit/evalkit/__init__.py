"""Region-level evaluation: matching, AP, robustness, hallucination, reports."""
from .ap import IOU_THRESHOLDS, RECALL_LEVELS, ApTable, Detection, GtBox, compute_ap
from .matching import (
    CategoryMatcher,
    Embedder,
    TrigramEmbedder,
    contains_answer,
    cosine,
    match_class,
    normalize_answer_text,
    trigram_fallback_embedder,
)
from .reporting import write_report
from .runner import (
    REGION_SOURCE_BOXES,
    REGION_SOURCE_GT,
    EvalOutcome,
    EvalPolicy,
    EvalReport,
    derive_seed,
    eval_regional_classification,
    eval_text_task,
    hallucination_ratio,
    robustness_sweep,
)

__all__ = [
    "IOU_THRESHOLDS",
    "RECALL_LEVELS",
    "ApTable",
    "Detection",
    "GtBox",
    "compute_ap",
    "CategoryMatcher",
    "Embedder",
    "TrigramEmbedder",
    "contains_answer",
    "cosine",
    "match_class",
    "normalize_answer_text",
    "trigram_fallback_embedder",
    "write_report",
    "REGION_SOURCE_BOXES",
    "REGION_SOURCE_GT",
    "EvalOutcome",
    "EvalPolicy",
    "EvalReport",
    "derive_seed",
    "eval_regional_classification",
    "eval_text_task",
    "hallucination_ratio",
    "robustness_sweep",
]
