"""Retrieval ranking metrics, text metrics and LLM-judge protocols."""

from .judges import (
    JUDGE_COUNT,
    AccuracyReport,
    CompareResult,
    Coverage,
    JudgeVerdict,
    StoryAccuracy,
    accuracy_report,
    compare_polish,
    judge_objective,
    judge_story,
    parse_coverage,
    parse_preference,
)
from .ranking import (
    RankingMetrics,
    average_precision,
    dcg,
    f1_score,
    mean_average_precision,
    mean_metrics,
    ndcg_at_k,
    ranking_metrics,
)
from .text import (
    PRF,
    RougeMode,
    TextMetrics,
    bleu,
    lcs_length,
    levenshtein,
    mean_text_metrics,
    ngrams,
    rouge,
    semantic_similarity,
    text_metrics,
    tokenize,
)

__all__ = [
    "JUDGE_COUNT", "AccuracyReport", "CompareResult", "Coverage", "JudgeVerdict", "StoryAccuracy",
    "accuracy_report", "compare_polish", "judge_objective", "judge_story", "parse_coverage", "parse_preference",
    "RankingMetrics", "average_precision", "dcg", "f1_score", "mean_average_precision", "mean_metrics",
    "ndcg_at_k", "ranking_metrics", "PRF", "RougeMode", "TextMetrics", "bleu", "lcs_length", "levenshtein",
    "mean_text_metrics", "ngrams", "rouge", "semantic_similarity", "text_metrics", "tokenize",
]
