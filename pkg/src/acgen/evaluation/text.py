"""Statistical text metrics between generated and reference criteria.

Tokenisation for ROUGE and BLEU: lower-case, then split on runs of
non-alphanumeric characters.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from rapidfuzz.distance import Levenshtein

from ..errors import EmptyAfterTokenization
from ..providers.base import Provider
from ..retrieval import cosine

_TOKEN = re.compile(r"[^\W_]+")


class RougeMode(str, Enum):
    N1 = "N1"
    N2 = "N2"
    L = "L"


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class TextMetrics:
    semantic_sim: float
    rouge1: PRF
    rouge2: PRF
    rougeL: PRF
    bleu: float
    levenshtein: int

    def to_dict(self) -> dict[str, object]:
        return {
            "semantic_sim": self.semantic_sim,
            "rouge1": self.rouge1.to_dict(),
            "rouge2": self.rouge2.to_dict(),
            "rougeL": self.rougeL.to_dict(),
            "bleu": self.bleu,
            "levenshtein": self.levenshtein,
        }


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _tokens(text: str, label: str) -> list[str]:
    toks = tokenize(text)
    if not toks:
        raise EmptyAfterTokenization(f"{label} has no tokens")
    return toks


def ngrams(tokens: Sequence[str], n: int) -> Counter[tuple[str, ...]]:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _prf(overlap: int, cand_total: int, ref_total: int) -> PRF:
    p = overlap / cand_total if cand_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return PRF(p, r, f)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge(candidate: str, reference: str, mode: RougeMode | str = RougeMode.N1) -> PRF:
    mode = RougeMode(mode)
    cand = _tokens(candidate, "candidate")
    ref = _tokens(reference, "reference")
    if mode is RougeMode.L:
        return _prf(lcs_length(cand, ref), len(cand), len(ref))
    n = 1 if mode is RougeMode.N1 else 2
    c, r = ngrams(cand, n), ngrams(ref, n)
    if not c and not r:
        # Both too short for any n-gram: only equality can match.
        score = 1.0 if cand == ref else 0.0
        return PRF(score, score, score)
    overlap = sum((c & r).values())
    return _prf(overlap, sum(c.values()), sum(r.values()))


def bleu(candidate: str, references: Sequence[str], max_n: int = 4) -> float:
    """Sentence BLEU with add-one smoothing of zero n-gram matches.

    Brevity penalty uses the reference length closest to the candidate
    (shorter wins ties).
    """
    if isinstance(references, str):
        references = [references]
    if not references:
        raise ValueError("at least one reference is required")
    cand = _tokens(candidate, "candidate")
    refs = [_tokens(r, "reference") for r in references]
    log_sum = 0.0
    for n in range(1, max_n + 1):
        counts = ngrams(cand, n)
        max_ref: Counter[tuple[str, ...]] = Counter()
        for ref in refs:
            max_ref |= ngrams(ref, n)
        matches = sum(min(cnt, max_ref[g]) for g, cnt in counts.items())
        total = sum(counts.values())
        p = matches / total if matches else 1.0 / (total + 1)
        log_sum += math.log(p)
    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda length: (abs(length - c), length))
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return bp * math.exp(log_sum / max_n)


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode code points."""
    return int(Levenshtein.distance(a, b))


def semantic_similarity(a: str, b: str, embedder: Provider) -> float:
    if not a or not b:
        raise ValueError("semantic similarity needs two non-empty texts")
    return cosine(embedder.embed_text(a), embedder.embed_text(b))


def text_metrics(candidate: str, reference: str, embedder: Provider) -> TextMetrics:
    return TextMetrics(
        semantic_sim=semantic_similarity(candidate, reference, embedder),
        rouge1=rouge(candidate, reference, RougeMode.N1),
        rouge2=rouge(candidate, reference, RougeMode.N2),
        rougeL=rouge(candidate, reference, RougeMode.L),
        bleu=bleu(candidate, [reference]),
        levenshtein=levenshtein(candidate, reference),
    )


def mean_text_metrics(items: Sequence[TextMetrics]) -> dict[str, object]:
    """Average over stories; Levenshtein becomes a mean distance."""
    if not items:
        raise ValueError("nothing to average")
    n = len(items)

    def avg(values) -> float:
        return math.fsum(values) / n

    def avg_prf(name: str) -> dict[str, float]:
        return {
            key: avg(getattr(getattr(m, name), key) for m in items) for key in ("precision", "recall", "f1")
        }

    return {
        "semantic_sim": avg(m.semantic_sim for m in items),
        "rouge1": avg_prf("rouge1"),
        "rouge2": avg_prf("rouge2"),
        "rougeL": avg_prf("rougeL"),
        "bleu": avg(m.bleu for m in items),
        "levenshtein": avg(m.levenshtein for m in items),
        "n": n,
    }
