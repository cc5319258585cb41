"""Textual and visual indices with top-k querying for user stories."""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence, TypeVar

from .corpus import DomainChunk, UserStory, VisualDoc
from .errors import AcgenError, DimensionMismatch, DuplicateId, EmptyIndex
from .providers.base import EmbeddingVector, Provider, sequence_logprob
from .providers.html import prune_html

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class TextStrategy(str, Enum):
    DENSE_COSINE = "DenseCosine"
    LM_SCORED = "LmScored"


class VisualVariant(str, Enum):
    HTML_FULL = "HtmlFull"
    HTML_PRUNED = "HtmlPruned"
    DIRECT_EMBEDDING = "DirectEmbedding"


@dataclass(frozen=True)
class RetrievalHit:
    doc_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 5
    text_strategy: TextStrategy = TextStrategy.DENSE_COSINE
    visual_variant: VisualVariant = VisualVariant.DIRECT_EMBEDDING

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        object.__setattr__(self, "text_strategy", TextStrategy(self.text_strategy))
        object.__setattr__(self, "visual_variant", VisualVariant(self.visual_variant))


def cosine(a: EmbeddingVector | Sequence[float], b: EmbeddingVector | Sequence[float]) -> float:
    va = a.values if isinstance(a, EmbeddingVector) else tuple(a)
    vb = b.values if isinstance(b, EmbeddingVector) else tuple(b)
    if len(va) != len(vb):
        raise DimensionMismatch(f"cannot compare vectors of dim {len(va)} and {len(vb)}")
    dot = math.fsum(x * y for x, y in zip(va, vb))
    na = math.sqrt(math.fsum(x * x for x in va))
    nb = math.sqrt(math.fsum(y * y for y in vb))
    if na == 0 or nb == 0:
        raise ValueError("cosine is undefined for a zero vector")
    return max(-1.0, min(1.0, dot / (na * nb)))


def rank_scores(scores: Mapping[str, float], k: int) -> list[RetrievalHit]:
    """Top-k by score descending, ties broken by doc id ascending."""
    for doc_id, s in scores.items():
        if not math.isfinite(s):
            raise AcgenError(f"non-finite score for {doc_id!r}", doc_id=doc_id)
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return [RetrievalHit(doc_id, float(s), i) for i, (doc_id, s) in enumerate(ordered, start=1)]


def _parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _unique(ids: Iterable[str]) -> None:
    seen: set[str] = set()
    for doc_id in ids:
        if doc_id in seen:
            raise DuplicateId(f"duplicate document id {doc_id!r}", id=doc_id)
        seen.add(doc_id)


@dataclass(frozen=True)
class TextIndex:
    strategy: TextStrategy
    entries: Mapping[str, EmbeddingVector | str]

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy.value,
            "entries": {k: (v if isinstance(v, str) else list(v.values)) for k, v in self.entries.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TextIndex":
        strategy = TextStrategy(d["strategy"])
        if strategy is TextStrategy.LM_SCORED:
            entries: dict[str, EmbeddingVector | str] = dict(d["entries"])
        else:
            entries = {k: EmbeddingVector(tuple(v)) for k, v in d["entries"].items()}
        return cls(strategy, entries)


@dataclass(frozen=True)
class VisualIndex:
    variant: VisualVariant
    entries: Mapping[str, EmbeddingVector]
    # The HTML each embedding was computed from (HTML variants only).
    html: Mapping[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant.value,
            "entries": {k: list(v.values) for k, v in self.entries.items()},
            "html": dict(self.html),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "VisualIndex":
        return cls(
            VisualVariant(d["variant"]),
            {k: EmbeddingVector(tuple(v)) for k, v in d["entries"].items()},
            dict(d.get("html", {})),
        )


class Retriever:
    """Builds and queries indices against one provider.

    Query embeddings are cached per (story, provider) so repeated queries
    against several indices cost one embedding call.
    """

    def __init__(self, provider: Provider) -> None:
        self.provider = provider
        self._query_cache: dict[tuple[str, str, str], EmbeddingVector] = {}
        self._lock = threading.Lock()

    @property
    def workers(self) -> int:
        return self.provider.config.max_parallel

    def _story_vector(self, story: UserStory) -> EmbeddingVector:
        key = (story.id, story.query_text, self.provider.fingerprint)
        with self._lock:
            cached = self._query_cache.get(key)
        if cached is None:
            cached = self.provider.embed_text(story.query_text)
            with self._lock:
                self._query_cache[key] = cached
        return cached

    def index_text(self, chunks: Sequence[DomainChunk], strategy: TextStrategy) -> TextIndex:
        strategy = TextStrategy(strategy)
        if not chunks:
            raise EmptyIndex("cannot index an empty chunk list")
        _unique(c.id for c in chunks)
        if strategy is TextStrategy.LM_SCORED:
            return TextIndex(strategy, {c.id: c.text for c in chunks})
        vectors = _parallel_map(lambda c: self.provider.embed_text(c.text), list(chunks), self.workers)
        return TextIndex(strategy, {c.id: v for c, v in zip(chunks, vectors)})

    def query_text(self, index: TextIndex, story: UserStory, cfg: RetrievalConfig) -> list[RetrievalHit]:
        if not index.entries:
            raise EmptyIndex("text index is empty")
        if index.strategy is TextStrategy.LM_SCORED:
            ids = list(index.entries)

            def lm_score(doc_id: str) -> float:
                return sequence_logprob(self.provider, str(index.entries[doc_id]), story.query_text).per_token_mean

            scores = dict(zip(ids, _parallel_map(lm_score, ids, self.workers)))
        else:
            q = self._story_vector(story)
            scores = {doc_id: cosine(q, vec) for doc_id, vec in index.entries.items()}
        return rank_scores(scores, cfg.k)

    def _html_for(self, img: VisualDoc, variant: VisualVariant) -> str:
        try:
            full = img.html_full if img.html_full is not None else self.provider.image_to_html(img)
            if variant is VisualVariant.HTML_FULL:
                return full
            return img.html_pruned if img.html_pruned is not None else prune_html(full)
        except AcgenError as exc:
            exc.details.setdefault("doc_id", img.id)
            raise

    def index_visual(self, visuals: Sequence[VisualDoc], variant: VisualVariant) -> VisualIndex:
        variant = VisualVariant(variant)
        if not visuals:
            raise EmptyIndex("cannot index an empty visual list")
        _unique(v.id for v in visuals)
        if variant is VisualVariant.DIRECT_EMBEDDING:
            vectors = _parallel_map(self.provider.embed_image, list(visuals), self.workers)
            return VisualIndex(variant, {v.id: vec for v, vec in zip(visuals, vectors)})
        html = _parallel_map(lambda v: self._html_for(v, variant), list(visuals), self.workers)
        vectors = _parallel_map(self.provider.embed_text, html, self.workers)
        return VisualIndex(
            variant,
            {v.id: vec for v, vec in zip(visuals, vectors)},
            {v.id: h for v, h in zip(visuals, html)},
        )

    def query_visual(self, index: VisualIndex, story: UserStory, cfg: RetrievalConfig) -> list[RetrievalHit]:
        if not index.entries:
            raise EmptyIndex("visual index is empty")
        q = self._story_vector(story)
        return rank_scores({doc_id: cosine(q, vec) for doc_id, vec in index.entries.items()}, cfg.k)
