"""Deterministic in-process backend for tests and offline runs."""

from __future__ import annotations

import hashlib
import io
import re
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from PIL import Image

from ..corpus import VisualDoc
from ..errors import EmptyConversion, ImageDecodeError, ProviderError
from .base import ChatRequest, ChatResponse, EmbeddingVector, Provider, ProviderConfig

Reply = str | ChatResponse
Responder = Callable[[ChatRequest], Reply]

_WORD = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class Call:
    op: str
    detail: str = ""


def _digest(text: str | bytes) -> int:
    data = text.encode() if isinstance(text, str) else text
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "big")


def hashing_embedding(text: str, dim: int) -> list[float]:
    """Signed feature hashing of word unigrams and bigrams (unnormalised)."""
    vec = [0.0] * dim
    words = _WORD.findall(text.lower())
    features = [(w, 1.0) for w in words] + [(f"{a} {b}", 0.5) for a, b in zip(words, words[1:])]
    if not features:
        features = [(text, 1.0)]
    for feat, weight in features:
        h = _digest(feat)
        vec[h % dim] += weight if (h >> 32) & 1 else -weight
    if not any(vec):
        vec[_digest(text) % dim] = 1.0
    return vec


def check_image(img: VisualDoc) -> None:
    try:
        with Image.open(io.BytesIO(img.image)) as im:
            im.load()
    except Exception as exc:
        raise ImageDecodeError(f"image {img.id!r} cannot be decoded: {exc}", doc_id=img.id) from exc


def default_html(img: VisualDoc) -> str:
    caption = img.caption or f"Screen {img.id}"
    return (
        "<!DOCTYPE html><html><head><style>body{margin:0;font-family:sans-serif}</style>"
        "<script>window.track && track('view');</script></head>"
        f'<body><div class="page" style="padding:8px" id="{img.id}">'
        f'<h1 class="title">{caption}</h1>'
        "<!-- generated from screenshot -->"
        f'<img src="data:image/png;base64,iVBORw0KGgo=" alt="{caption}"/>'
        "</div></body></html>"
    )


def overlap_logprobs(context: str, continuation: str) -> list[float]:
    """Cheap stand-in for an LM: tokens seen in the context are likely."""
    seen = set(_WORD.findall(context.lower()))
    tokens = _WORD.findall(continuation.lower()) or [continuation]
    return [-0.5 if t in seen else -3.0 for t in tokens]


class MockProvider(Provider):
    """Scripted provider with a call log.

    ``replies`` is consumed first-in first-out (optionally per request task);
    ``responder`` answers anything the script does not cover.
    """

    def __init__(
        self,
        name: str = "mock",
        *,
        dim: int = 64,
        replies: Sequence[Reply] | Mapping[str, Sequence[Reply]] | None = None,
        responder: Responder | None = None,
        logprobs: Sequence[float] | Callable[[str, str], Sequence[float]] | None = None,
        html: Mapping[str, str] | Callable[[VisualDoc], str] | None = None,
        text_vectors: Mapping[str, Sequence[float]] | None = None,
        image_vectors: Mapping[str, Sequence[float]] | None = None,
        config: ProviderConfig | None = None,
    ) -> None:
        super().__init__(config or ProviderConfig(name=name, backend="mock", dim=dim))
        if isinstance(replies, Mapping):
            self._replies = {task: deque(items) for task, items in replies.items()}
        else:
            self._replies = {None: deque(replies or ())}
        self._responder = responder
        self._logprobs = logprobs
        self._html = html
        self._text_vectors = dict(text_vectors or {})
        self._image_vectors = dict(image_vectors or {})
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(self.config.max_parallel)
        self.calls: list[Call] = []
        self.requests: list[ChatRequest] = []

    def _log(self, op: str, detail: str = "") -> None:
        with self._lock:
            self.calls.append(Call(op, detail))

    def count(self, op: str | None = None, detail: str | None = None) -> int:
        with self._lock:
            return sum(1 for c in self.calls
                       if (op is None or c.op == op) and (detail is None or c.detail == detail))

    def chat(self, req: ChatRequest) -> ChatResponse:
        with self._slots:
            self._log("chat", req.task)
            with self._lock:
                self.requests.append(req)
                queue = self._replies.get(req.task) or self._replies.get(None)
                reply = queue.popleft() if queue else None
            if reply is None:
                if self._responder is None:
                    raise ProviderError(f"{self.name}: no scripted reply for task {req.task!r}")
                reply = self._responder(req)
            return reply if isinstance(reply, ChatResponse) else ChatResponse(reply)

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        self._log("embed_text")
        planted = self._text_vectors.get(text)
        values = planted if planted is not None else hashing_embedding(text, self.dim)
        return self._checked(EmbeddingVector.normalized(values))

    def embed_image(self, img: VisualDoc) -> EmbeddingVector:
        self._log("embed_image", img.id)
        check_image(img)
        if img.id in self._image_vectors:
            values = self._image_vectors[img.id]
        elif img.caption:
            # Shared text/image space: the caption stands in for what a vision encoder sees.
            values = hashing_embedding(img.caption, self.dim)
        else:
            rng = np.random.default_rng(_digest(img.image))
            values = rng.standard_normal(self.dim).tolist()
        return self._checked(EmbeddingVector.normalized(values))

    def image_to_html(self, img: VisualDoc) -> str:
        self._log("image_to_html", img.id)
        check_image(img)
        if callable(self._html):
            html = self._html(img)
        elif self._html is not None:
            html = self._html.get(img.id, "")
        else:
            html = default_html(img)
        if not html or not html.strip():
            raise EmptyConversion(f"{self.name}: empty HTML for image {img.id!r}", doc_id=img.id)
        return html

    def continuation_logprobs(self, context: str, continuation: str) -> list[float]:
        self._log("continuation_logprobs")
        if self._logprobs is None:
            return overlap_logprobs(context, continuation)
        if callable(self._logprobs):
            return list(self._logprobs(context, continuation))
        return list(self._logprobs)
