"""Record/replay cache: a directory of content-addressed JSON files."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from pathlib import Path
from typing import Any, Callable

from ..corpus import VisualDoc
from ..errors import CacheMiss, ConfigError
from .base import (
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    Provider,
    ProviderConfig,
    config_fingerprint,
    content_hash,
)

logger = logging.getLogger(__name__)

MODES = ("record", "strict")


class ReplayCache:
    """Lock-free reads, serialised atomic writes."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self._write_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def path_for(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict[str, Any] | None:
        path = self.path_for(key)
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            with self._stats_lock:
                self.misses += 1
            return None
        with self._stats_lock:
            self.hits += 1
        return entry

    def put(self, key: str, entry: dict[str, Any]) -> None:
        path = self.path_for(key)
        blob = json.dumps(entry, sort_keys=True, indent=1, ensure_ascii=False)
        with self._write_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(blob)
            os.replace(tmp, path)

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*/*.json")) if self.root.exists() else 0


class ReplayProvider(Provider):
    """Wraps a provider with the replay cache.

    ``record`` serves hits from the cache and forwards misses to ``inner``;
    ``strict`` raises :class:`CacheMiss` on any miss and needs no ``inner``.
    Keys hash the operation, the provider fingerprint and the full request,
    sampling parameters included.
    """

    def __init__(self, cache: ReplayCache, config: ProviderConfig, inner: Provider | None = None,
                 mode: str = "record") -> None:
        super().__init__(config)
        if mode not in MODES:
            raise ConfigError(f"unknown replay mode {mode!r}")
        if mode == "record" and inner is None:
            raise ConfigError("record mode needs a backing provider")
        self.cache = cache
        self.inner = inner
        self.mode = mode

    @property
    def fingerprint(self) -> str:
        return self.inner.fingerprint if self.inner is not None else config_fingerprint(self.config)

    def key(self, op: str, request: Any) -> str:
        return content_hash({"op": op, "provider": self.fingerprint, "request": request})

    def _through(self, op: str, request: Any, compute: Callable[[], Any]) -> Any:
        key = self.key(op, request)
        entry = self.cache.get(key)
        if entry is not None:
            return entry["response"]
        if self.mode == "strict":
            raise CacheMiss(f"{self.name}: no recorded response for {op}", key=key, op=op)
        response = compute()
        self.cache.put(key, {"op": op, "provider": self.fingerprint, "request": request, "response": response})
        return response

    def chat(self, req: ChatRequest) -> ChatResponse:
        payload = req.to_dict()
        return ChatResponse.from_dict(self._through("chat", payload, lambda: self.inner.chat(req).to_dict()))

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        values = self._through("embed_text", {"text": text}, lambda: list(self.inner.embed_text(text).values))
        return self._checked(EmbeddingVector(tuple(values)))

    def embed_image(self, img: VisualDoc) -> EmbeddingVector:
        values = self._through("embed_image", _image_key(img), lambda: list(self.inner.embed_image(img).values))
        return self._checked(EmbeddingVector(tuple(values)))

    def image_to_html(self, img: VisualDoc) -> str:
        return self._through("image_to_html", _image_key(img), lambda: self.inner.image_to_html(img))

    def continuation_logprobs(self, context: str, continuation: str) -> list[float]:
        request = {"context": context, "continuation": continuation}
        return list(self._through("continuation_logprobs", request,
                                  lambda: list(self.inner.continuation_logprobs(context, continuation))))


def _image_key(img: VisualDoc) -> dict[str, Any]:
    return {"id": img.id, "sha256": img.sha256, "media_type": img.media_type, "caption": img.caption}

