"""HTTP backend for OpenAI-compatible endpoints.

Expected routes under ``config.endpoint``:

* ``POST /chat/completions`` -- chat, with ``logprobs``/``top_logprobs`` when asked
* ``POST /embeddings`` -- ``{"input": text}`` for text, ``{"input": [{"image": data_uri}]}`` for images
* ``POST /completions`` -- ``echo=true, max_tokens=0, logprobs=0`` for scoring a continuation

API keys are read from the environment variable named in the config.
"""

from __future__ import annotations

import logging
import os
import re
import threading
from typing import Any

import httpx

from ..corpus import VisualDoc
from ..errors import (
    ConfigError,
    DimensionMismatch,
    EmptyConversion,
    LogprobsUnavailable,
    ProviderError,
    RateLimited,
    TransportError,
)
from .base import (
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    ImagePart,
    Message,
    Provider,
    ProviderConfig,
    Sampling,
    TextPart,
    call_with_retry,
)

logger = logging.getLogger(__name__)

IMAGE_TO_HTML_PROMPT = (
    "Convert this user-interface screenshot into a single self-contained HTML page that "
    "reproduces its structure and visible text. Reply with the HTML only."
)
_FENCE = re.compile(r"```(?:html)?\s*\n(.*?)```", re.DOTALL | re.IGNORECASE)


class HttpProvider(Provider):
    def __init__(self, config: ProviderConfig, client: httpx.Client | None = None, sleep=None) -> None:
        super().__init__(config)
        if not config.endpoint:
            raise ConfigError(f"provider {config.name!r}: endpoint is required for the http backend")
        headers = {}
        if config.api_key_env:
            key = os.environ.get(config.api_key_env)
            if not key:
                raise ConfigError(f"environment variable {config.api_key_env} is not set",
                                  provider=config.name)
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(timeout=config.timeout)
        self._headers = headers
        self._slots = threading.BoundedSemaphore(config.max_parallel)
        self._sleep = sleep

    def _post(self, route: str, body: dict[str, Any]) -> dict[str, Any]:
        url = self.config.endpoint.rstrip("/") + route

        def once() -> dict[str, Any]:
            try:
                resp = self._client.post(url, json=body, headers=self._headers, timeout=self.config.timeout)
            except httpx.HTTPError as exc:
                raise TransportError(f"{self.name}: {exc.__class__.__name__}: {exc}") from exc
            if resp.status_code == 429:
                raise RateLimited(f"{self.name}: rate limited")
            if resp.status_code >= 500:
                raise TransportError(f"{self.name}: HTTP {resp.status_code}")
            if resp.status_code >= 400:
                raise ProviderError(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}",
                                    status=resp.status_code)
            try:
                return resp.json()
            except ValueError as exc:
                raise TransportError(f"{self.name}: malformed JSON response") from exc

        kwargs = {"sleep": self._sleep} if self._sleep is not None else {}
        with self._slots:
            return call_with_retry(once, self.config.retry, label=f"{self.name} {route}", **kwargs)

    @staticmethod
    def _wire_message(msg: Message) -> dict[str, Any]:
        content: list[dict[str, Any]] = []
        for part in msg.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                content.append({"type": "image_url", "image_url": {"url": part.data_uri}})
        return {"role": msg.role.value, "content": content}

    def chat(self, req: ChatRequest) -> ChatResponse:
        body: dict[str, Any] = {
            "model": self.config.model_name,
            "messages": [self._wire_message(m) for m in req.messages],
        }
        if req.sampling.temperature is not None:
            body["temperature"] = req.sampling.temperature
        if req.sampling.top_p is not None:
            body["top_p"] = req.sampling.top_p
        if req.max_tokens is not None:
            body["max_tokens"] = req.max_tokens
        if req.logprobs:
            body["logprobs"] = True
            body["top_logprobs"] = 20
        data = self._post("/chat/completions", body)
        try:
            choice = data["choices"][0]
            text = choice["message"].get("content") or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"{self.name}: unexpected chat response shape") from exc
        lps = None
        content = (choice.get("logprobs") or {}).get("content") or []
        if content:
            first = content[0]
            lps = tuple((c["token"], c["logprob"]) for c in first.get("top_logprobs") or [first])
        return ChatResponse(text, lps)

    def _embedding(self, payload: Any) -> EmbeddingVector:
        data = self._post("/embeddings", {"model": self.config.model_name, "input": payload})
        try:
            values = data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"{self.name}: unexpected embedding response shape") from exc
        if len(values) != self.dim:
            raise DimensionMismatch(f"{self.name}: expected dim {self.dim}, got {len(values)}")
        return EmbeddingVector.normalized(values)

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        return self._embedding(text)

    def embed_image(self, img: VisualDoc) -> EmbeddingVector:
        uri = ImagePart.from_bytes(img.image, img.media_type).data_uri
        return self._embedding([{"image": uri}])

    def image_to_html(self, img: VisualDoc) -> str:
        req = ChatRequest(
            (Message.user(IMAGE_TO_HTML_PROMPT, ImagePart.from_bytes(img.image, img.media_type)),),
            sampling=Sampling(temperature=0.0),
            task="image_to_html",
        )
        text = self.chat(req).text
        fenced = _FENCE.search(text)
        html = (fenced.group(1) if fenced else text).strip()
        if not html:
            raise EmptyConversion(f"{self.name}: empty HTML for image {img.id!r}", doc_id=img.id)
        return html

    def continuation_logprobs(self, context: str, continuation: str) -> list[float]:
        body = {
            "model": self.config.model_name,
            "prompt": context + continuation,
            "echo": True,
            "max_tokens": 0,
            "logprobs": 0,
        }
        data = self._post("/completions", body)
        try:
            lp = data["choices"][0]["logprobs"]
            pairs = zip(lp["text_offset"], lp["token_logprobs"])
        except (KeyError, IndexError, TypeError) as exc:
            raise LogprobsUnavailable(f"{self.name}: completion response carries no logprobs") from exc
        out = [float(v) for off, v in pairs if off >= len(context) and v is not None]
        if not out:
            raise LogprobsUnavailable(f"{self.name}: no continuation tokens scored")
        return out
