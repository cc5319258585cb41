"""Request/response types and the provider contract."""

from __future__ import annotations

import abc
import base64
import binascii
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Sequence, TypeVar

from ..corpus import VisualDoc
from ..errors import ConfigError, DimensionMismatch, LogprobsUnavailable, ProviderError, RateLimited, TransportError

logger = logging.getLogger(__name__)

T = TypeVar("T")

NORM_TOLERANCE = 1e-6


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class TextPart:
    text: str

    def to_dict(self) -> dict[str, Any]:
        return {"type": "text", "text": self.text}


@dataclass(frozen=True)
class ImagePart:
    data: str  # base64
    media_type: str = "image/png"

    def __post_init__(self) -> None:
        try:
            base64.b64decode(self.data, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise ValueError(f"image part is not valid base64: {exc}") from exc

    @classmethod
    def from_bytes(cls, payload: bytes, media_type: str = "image/png") -> "ImagePart":
        return cls(base64.b64encode(payload).decode("ascii"), media_type)

    @property
    def data_uri(self) -> str:
        return f"data:{self.media_type};base64,{self.data}"

    def to_dict(self) -> dict[str, Any]:
        return {"type": "image", "media_type": self.media_type, "data": self.data}


Part = TextPart | ImagePart


@dataclass(frozen=True)
class Message:
    role: Role
    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "parts", tuple(self.parts))

    @classmethod
    def system(cls, text: str) -> "Message":
        return cls(Role.SYSTEM, (TextPart(text),))

    @classmethod
    def user(cls, *parts: Part | str) -> "Message":
        return cls(Role.USER, tuple(TextPart(p) if isinstance(p, str) else p for p in parts))

    @classmethod
    def assistant(cls, text: str) -> "Message":
        return cls(Role.ASSISTANT, (TextPart(text),))

    @property
    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))

    @property
    def images(self) -> list[ImagePart]:
        return [p for p in self.parts if isinstance(p, ImagePart)]

    def to_dict(self) -> dict[str, Any]:
        return {"role": self.role.value, "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Message":
        parts: list[Part] = []
        for p in d["parts"]:
            if p["type"] == "text":
                parts.append(TextPart(p["text"]))
            else:
                parts.append(ImagePart(p["data"], p.get("media_type", "image/png")))
        return cls(Role(d["role"]), tuple(parts))


@dataclass(frozen=True)
class Sampling:
    """``None`` means the provider's own default."""

    temperature: float | None = None
    top_p: float | None = None

    def __post_init__(self) -> None:
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.top_p is not None and not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {"temperature": self.temperature, "top_p": self.top_p}


JUDGE_SAMPLING = Sampling(temperature=0.0, top_p=0.1)


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    sampling: Sampling = Sampling()
    logprobs: bool = False
    max_tokens: int | None = None
    task: str = "chat"
    # Hints for scripted backends. Never sent over the wire, never hashed.
    meta: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a chat request needs at least one message")

    def to_dict(self) -> dict[str, Any]:
        return {
            "messages": [m.to_dict() for m in self.messages],
            "sampling": self.sampling.to_dict(),
            "logprobs": self.logprobs,
            "max_tokens": self.max_tokens,
            "task": self.task,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ChatRequest":
        return cls(
            messages=tuple(Message.from_dict(m) for m in d["messages"]),
            sampling=Sampling(**d.get("sampling", {})),
            logprobs=d.get("logprobs", False),
            max_tokens=d.get("max_tokens"),
            task=d.get("task", "chat"),
        )

    @property
    def prompt_text(self) -> str:
        return "\n".join(m.text for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    """Provider reply.

    ``token_logprobs`` lists candidate tokens for the first generated position
    with their log-probabilities, when the provider exposes them.
    """

    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None = None

    def __post_init__(self) -> None:
        if self.token_logprobs is not None:
            pairs = tuple((str(t), float(lp)) for t, lp in self.token_logprobs)
            if any(lp > 0 for _, lp in pairs):
                raise ValueError("log-probabilities must be <= 0")
            object.__setattr__(self, "token_logprobs", pairs)

    def to_dict(self) -> dict[str, Any]:
        lps = None if self.token_logprobs is None else [list(p) for p in self.token_logprobs]
        return {"text": self.text, "token_logprobs": lps}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ChatResponse":
        lps = d.get("token_logprobs")
        return cls(d["text"], None if lps is None else tuple((t, lp) for t, lp in lps))


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValueError("embedding must have at least one dimension")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("embedding contains non-finite values")
        norm = math.sqrt(math.fsum(v * v for v in values))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"embedding is not unit-norm (|v| = {norm})")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return len(self.values)

    @classmethod
    def normalized(cls, values: Iterable[float]) -> "EmbeddingVector":
        vals = [float(v) for v in values]
        norm = math.sqrt(math.fsum(v * v for v in vals))
        if norm == 0 or not math.isfinite(norm):
            raise ProviderError("cannot normalise a zero or non-finite vector")
        return cls(tuple(v / norm for v in vals))


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ConfigError("retry.max_attempts must be >= 1")
        if self.backoff_base < 0:
            raise ConfigError("retry.backoff_base must be >= 0")


@dataclass(frozen=True)
class ProviderConfig:
    name: str
    backend: str = "mock"
    endpoint: str = ""
    model_name: str = ""
    api_key_env: str | None = None
    timeout: float = 60.0
    max_parallel: int = 4
    retry: RetryPolicy = RetryPolicy()
    dim: int = 64
    options: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.max_parallel < 1:
            raise ConfigError(f"provider {self.name!r}: max_parallel must be >= 1")
        if self.dim < 1:
            raise ConfigError(f"provider {self.name!r}: dim must be >= 1")
        if isinstance(self.retry, dict):
            object.__setattr__(self, "retry", RetryPolicy(**self.retry))


class Provider(abc.ABC):
    """One configured model endpoint.

    Implementations must be safe for concurrent calls up to
    ``config.max_parallel``.
    """

    def __init__(self, config: ProviderConfig) -> None:
        self.config = config

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.config)

    @abc.abstractmethod
    def chat(self, req: ChatRequest) -> ChatResponse: ...

    @abc.abstractmethod
    def embed_text(self, text: str) -> EmbeddingVector: ...

    @abc.abstractmethod
    def embed_image(self, img: VisualDoc) -> EmbeddingVector: ...

    @abc.abstractmethod
    def image_to_html(self, img: VisualDoc) -> str: ...

    @abc.abstractmethod
    def continuation_logprobs(self, context: str, continuation: str) -> list[float]:
        """Per-token log-probabilities of ``continuation`` given ``context``."""

    def _checked(self, vec: EmbeddingVector) -> EmbeddingVector:
        if vec.dim != self.dim:
            raise DimensionMismatch(f"{self.name}: expected dim {self.dim}, got {vec.dim}",
                                    expected=self.dim, got=vec.dim)
        return vec


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def content_hash(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def config_fingerprint(config: ProviderConfig) -> str:
    """Identity of a model endpoint; transport settings are not part of it."""
    ident = {
        "backend": config.backend,
        "name": config.name,
        "endpoint": config.endpoint,
        "model": config.model_name,
        "dim": config.dim,
        "options": config.options,
    }
    return f"{config.backend}:{config.model_name or config.name}:{content_hash(ident)[:12]}"


def call_with_retry(
    fn: Callable[[], T],
    policy: RetryPolicy,
    *,
    retryable: tuple[type[BaseException], ...] = (TransportError,),
    sleep: Callable[[float], None] = time.sleep,
    label: str = "call",
) -> T:
    """Run ``fn`` up to ``policy.max_attempts`` times with exponential backoff."""
    last: BaseException | None = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return fn()
        except retryable as exc:
            last = exc
            logger.warning("%s failed (attempt %d/%d): %s", label, attempt, policy.max_attempts, exc)
            if attempt < policy.max_attempts:
                sleep(policy.backoff_base * 2 ** (attempt - 1))
    cls = RateLimited if isinstance(last, RateLimited) else TransportError
    raise cls(f"{label} failed: {last}", attempts=policy.max_attempts) from last


# -- scores derived from log-probabilities ---------------------------------


def _fold(token: str) -> str:
    return token.lstrip().casefold()


def yes_probability(provider: Provider, prompt: str, meta: dict[str, Any] | None = None) -> float:
    """Two-token renormalised probability of answering "yes".

    Candidate first tokens are matched case-insensitively after stripping
    leading whitespace; variants of the same word are summed.
    """
    req = ChatRequest(
        (Message.user(prompt),),
        sampling=Sampling(temperature=0.0),
        logprobs=True,
        max_tokens=1,
        task="verify",
        meta=meta or {},
    )
    resp = provider.chat(req)
    candidates = resp.token_logprobs or ()
    p_yes = math.fsum(math.exp(lp) for tok, lp in candidates if _fold(tok) == "yes")
    p_no = math.fsum(math.exp(lp) for tok, lp in candidates if _fold(tok) == "no")
    if p_yes + p_no == 0:
        raise LogprobsUnavailable(f"{provider.name}: neither 'yes' nor 'no' among candidate tokens")
    return p_yes / (p_yes + p_no)


@dataclass(frozen=True)
class SequenceScore:
    total: float
    per_token_mean: float
    tokens: int


def sequence_logprob(provider: Provider, context: str, continuation: str) -> SequenceScore:
    if not continuation:
        raise ValueError("continuation must be non-empty")
    lps: Sequence[float] = provider.continuation_logprobs(context, continuation)
    if not lps:
        raise LogprobsUnavailable(f"{provider.name}: no token log-probabilities returned")
    if any(lp > 0 or not math.isfinite(lp) for lp in lps):
        raise ProviderError(f"{provider.name}: log-probabilities must be finite and <= 0")
    total = math.fsum(lps)
    return SequenceScore(total=total, per_token_mean=total / len(lps), tokens=len(lps))
