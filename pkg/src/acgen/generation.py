"""Prompt assembly under two templates and generation of atomic criteria."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

from .corpus import AcceptanceCriterion, UserStory, VisualDoc, atomicize, parse_gherkin
from .errors import AblationViolation, GherkinError, OversizePrompt, UnparseableOutput
from .prompts import PromptConfig, load_prompts
from .providers.base import ChatRequest, ImagePart, Message, Provider, Sampling, TextPart, content_hash
from .retrieval import RetrievalHit

logger = logging.getLogger(__name__)


class TemplateKind(str, Enum):
    URIAL = "Urial"
    APEER = "Apeer"


class Ablation(str, Enum):
    FULL = "Full"
    NO_VRAG = "NoVrag"
    NO_RAG = "NoRag"


@dataclass(frozen=True)
class Exemplar:
    story: str
    acceptance_criteria: str


@dataclass(frozen=True)
class PromptTemplate:
    kind: TemplateKind
    exemplars: tuple[Exemplar, ...] = ()
    prompts: PromptConfig = field(default_factory=load_prompts, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", TemplateKind(self.kind))
        object.__setattr__(self, "exemplars", tuple(self.exemplars))
        if self.kind is TemplateKind.APEER and self.exemplars:
            raise ValueError("the Apeer template takes no exemplars")
        if self.kind is TemplateKind.URIAL and not self.exemplars:
            raise ValueError("the Urial template needs at least one exemplar")

    @classmethod
    def load(cls, kind: TemplateKind | str, prompts: PromptConfig | None = None) -> "PromptTemplate":
        prompts = prompts or load_prompts()
        kind = TemplateKind(kind)
        exemplars: tuple[Exemplar, ...] = ()
        if kind is TemplateKind.URIAL:
            exemplars = tuple(Exemplar(e["story"].strip(), e["acceptance_criteria"].strip())
                              for e in prompts.get("generation.urial.exemplars"))
        return cls(kind, exemplars, prompts)


@dataclass(frozen=True)
class TextContext:
    hit: RetrievalHit
    text: str


@dataclass(frozen=True)
class VisualContext:
    hit: RetrievalHit
    image: VisualDoc


@dataclass(frozen=True)
class AssembledPrompt:
    story_id: str
    messages: tuple[Message, ...]
    text_ids: tuple[str, ...] = ()
    image_ids: tuple[str, ...] = ()
    dropped: tuple[str, ...] = ()
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def size(self) -> int:
        return prompt_size(self.messages)

    @property
    def image_parts(self) -> list[ImagePart]:
        return [p for m in self.messages for p in m.images]


def prompt_size(messages: Sequence[Message]) -> int:
    """Characters of text plus base64 payload across all parts."""
    total = 0
    for m in messages:
        for p in m.parts:
            total += len(p.text) if isinstance(p, TextPart) else len(p.data)
    return total


def _knowledge_parts(template: PromptTemplate, texts: Sequence[TextContext],
                     visuals: Sequence[VisualContext]) -> list[TextPart | ImagePart]:
    if not texts and not visuals:
        return []
    parts: list[TextPart | ImagePart] = [
        TextPart("## Ground Knowledge\n" + template.prompts.render("generation.apeer.knowledge_header"))
    ]
    for ctx in texts:
        parts.append(TextPart(f"[Document {ctx.hit.rank}: {ctx.hit.doc_id}]\n{ctx.text}"))
    for ctx in visuals:
        parts.append(TextPart(f"[Screenshot {ctx.hit.rank}: {ctx.hit.doc_id}]"))
        parts.append(ImagePart.from_bytes(ctx.image.image, ctx.image.media_type))
    return parts


def _messages(template: PromptTemplate, story: UserStory, texts: Sequence[TextContext],
              visuals: Sequence[VisualContext]) -> tuple[Message, ...]:
    p = template.prompts
    story_block = p.render("generation.story_block", story=story.query_text)
    output_format = "## Output Format\n" + p.render("generation.apeer.output_format")
    knowledge = _knowledge_parts(template, texts, visuals)
    if template.kind is TemplateKind.APEER:
        task = TextPart(f"## Task\n{p.render('generation.apeer.task')}\n\n{story_block}")
        return (
            Message.system(p.render("generation.apeer.role")),
            Message.user(task, *knowledge, TextPart(output_format)),
        )
    messages = [Message.system(p.render("generation.urial.system"))]
    prefix = p.render("generation.urial.query_prefix")
    for ex in template.exemplars:
        ex_block = p.render("generation.story_block", story=ex.story)
        messages.append(Message.user(f"{prefix}\n\n{ex_block}"))
        messages.append(Message.assistant(ex.acceptance_criteria))
    messages.append(Message.user(*knowledge, TextPart(f"{prefix}\n\n{story_block}"), TextPart(output_format)))
    return tuple(messages)


def build_prompt(
    template: PromptTemplate,
    story: UserStory,
    text_hits: Sequence[TextContext] = (),
    visual_hits: Sequence[VisualContext] = (),
    ablation: Ablation = Ablation.FULL,
    max_chars: int | None = None,
) -> AssembledPrompt:
    """Assemble the generation prompt.

    Retrieved blocks appear in rank order. When ``max_chars`` is exceeded the
    lowest-ranked hits are dropped first (images before text at equal rank),
    each drop logged.
    """
    ablation = Ablation(ablation)
    if ablation is Ablation.NO_RAG and (text_hits or visual_hits):
        raise AblationViolation("NoRag mode takes no retrieved context")
    if ablation is Ablation.NO_VRAG and visual_hits:
        raise AblationViolation("NoVrag mode takes no visual context")
    texts = sorted(text_hits, key=lambda c: c.hit.rank)
    visuals = sorted(visual_hits, key=lambda c: c.hit.rank)
    dropped: list[str] = []
    messages = _messages(template, story, texts, visuals)
    while max_chars is not None and prompt_size(messages) > max_chars:
        if not texts and not visuals:
            raise OversizePrompt(
                f"prompt for {story.id!r} is {prompt_size(messages)} chars without context; limit {max_chars}",
                story_id=story.id,
            )
        last_text = texts[-1].hit.rank if texts else 0
        last_visual = visuals[-1].hit.rank if visuals else 0
        victim = visuals.pop() if last_visual >= last_text and visuals else texts.pop()
        dropped.append(victim.hit.doc_id)
        logger.warning("prompt for %s over %d chars: dropped %s (rank %d)",
                       story.id, max_chars, victim.hit.doc_id, victim.hit.rank)
        messages = _messages(template, story, texts, visuals)
    return AssembledPrompt(
        story_id=story.id,
        messages=messages,
        text_ids=tuple(c.hit.doc_id for c in texts),
        image_ids=tuple(c.hit.doc_id for c in visuals),
        dropped=tuple(dropped),
        meta={"story": story.query_text, "context": [c.text for c in texts]},
    )


@dataclass(frozen=True)
class GenerationOutput:
    story_id: str
    raw: str
    acs: tuple[AcceptanceCriterion, ...]
    transcript: tuple[dict[str, Any], ...]
    retries: int = 0

    @property
    def transcript_hash(self) -> str:
        return content_hash(list(self.transcript))

    @property
    def dialogue(self) -> tuple[Message, ...]:
        """Final request messages plus the accepted reply, for follow-up turns."""
        last = self.transcript[-1]
        msgs = tuple(Message.from_dict(m) for m in last["request"]["messages"])
        return msgs + (Message.assistant(last["response"]["text"]),)

    def to_dict(self) -> dict[str, Any]:
        return {
            "story_id": self.story_id,
            "raw": self.raw,
            "acs": [ac.raw for ac in self.acs],
            "retries": self.retries,
            "transcript": list(self.transcript),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GenerationOutput":
        acs = tuple(parse_gherkin(raw)[0] for raw in d["acs"])
        return cls(d["story_id"], d["raw"], acs, tuple(d["transcript"]), d.get("retries", 0))


def parse_atomic(text: str) -> list[AcceptanceCriterion]:
    return [atomic for ac in parse_gherkin(text) for atomic in atomicize(ac)]


def generate_acs(prompt: AssembledPrompt, provider: Provider, sampling: Sampling = Sampling(),
                 prompts: PromptConfig | None = None) -> GenerationOutput:
    """One chat call, parsed and atomicised; one corrective retry on parse failure."""
    prompts = prompts or load_prompts()
    messages = list(prompt.messages)
    raws: list[str] = []
    transcript: list[dict[str, Any]] = []
    for attempt in range(2):
        req = ChatRequest(tuple(messages), sampling=sampling, task="generate", meta=prompt.meta)
        resp = provider.chat(req)
        raws.append(resp.text)
        transcript.append({"request": req.to_dict(), "response": resp.to_dict()})
        try:
            acs = parse_atomic(resp.text)
        except GherkinError as exc:
            logger.info("reply for %s unparseable (%s); attempt %d", prompt.story_id, exc, attempt + 1)
            messages += [Message.assistant(resp.text), Message.user(prompts.render("generation.reformat"))]
            continue
        return GenerationOutput(prompt.story_id, resp.text, tuple(acs), tuple(transcript), retries=attempt)
    raise UnparseableOutput(f"no parseable criteria for {prompt.story_id!r} after 2 replies", raws=raws,
                            story_id=prompt.story_id)
