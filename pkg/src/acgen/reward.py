"""Two-level reward scoring and polishing of generated criteria.

A global judge grades the whole set on a 1-5 scale. Below the threshold, a
local scorer rates every criterion, the lowest-rated one is rewritten by the
generator model in the same dialogue, and the set is re-graded.
"""

from __future__ import annotations

import functools
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

from .corpus import AcceptanceCriterion, UserStory, parse_gherkin
from .errors import (
    GherkinError,
    IncomparableScores,
    MixedScorers,
    UnparseablePolish,
    UnparseableScore,
)
from .generation import parse_atomic
from .prompts import PromptConfig, load_prompts
from .providers.base import (
    ChatRequest,
    Message,
    Provider,
    Sampling,
    sequence_logprob,
    yes_probability,
)

logger = logging.getLogger(__name__)

_SCORE_LINE = re.compile(r"^[\W_]*(?:final\s+)?score\b[^\S\n]*[:=\-]?(.*)$", re.IGNORECASE | re.MULTILINE)
_OUT_OF = re.compile(r"\s*(?:/|out\s+of)\s*5\b", re.IGNORECASE)
_STANDALONE_INT = re.compile(r"(?<![\w.])(\d+)(?![\w.])")


class ScorerKind(str, Enum):
    VERIFIER = "Verifier"
    UR3 = "Ur3"


@dataclass(frozen=True)
class GlobalScore:
    level: int
    dimension_notes: tuple[str, ...]
    raw_judgment: str

    def __post_init__(self) -> None:
        if not 1 <= self.level <= 5:
            raise ValueError(f"global level {self.level} outside 1..5")

    def to_dict(self) -> dict[str, Any]:
        return {"level": self.level, "dimension_notes": list(self.dimension_notes),
                "raw_judgment": self.raw_judgment}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GlobalScore":
        return cls(d["level"], tuple(d["dimension_notes"]), d["raw_judgment"])


@functools.total_ordering
@dataclass(frozen=True)
class LocalScore:
    """Per-criterion score; only scores from the same scorer kind compare."""

    value: float
    scorer: ScorerKind

    def __post_init__(self) -> None:
        object.__setattr__(self, "scorer", ScorerKind(self.scorer))
        if self.scorer is ScorerKind.VERIFIER and not 0.0 <= self.value <= 1.0:
            raise ValueError("verifier scores lie in [0, 1]")
        if self.scorer is ScorerKind.UR3 and self.value > 0:
            raise ValueError("likelihood scores are <= 0")

    def comparable(self, other: "LocalScore") -> bool:
        return self.scorer is other.scorer

    def __lt__(self, other: "LocalScore") -> bool:
        if not isinstance(other, LocalScore):
            return NotImplemented
        if not self.comparable(other):
            raise IncomparableScores(f"cannot compare {self.scorer.value} with {other.scorer.value} scores")
        return self.value < other.value


@dataclass(frozen=True)
class PolishConfig:
    threshold: int = 5
    max_rounds: int = 1
    local_scorer: ScorerKind = ScorerKind.VERIFIER

    def __post_init__(self) -> None:
        if not 1 <= self.threshold <= 5:
            raise ValueError("threshold must be within 1..5")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        object.__setattr__(self, "local_scorer", ScorerKind(self.local_scorer))


@dataclass(frozen=True)
class PolishProviders:
    judge: Provider
    scorer: Provider
    polisher: Provider


@dataclass(frozen=True)
class PolishOutcome:
    acs: tuple[AcceptanceCriterion, ...]
    rounds_executed: int
    replaced_indices: tuple[int, ...]
    global_before: GlobalScore
    global_after: GlobalScore
    local_scores: tuple[tuple[float, ...], ...] = ()
    transcript: tuple[dict[str, Any], ...] = field(default=(), compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "acs": [ac.raw for ac in self.acs],
            "rounds_executed": self.rounds_executed,
            "replaced_indices": list(self.replaced_indices),
            "global_before": self.global_before.to_dict(),
            "global_after": self.global_after.to_dict(),
            "local_scores": [list(r) for r in self.local_scores],
            "transcript": list(self.transcript),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PolishOutcome":
        return cls(
            acs=tuple(parse_gherkin(raw)[0] for raw in d["acs"]),
            rounds_executed=d["rounds_executed"],
            replaced_indices=tuple(d["replaced_indices"]),
            global_before=GlobalScore.from_dict(d["global_before"]),
            global_after=GlobalScore.from_dict(d["global_after"]),
            local_scores=tuple(tuple(r) for r in d["local_scores"]),
            transcript=tuple(d.get("transcript", ())),
        )


def numbered(acs: Sequence[AcceptanceCriterion]) -> str:
    return "\n".join(f"{i}. {ac.text}" for i, ac in enumerate(acs, start=1))


def parse_global_level(text: str) -> int | None:
    """Last standalone integer on the last ``Score:`` line, if within 1..5."""
    lines = _SCORE_LINE.findall(text)
    if not lines:
        return None
    numbers = _STANDALONE_INT.findall(_OUT_OF.sub("", lines[-1]))
    if not numbers:
        return None
    level = int(numbers[-1])
    return level if 1 <= level <= 5 else None


def _dimension_notes(text: str, dimensions: Sequence[str]) -> tuple[str, ...]:
    notes = []
    for name in dimensions:
        found = re.findall(rf"^[\W_]*{re.escape(name)}[\W_]*?[:\-]\s*(.+)$", text, re.IGNORECASE | re.MULTILINE)
        notes.append(found[-1].strip() if found else "")
    return tuple(notes)


def global_score(story: UserStory, acs: Sequence[AcceptanceCriterion], judge: Provider,
                 prompts: PromptConfig | None = None) -> GlobalScore:
    if not acs:
        raise ValueError("global scoring needs at least one criterion")
    prompts = prompts or load_prompts()
    dims = prompts.get("reward.dimensions")
    prompt = prompts.render("reward.global", story=story.query_text, acs=numbered(acs),
                            dimensions=dims, levels=prompts.get("reward.levels"))
    messages = [Message.user(prompt)]
    meta = {"story": story.query_text, "acs": [ac.text for ac in acs]}
    replies = []
    for _ in range(2):
        reply = judge.chat(ChatRequest(tuple(messages), sampling=Sampling(temperature=0.0),
                                       task="global_score", meta=meta)).text
        replies.append(reply)
        level = parse_global_level(reply)
        if level is not None:
            return GlobalScore(level, _dimension_notes(reply, [d["name"] for d in dims]), reply)
        messages += [Message.assistant(reply), Message.user(prompts.render("reward.global_reprompt"))]
    raise UnparseableScore(f"{judge.name}: no valid 1-5 score for story {story.id!r}", replies=replies)


def local_score(story: UserStory, ac: AcceptanceCriterion, scorer: ScorerKind, provider: Provider,
                prompts: PromptConfig | None = None) -> LocalScore:
    scorer = ScorerKind(scorer)
    if not ac.is_atomic:
        raise ValueError("local scoring expects an atomic criterion")
    prompts = prompts or load_prompts()
    if scorer is ScorerKind.VERIFIER:
        prompt = prompts.render("reward.verifier", story=story.query_text, ac=ac.text)
        value = yes_probability(provider, prompt, meta={"story": story.query_text, "ac": ac.text})
    else:
        context = prompts.render("reward.ur3_context", story=story.query_text) + "\n"
        value = sequence_logprob(provider, context, ac.text).per_token_mean
    return LocalScore(value, scorer)


def select_worst(scores: Sequence[LocalScore]) -> int:
    """Index of the lowest score; the first one wins ties."""
    if not scores:
        raise ValueError("no scores to choose from")
    kinds = {s.scorer for s in scores}
    if len(kinds) > 1:
        raise MixedScorers(f"scores from several scorers: {sorted(k.value for k in kinds)}")
    return min(range(len(scores)), key=lambda i: scores[i].value)


def _score_all(story: UserStory, acs: Sequence[AcceptanceCriterion], cfg: PolishConfig, provider: Provider,
               prompts: PromptConfig) -> list[LocalScore]:
    def one(ac: AcceptanceCriterion) -> LocalScore:
        return local_score(story, ac, cfg.local_scorer, provider, prompts)

    workers = min(provider.config.max_parallel, len(acs))
    if workers <= 1:
        return [one(ac) for ac in acs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, acs))


def _llm_polish(story: UserStory, current: list[AcceptanceCriterion], worst: int, dialogue: list[Message],
                polisher: Provider, prompts: PromptConfig, sampling: Sampling,
                transcript: list[dict[str, Any]]) -> AcceptanceCriterion:
    others = current[:worst] + current[worst + 1:]
    ask = Message.user(prompts.render("reward.polish", story=story.query_text, worst=current[worst].text,
                                      others=numbered(others) or "(none)"))
    meta = {"story": story.query_text, "worst": current[worst].text, "others": [o.text for o in others]}
    messages = [*dialogue, ask]
    replies = []
    for _ in range(2):
        req = ChatRequest(tuple(messages), sampling=sampling, task="polish", meta=meta)
        reply = polisher.chat(req).text
        replies.append(reply)
        transcript.append({"request": req.to_dict(), "response": {"text": reply}})
        try:
            parsed = parse_atomic(reply)
        except GherkinError:
            messages += [Message.assistant(reply), Message.user(prompts.render("reward.polish_reformat"))]
            continue
        if len(parsed) > 1:
            logger.warning("polish reply for %s held %d criteria; keeping the first", story.id, len(parsed))
        dialogue[:] = [*messages, Message.assistant(reply)]
        return parsed[0]
    raise UnparseablePolish(f"no valid replacement criterion for story {story.id!r}", replies=replies)


def polish(
    story: UserStory,
    acs: Sequence[AcceptanceCriterion],
    cfg: PolishConfig,
    providers: PolishProviders,
    dialogue: Sequence[Message] = (),
    prompts: PromptConfig | None = None,
    sampling: Sampling = Sampling(),
) -> PolishOutcome:
    """Replace the worst-scored criterion until the global level reaches the threshold.

    With the default ``max_rounds=1`` this is a single replacement. ``dialogue``
    is the generation conversation; polish turns are appended to it.
    """
    if not acs:
        raise ValueError("nothing to polish")
    if not all(ac.is_atomic for ac in acs):
        raise ValueError("polishing expects atomic criteria")
    prompts = prompts or load_prompts()
    before = global_score(story, acs, providers.judge, prompts)
    if before.level >= cfg.threshold:
        return PolishOutcome(tuple(acs), 0, (), before, before)

    current = list(acs)
    convo = list(dialogue)
    replaced: list[int] = []
    local_rounds: list[tuple[float, ...]] = []
    transcript: list[dict[str, Any]] = []
    after = before
    for _ in range(cfg.max_rounds):
        scores = _score_all(story, current, cfg, providers.scorer, prompts)
        local_rounds.append(tuple(s.value for s in scores))
        worst = select_worst(scores)
        current[worst] = _llm_polish(story, current, worst, convo, providers.polisher, prompts, sampling,
                                     transcript)
        replaced.append(worst)
        after = global_score(story, current, providers.judge, prompts)
        if after.level >= cfg.threshold:
            break
    return PolishOutcome(tuple(current), len(replaced), tuple(replaced), before, after,
                         tuple(local_rounds), tuple(transcript))
