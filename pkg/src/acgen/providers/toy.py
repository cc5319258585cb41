"""Heuristic chat behaviour for offline end-to-end runs.

The toy responder stands in for generator, reward and judge models. It reads
the structured hints in ``ChatRequest.meta`` rather than the prompt, so its
answers are stable under prompt wording changes. Nothing here is meant to
be a good model; it only has to be deterministic and exercise every code path.
"""

from __future__ import annotations

import hashlib
import math
import re
from typing import Any

from ..corpus import AcceptanceCriterion, parse_gherkin, render
from .base import ChatRequest, ChatResponse, ProviderConfig
from .mock import MockProvider, Responder

_STORY = re.compile(r"as an?\s+(?P<role>[^,]+),\s*i want(?: to)?\s+(?P<goal>[^,]+?)(?:,?\s*so that\s+(?P<benefit>.+?))?\.?$",
                    re.IGNORECASE | re.MULTILINE)
_WORD = re.compile(r"[^\W_]+")
_STOP = frozenset(
    "a an and are as at be by can for from has have i in is it its of on or so that the their then this to "
    "was when with without".split()
)


def _content_words(text: str) -> set[str]:
    return {w for w in _WORD.findall(text.lower()) if w not in _STOP and len(w) > 1}


def _stable_int(*parts: Any) -> int:
    blob = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "big")


def _first_sentence(text: str) -> str:
    sentence = re.split(r"(?<=[.!?])\s+", text.strip(), maxsplit=1)[0]
    return sentence.rstrip(".!?").strip()


def _lower_first(text: str) -> str:
    return text[:1].lower() + text[1:] if text else text


def _story_parts(story: str) -> tuple[str, str, str]:
    m = _STORY.search(story)
    if not m:
        return "user", "use the feature", "the task is completed"
    benefit = (m.group("benefit") or "the request is completed").strip().rstrip(".")
    return m.group("role").strip(), _third_person(m.group("goal").strip()), _third_person(benefit)


def _third_person(text: str) -> str:
    swaps = {"i": "they", "me": "them", "my": "their", "mine": "theirs", "am": "are"}
    return re.sub(r"\b(i|me|my|mine|am)\b", lambda m: swaps[m.group(1).lower()], text, flags=re.IGNORECASE)


def _generate(meta: dict[str, Any]) -> str:
    role, goal, benefit = _story_parts(meta.get("story", ""))
    blocks = [
        AcceptanceCriterion((f"a {role} is signed in",), (f"the {role} chooses to {goal}",),
                            (f"the system confirms that {_lower_first(benefit)}",)),
    ]
    for ctx in meta.get("context", [])[:3]:
        rule = _first_sentence(ctx)
        if rule:
            blocks.append(AcceptanceCriterion((f"a {role} is signed in",), (f"the {role} tries to {goal}",),
                                              (f"the system ensures that {_lower_first(rule)}",)))
    body = "\n\n".join(render(ac) for ac in blocks)
    return f"Here are the acceptance criteria for this story.\n\n{body}\n"


def _global(meta: dict[str, Any]) -> str:
    level = 3 + _stable_int(meta.get("story", ""), *meta.get("acs", [])) % 3
    return (
        "Relevance: adequate\nCorrectness: adequate\nUnderstandability: clear\n"
        "Coverage: partial\nAtomicity: good\nTestability: good\n"
        f"Score: {level}"
    )


def _verify(meta: dict[str, Any]) -> ChatResponse:
    story, ac = _content_words(meta.get("story", "")), _content_words(meta.get("ac", ""))
    ratio = len(story & ac) / len(ac) if ac else 0.0
    p = min(0.95, 0.05 + 0.9 * ratio)
    answer = "Yes" if p >= 0.5 else "No"
    return ChatResponse(answer, (("Yes", math.log(p)), ("No", math.log(1 - p))))


def _polish(meta: dict[str, Any]) -> str:
    worst = parse_gherkin(meta["worst"])[0]
    then = worst.then[0]
    if not then.endswith("within 2 seconds"):
        then += " within 2 seconds"
    better = AcceptanceCriterion(worst.given, worst.when, (then,))
    return f"Revised criterion:\n\n{render(better)}\n"


def _judge(meta: dict[str, Any], strictness: float) -> str:
    target = _content_words(meta.get("objective", ""))
    covered = _content_words(" ".join(meta.get("acs", [])))
    ratio = len(target & covered) / len(target) if target else 0.0
    if ratio >= 0.6 + strictness:
        verdict = "Full"
    elif ratio >= 0.25 + strictness / 2:
        verdict = "Partial"
    else:
        verdict = "Not"
    return f"{len(target & covered)} of {len(target)} objective terms appear in the criteria.\nVerdict: {verdict}"


def _compare(meta: dict[str, Any]) -> str:
    a, b = len(meta.get("version_a", "")), len(meta.get("version_b", ""))
    pref = "Tie" if a == b else ("A" if a > b else "B")
    return f"The more specific version is preferred.\nPreference: {pref}"


def toy_responder(strictness: float = 0.0) -> Responder:
    """Responder dispatching on ``req.task``; ``strictness`` raises the judge's coverage bar."""

    def respond(req: ChatRequest) -> str | ChatResponse:
        meta = req.meta
        if req.task == "generate":
            return _generate(meta)
        if req.task == "global_score":
            return _global(meta)
        if req.task == "verify":
            return _verify(meta)
        if req.task == "polish":
            return _polish(meta)
        if req.task == "judge":
            return _judge(meta, strictness)
        if req.task == "compare":
            return _compare(meta)
        return "I can only help with acceptance criteria."

    return respond


def toy_provider(name: str = "toy", dim: int = 64, strictness: float = 0.0,
                 config: ProviderConfig | None = None) -> MockProvider:
    config = config or ProviderConfig(name=name, backend="toy", dim=dim, options={"strictness": strictness})
    return MockProvider(name, dim=dim, responder=toy_responder(strictness), config=config)
