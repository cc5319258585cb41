"""Three-judge coverage protocol and pairwise comparison of polished sets."""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Sequence

from ..corpus import AcceptanceCriterion, GroundTruthObjective, UserStory
from ..errors import IncompleteVerdicts, UnparseablePreference, UnparseableVerdict
from ..prompts import PromptConfig, load_prompts
from ..providers.base import JUDGE_SAMPLING, ChatRequest, Message, Provider
from ..reward import numbered

logger = logging.getLogger(__name__)

JUDGE_COUNT = 3

_VERDICT_LINE = re.compile(r"^[\W_]*verdict[\W_]*[:=\-]\s*\W*(\w[\w ]*)", re.IGNORECASE | re.MULTILINE)
_PREFERENCE_LINE = re.compile(r"^[\W_]*preference[\W_]*[:=\-]\s*\W*(\w+)", re.IGNORECASE | re.MULTILINE)


class Coverage(str, Enum):
    FULL = "Full"
    PARTIAL = "Partial"
    NOT = "Not"


_COVERAGE_WORDS = {
    "full": Coverage.FULL,
    "fully": Coverage.FULL,
    "full coverage": Coverage.FULL,
    "fully covered": Coverage.FULL,
    "partial": Coverage.PARTIAL,
    "partially": Coverage.PARTIAL,
    "partial coverage": Coverage.PARTIAL,
    "partially covered": Coverage.PARTIAL,
    "not": Coverage.NOT,
    "none": Coverage.NOT,
    "no": Coverage.NOT,
    "not covered": Coverage.NOT,
    "no coverage": Coverage.NOT,
}


@dataclass(frozen=True)
class JudgeVerdict:
    objective_id: str
    judge_id: str
    coverage: Coverage

    def __post_init__(self) -> None:
        object.__setattr__(self, "coverage", Coverage(self.coverage))

    def to_dict(self) -> dict[str, str]:
        return {"objective_id": self.objective_id, "judge_id": self.judge_id, "coverage": self.coverage.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, str]) -> "JudgeVerdict":
        return cls(d["objective_id"], d["judge_id"], Coverage(d["coverage"]))


@dataclass(frozen=True)
class StoryAccuracy:
    story_id: str
    objectives: int
    hits: int
    correct: int

    @property
    def hit(self) -> float:
        return self.hits / self.objectives

    @property
    def cor(self) -> float:
        return self.correct / self.objectives


@dataclass(frozen=True)
class AccuracyReport:
    hit_case: float
    cor_case: float
    hit_point: float
    cor_point: float
    per_story: tuple[StoryAccuracy, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "hit_case": self.hit_case,
            "cor_case": self.cor_case,
            "hit_point": self.hit_point,
            "cor_point": self.cor_point,
            "per_story": [
                {"story_id": s.story_id, "objectives": s.objectives, "hits": s.hits, "correct": s.correct,
                 "hit": s.hit, "cor": s.cor}
                for s in self.per_story
            ],
        }


@dataclass(frozen=True)
class CompareResult:
    story_id: str
    unanimous_better: bool
    votes: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"story_id": self.story_id, "unanimous_better": self.unanimous_better, "votes": list(self.votes)}


def _check_judges(judges: Sequence[Provider]) -> None:
    if len(judges) != JUDGE_COUNT:
        raise ValueError(f"exactly {JUDGE_COUNT} judges are required, got {len(judges)}")
    names = [j.name for j in judges]
    if len(set(names)) != len(names):
        raise ValueError(f"judge names must be distinct: {names}")


def parse_coverage(text: str) -> Coverage | None:
    found = _VERDICT_LINE.findall(text)
    if not found:
        return None
    phrase = " ".join(found[-1].lower().split())
    if phrase in _COVERAGE_WORDS:
        return _COVERAGE_WORDS[phrase]
    return _COVERAGE_WORDS.get(phrase.split()[0])


def _ask(judge: Provider, prompt: str, reprompt: str, task: str, meta: dict[str, Any], parse):
    messages = [Message.user(prompt)]
    replies = []
    for _ in range(2):
        reply = judge.chat(ChatRequest(tuple(messages), sampling=JUDGE_SAMPLING, task=task, meta=meta)).text
        replies.append(reply)
        parsed = parse(reply)
        if parsed is not None:
            return parsed, replies
        messages += [Message.assistant(reply), Message.user(reprompt)]
    return None, replies


def judge_objective(objective: GroundTruthObjective, generated: Sequence[AcceptanceCriterion], story: UserStory,
                    judges: Sequence[Provider], prompts: PromptConfig | None = None) -> list[JudgeVerdict]:
    """One verdict per judge, in judge order; no aggregation happens here."""
    _check_judges(judges)
    prompts = prompts or load_prompts()
    acs_text = numbered(generated) if generated else "(none)"
    prompt = prompts.render("evaluation.coverage", story=story.query_text, acs=acs_text, objective=objective.text)
    reprompt = prompts.render("evaluation.coverage_reprompt")
    meta = {"story": story.query_text, "acs": [ac.text for ac in generated], "objective": objective.text}
    verdicts = []
    for judge in judges:
        coverage, replies = _ask(judge, prompt, reprompt, "judge", meta, parse_coverage)
        if coverage is None:
            raise UnparseableVerdict(f"{judge.name}: no verdict for objective {objective.id!r}",
                                     replies=replies, judge=judge.name)
        verdicts.append(JudgeVerdict(objective.id, judge.name, coverage))
    return verdicts


def judge_story(objectives: Sequence[GroundTruthObjective], generated: Sequence[AcceptanceCriterion],
                story: UserStory, judges: Sequence[Provider], prompts: PromptConfig | None = None,
                max_parallel: int = 4) -> list[JudgeVerdict]:
    """Judge every objective of a story; objectives run concurrently, results keep input order."""
    prompts = prompts or load_prompts()

    def one(obj: GroundTruthObjective) -> list[JudgeVerdict]:
        return judge_objective(obj, generated, story, judges, prompts)

    workers = min(max_parallel, len(objectives))
    if workers <= 1:
        per_obj = [one(o) for o in objectives]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_obj = list(pool.map(one, objectives))
    return [v for vs in per_obj for v in vs]


def accuracy_report(verdicts: Sequence[JudgeVerdict],
                    objectives_by_story: Mapping[str, Sequence[GroundTruthObjective]]) -> AccuracyReport:
    """Unanimity aggregation with case (story mean) and point (pooled) accuracies.

    Stories without objectives are left out of the case mean.
    """
    matrix: dict[str, list[JudgeVerdict]] = {}
    seen: set[tuple[str, str]] = set()
    for v in verdicts:
        key = (v.objective_id, v.judge_id)
        if key in seen:
            raise IncompleteVerdicts(f"duplicate verdict for objective {v.objective_id!r} by {v.judge_id!r}")
        seen.add(key)
        matrix.setdefault(v.objective_id, []).append(v)

    per_story = []
    known = set()
    for story_id in sorted(objectives_by_story):
        objs = objectives_by_story[story_id]
        if not objs:
            continue
        hits = correct = 0
        for obj in objs:
            known.add(obj.id)
            got = matrix.get(obj.id, [])
            if len(got) != JUDGE_COUNT:
                raise IncompleteVerdicts(f"objective {obj.id!r} has {len(got)} verdicts, expected {JUDGE_COUNT}",
                                         objective_id=obj.id)
            if all(v.coverage is not Coverage.NOT for v in got):
                hits += 1
            if all(v.coverage is Coverage.FULL for v in got):
                correct += 1
        per_story.append(StoryAccuracy(story_id, len(objs), hits, correct))
    stray = set(matrix) - known
    if stray:
        raise IncompleteVerdicts(f"verdicts for unknown objectives: {sorted(stray)}")
    if not per_story:
        raise IncompleteVerdicts("no objectives to evaluate")

    total = sum(s.objectives for s in per_story)
    n = len(per_story)
    return AccuracyReport(
        hit_case=math.fsum(s.hit for s in per_story) / n,
        cor_case=math.fsum(s.cor for s in per_story) / n,
        hit_point=sum(s.hits for s in per_story) / total,
        cor_point=sum(s.correct for s in per_story) / total,
        per_story=tuple(per_story),
    )


def parse_preference(text: str) -> str | None:
    found = _PREFERENCE_LINE.findall(text)
    if not found:
        return None
    word = found[-1].lower()
    return {"a": "A", "b": "B", "tie": "Tie", "equal": "Tie", "neither": "Tie"}.get(word)


def compare_polish(story: UserStory, original: Sequence[AcceptanceCriterion],
                   polished: Sequence[AcceptanceCriterion], judges: Sequence[Provider],
                   prompts: PromptConfig | None = None) -> CompareResult:
    """Ask each judge for a preference; odd-indexed judges see the polished set first.

    Votes are recorded as ``polished``, ``original`` or ``tie``.
    """
    _check_judges(judges)
    prompts = prompts or load_prompts()
    reprompt = prompts.render("evaluation.compare_reprompt")
    orig_text, pol_text = numbered(original), numbered(polished)
    votes = []
    for i, judge in enumerate(judges):
        swapped = i % 2 == 1
        a, b = (pol_text, orig_text) if swapped else (orig_text, pol_text)
        prompt = prompts.render("evaluation.compare", story=story.query_text, version_a=a, version_b=b)
        meta = {"story": story.query_text, "version_a": a, "version_b": b}
        pref, replies = _ask(judge, prompt, reprompt, "compare", meta, parse_preference)
        if pref is None:
            raise UnparseablePreference(f"{judge.name}: no preference for story {story.id!r}",
                                        replies=replies, judge=judge.name)
        if pref == "Tie":
            votes.append("tie")
        else:
            polished_slot = "A" if swapped else "B"
            votes.append("polished" if pref == polished_slot else "original")
    return CompareResult(story.id, all(v == "polished" for v in votes), tuple(votes))
