from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from acgen.errors import IncomparableScores, MixedScorers, UnparseablePolish, UnparseableScore
from acgen.providers import ChatResponse, Message, MockProvider
from acgen.reward import (
    LocalScore,
    PolishConfig,
    PolishOutcome,
    PolishProviders,
    ScorerKind,
    global_score,
    local_score,
    parse_global_level,
    polish,
    select_worst,
)

from .conftest import ac

ACS = [ac("g", "w", "first outcome"), ac("g", "w", "second outcome"), ac("g", "w", "third outcome")]
REPLACEMENT = "GIVEN g WHEN w THEN a much better second outcome"


def verifier(values: dict[str, float]) -> MockProvider:
    """Scorer whose yes-probability is looked up by criterion text, so thread order is irrelevant."""

    def respond(req):
        p = values[req.meta["ac"]]
        return ChatResponse("Yes", (("Yes", math.log(p)), ("No", math.log(1 - p))))

    return MockProvider("scorer", responder=respond)


def providers(globals_, locals_=(0.9, 0.2, 0.8), polish_replies=(REPLACEMENT,)):
    judge = MockProvider("judge", replies={"global_score": [f"Score: {g}" for g in globals_]})
    scorer = verifier({a.text: v for a, v in zip(ACS, locals_)} | {
        "GIVEN g WHEN w THEN a much better second outcome": 0.7})
    polisher = MockProvider("gen", replies={"polish": list(polish_replies)})
    return PolishProviders(judge, scorer, polisher)


class TestParseLevel:
    @pytest.mark.parametrize("text,level", [
        ("Score: 4", 4),
        ("Reasoning...\nScore: 3/5", 3),
        ("**Final score**: 5 out of 5", 5),
        ("Score: 2\nafter reflection\nScore: 4", 4),
        ("Score: 7", None),
        ("I'd rate it 4", None),
    ])
    def test_levels(self, text, level):
        assert parse_global_level(text) == level


class TestGlobal:
    def test_reprompt_then_fail(self, story):
        judge = MockProvider(replies=["great", "still great"])
        with pytest.raises(UnparseableScore):
            global_score(story, ACS, judge)
        assert judge.requests[1].messages[-2].text == "great"

    def test_temperature_zero_and_notes(self, story):
        judge = MockProvider(replies=["Relevance: strong\nScore: 4"])
        g = global_score(story, ACS, judge)
        assert g.level == 4 and g.dimension_notes[0] == "strong"
        assert judge.requests[0].sampling.temperature == 0.0


class TestLocal:
    def test_verifier(self, story):
        s = local_score(story, ACS[0], ScorerKind.VERIFIER, verifier({ACS[0].text: 0.8}))
        assert s.value == pytest.approx(0.8) and s.scorer is ScorerKind.VERIFIER

    def test_ur3_mean_logprob(self, story):
        s = local_score(story, ACS[0], "Ur3", MockProvider(logprobs=[-1.0, -3.0]))
        assert s.value == pytest.approx(-2.0)

    def test_cross_kind_comparison(self):
        with pytest.raises(IncomparableScores):
            _ = LocalScore(0.5, "Verifier") < LocalScore(-1.0, "Ur3")
        assert LocalScore(0.2, "Verifier") < LocalScore(0.5, "Verifier")


class TestSelectWorst:
    def test_examples(self):
        mk = lambda *vs: [LocalScore(v, ScorerKind.VERIFIER) for v in vs]  # noqa: E731
        assert select_worst(mk(0.9, 0.2, 0.8)) == 1
        assert select_worst(mk(0.5, 0.5)) == 0
        assert select_worst(mk(0.3)) == 0

    def test_mixed(self):
        with pytest.raises(MixedScorers):
            select_worst([LocalScore(0.5, "Verifier"), LocalScore(-1.0, "Ur3")])

    @given(st.lists(st.integers(min_value=0, max_value=100).map(lambda i: i / 100), min_size=1, max_size=12),
           st.sampled_from([lambda x: x ** 3, math.sqrt, lambda x: (math.exp(x) - 1) / (math.e - 1),
                            lambda x: x / 2 + 0.5]))
    def test_monotone_invariance(self, values, transform):
        base = select_worst([LocalScore(v, ScorerKind.VERIFIER) for v in values])
        assert select_worst([LocalScore(transform(v), ScorerKind.VERIFIER) for v in values]) == base


class TestPolish:
    def test_short_circuit(self, story):
        ps = providers([5])
        out = polish(story, ACS, PolishConfig(), ps)
        assert out.acs == tuple(ACS) and out.rounds_executed == 0
        assert ps.scorer.count() == 0 and ps.polisher.count() == 0

    def test_replaces_worst(self, story):
        ps = providers([3, 4])
        dialogue = [Message.user("generate please"), Message.assistant("GIVEN ...")]
        out = polish(story, ACS, PolishConfig(), ps, dialogue=dialogue)
        assert out.rounds_executed == 1 and out.replaced_indices == (1,)
        assert out.acs[0] is ACS[0] and out.acs[2] is ACS[2]
        assert out.acs[1].then == ("a much better second outcome",)
        assert out.global_before.level == 3 and out.global_after.level == 4
        sent = ps.polisher.requests[0].messages
        assert sent[0].text == "generate please"
        assert "second outcome" in sent[-1].text and "first outcome" in sent[-1].text

    def test_round_bound(self, story):
        ps = providers([3, 3, 3], polish_replies=[REPLACEMENT, REPLACEMENT])
        out = polish(story, ACS, PolishConfig(max_rounds=2), ps)
        assert out.rounds_executed == 2 and len(out.replaced_indices) == 2
        assert len(ps.polisher.requests[1].messages) > len(ps.polisher.requests[0].messages)

    def test_unparseable_polish(self, story):
        ps = providers([3], polish_replies=["sorry", "no"])
        with pytest.raises(UnparseablePolish):
            polish(story, ACS, PolishConfig(), ps)

    def test_outcome_round_trip(self, story):
        out = polish(story, ACS, PolishConfig(), providers([2, 3]))
        assert PolishOutcome.from_dict(out.to_dict()) == out

    def test_config_bounds(self):
        with pytest.raises(ValueError):
            PolishConfig(threshold=6)
        with pytest.raises(ValueError):
            PolishConfig(max_rounds=0)
