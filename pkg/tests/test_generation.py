from __future__ import annotations

import logging

import pytest

from acgen.corpus import VisualDoc
from acgen.errors import AblationViolation, OversizePrompt, UnparseableOutput
from acgen.generation import (
    Ablation,
    GenerationOutput,
    PromptTemplate,
    TemplateKind,
    TextContext,
    VisualContext,
    build_prompt,
    generate_acs,
)
from acgen.providers import MockProvider, Role
from acgen.retrieval import RetrievalHit

from .conftest import png_bytes


def text_hits(n=5):
    return [TextContext(RetrievalHit(f"C{i}", 1 - i / 10, i), f"domain rule number {i}") for i in range(1, n + 1)]


def visual_hits(n=5):
    return [VisualContext(RetrievalHit(f"V{i}", 1 - i / 10, i), VisualDoc(f"V{i}", png_bytes((i, i, i))))
            for i in range(1, n + 1)]


class TestBuildPrompt:
    def test_full_mode_rank_order(self, story):
        t = PromptTemplate.load(TemplateKind.APEER)
        prompt = build_prompt(t, story, list(reversed(text_hits())), visual_hits(), Ablation.FULL)
        assert prompt.text_ids == ("C1", "C2", "C3", "C4", "C5")
        assert prompt.image_ids == ("V1", "V2", "V3", "V4", "V5")
        assert len(prompt.image_parts) == 5
        body = prompt.messages[-1].text
        assert body.index("domain rule number 1") < body.index("domain rule number 5")

    def test_apeer_section_order(self, story):
        prompt = build_prompt(PromptTemplate.load("Apeer"), story, text_hits(2))
        assert prompt.messages[0].role is Role.SYSTEM
        user = prompt.messages[1].text
        positions = [user.index(h) for h in ("## Task", "## Ground Knowledge", "## Output Format")]
        assert positions == sorted(positions)
        assert story.narrative in user

    def test_urial_exemplars_first(self, story):
        t = PromptTemplate.load(TemplateKind.URIAL)
        prompt = build_prompt(t, story)
        roles = [m.role for m in prompt.messages]
        assert roles[:5] == [Role.SYSTEM, Role.USER, Role.ASSISTANT, Role.USER, Role.ASSISTANT]
        assert story.narrative in prompt.messages[-1].text
        assert story.narrative not in prompt.messages[1].text

    def test_no_rag(self, story):
        prompt = build_prompt(PromptTemplate.load("Apeer"), story, ablation=Ablation.NO_RAG)
        assert not prompt.image_parts and "Ground Knowledge" not in prompt.messages[-1].text
        with pytest.raises(AblationViolation):
            build_prompt(PromptTemplate.load("Apeer"), story, text_hits(1), ablation=Ablation.NO_RAG)

    def test_no_vrag(self, story):
        prompt = build_prompt(PromptTemplate.load("Apeer"), story, text_hits(2), ablation=Ablation.NO_VRAG)
        assert not prompt.image_parts and prompt.text_ids == ("C1", "C2")
        with pytest.raises(AblationViolation):
            build_prompt(PromptTemplate.load("Apeer"), story, text_hits(1), visual_hits(1), Ablation.NO_VRAG)

    def test_deterministic(self, story):
        t = PromptTemplate.load("Urial")
        a = build_prompt(t, story, text_hits(), visual_hits())
        b = build_prompt(t, story, text_hits(), visual_hits())
        assert [m.to_dict() for m in a.messages] == [m.to_dict() for m in b.messages]

    def test_oversize_drops_lowest_rank(self, story, caplog):
        t = PromptTemplate.load("Apeer")
        full = build_prompt(t, story, text_hits(3), visual_hits(3))
        bare = build_prompt(t, story)
        limit = full.size - 1
        with caplog.at_level(logging.WARNING):
            trimmed = build_prompt(t, story, text_hits(3), visual_hits(3), max_chars=limit)
        assert trimmed.dropped[0] == "V3"
        assert trimmed.size <= limit
        assert "dropped V3" in caplog.text
        with pytest.raises(OversizePrompt):
            build_prompt(t, story, text_hits(3), max_chars=bare.size - 1)

    def test_template_validation(self):
        with pytest.raises(ValueError):
            PromptTemplate(TemplateKind.URIAL, ())


class TestGenerate:
    def _prompt(self, story):
        return build_prompt(PromptTemplate.load("Apeer"), story)

    def test_atomicised_output(self, story):
        reply = ("GIVEN a WHEN b THEN c\n\nGIVEN d WHEN e THEN f AND g\n\nGIVEN h WHEN i THEN j")
        out = generate_acs(self._prompt(story), MockProvider(replies=[reply]))
        assert len(out.acs) == 4 and all(a.is_atomic for a in out.acs)
        assert out.retries == 0

    def test_retry_once(self, story):
        p = MockProvider(replies=["no criteria", "GIVEN a WHEN b THEN c"])
        out = generate_acs(self._prompt(story), p)
        assert len(out.acs) == 1 and out.retries == 1
        assert p.requests[1].messages[-2].text == "no criteria"

    def test_gives_up(self, story):
        with pytest.raises(UnparseableOutput) as info:
            generate_acs(self._prompt(story), MockProvider(replies=["nope", "still nope"]))
        assert info.value.details["raws"] == ["nope", "still nope"]

    def test_output_round_trip(self, story):
        out = generate_acs(self._prompt(story), MockProvider(replies=["GIVEN a WHEN b THEN c AND d"]))
        back = GenerationOutput.from_dict(out.to_dict())
        assert back == out and back.transcript_hash == out.transcript_hash
        assert back.dialogue[-1].text == "GIVEN a WHEN b THEN c AND d"


def test_no_rag_prompt_contains_no_corpus_text(toy):
    t = PromptTemplate.load("Apeer")
    corpus = [c.text for c in toy.chunks]
    for story in toy.stories:
        text = "\n".join(m.text for m in build_prompt(t, story, ablation=Ablation.NO_RAG).messages)
        assert not any(c in text for c in corpus)

