from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acgen.corpus import GroundTruthObjective
from acgen.errors import (
    EmptyAfterTokenization,
    EmptyRelevanceSet,
    IncompleteVerdicts,
    UnparseablePreference,
    UnparseableVerdict,
)
from acgen.evaluation import (
    Coverage,
    JudgeVerdict,
    RougeMode,
    accuracy_report,
    average_precision,
    bleu,
    compare_polish,
    judge_objective,
    levenshtein,
    mean_average_precision,
    ndcg_at_k,
    parse_coverage,
    ranking_metrics,
    rouge,
    semantic_similarity,
    tokenize,
)
from acgen.providers import JUDGE_SAMPLING, MockProvider

from .conftest import ac
from .oracles import brute_ranking, recursive_lcs, reference_bleu

# Values produced by the oracles in tests/oracles.py and frozen here.
NDCG_A_F_AT_5 = 0.6131471927654584  # 1 / (1 + 1/log2(3))
AP_RANKS_1_3 = 0.8333333333333334  # (1/1 + 2/3) / 2
BLEU_CAT_MAT = 0.42044820762685725  # (5/6 * 3/5 * 1/4 * 1/4) ** (1/4)


class TestRanking:
    def test_counting_example(self):
        m = ranking_metrics(list("ABCDE"), {"A", "F"}, 5)
        assert (m.precision, m.recall, m.hit_rate) == (0.2, 0.5, 1.0)
        assert m.f1 == pytest.approx(2 * 0.2 * 0.5 / 0.7)
        assert m.ndcg == pytest.approx(NDCG_A_F_AT_5, abs=1e-12)
        assert brute_ranking(list("ABCDE"), {"A", "F"}, 5)["ndcg"] == pytest.approx(NDCG_A_F_AT_5, abs=1e-12)

    def test_average_precision(self):
        assert average_precision(list("ABCD"), {"A", "C"}) == pytest.approx(AP_RANKS_1_3, abs=1e-12)
        assert mean_average_precision([(list("ABCD"), {"A", "C"}), (list("XY"), {"Z"})]) == pytest.approx(
            AP_RANKS_1_3 / 2)

    def test_empty_relevance(self):
        with pytest.raises(EmptyRelevanceSet):
            ranking_metrics(["A"], set(), 1)

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            ranking_metrics(["A", "A"], {"A"}, 1)

    def test_zero_f1(self):
        assert ranking_metrics(["B"], {"A"}, 1).f1 == 0.0

    @settings(max_examples=200)
    @given(st.integers(1, 15), st.integers(1, 8), st.integers(1, 20))
    def test_relevant_first_gives_perfect_ndcg(self, n_docs, n_rel, k):
        n_rel = min(n_rel, n_docs)
        ranked = [f"D{i}" for i in range(n_docs)]
        assert ndcg_at_k(ranked, set(ranked[:n_rel]), k) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=200)
    @given(st.permutations([f"D{i}" for i in range(10)]), st.sets(st.sampled_from([f"D{i}" for i in range(12)]),
                                                                    min_size=1), st.integers(1, 12))
    def test_bounds(self, ranked, relevant, k):
        m = ranking_metrics(ranked, relevant, k)
        assert all(0.0 <= v <= 1.0 for v in (m.precision, m.recall, m.f1, m.ndcg, m.hit_rate, m.map))


class TestText:
    def test_tokenize(self):
        assert tokenize("The user's E-mail_address, 2FA!") == ["the", "user", "s", "e", "mail", "address", "2fa"]

    def test_identity(self):
        for mode in RougeMode:
            assert rouge("GIVEN a user WHEN x", "given a user when x", mode).f1 == 1.0
        assert bleu("one two three four five", ["one two three four five"]) == pytest.approx(1.0)
        assert levenshtein("same", "same") == 0

    def test_rouge_examples(self):
        r = rouge("the cat sat", "the cat ran", RougeMode.N1)
        assert (r.precision, r.recall, r.f1) == pytest.approx((2 / 3, 2 / 3, 2 / 3))
        lcs = rouge("a b c d", "a c b d", RougeMode.L)
        assert recursive_lcs(tuple("abcd"), tuple("acbd")) == 3
        assert (lcs.precision, lcs.recall) == (0.75, 0.75)

    def test_rouge2_short_inputs(self):
        assert rouge("ok", "ok", RougeMode.N2).f1 == 1.0
        assert rouge("ok", "no", RougeMode.N2).f1 == 0.0

    def test_empty_after_tokenization(self):
        with pytest.raises(EmptyAfterTokenization):
            rouge("!!!", "text")
        with pytest.raises(EmptyAfterTokenization):
            bleu("text", ["..."])

    def test_bleu_fixture(self):
        cand, ref = "the cat sat on the mat", "the cat is on the mat"
        assert bleu(cand, [ref]) == pytest.approx(BLEU_CAT_MAT, abs=1e-12)
        assert reference_bleu(cand.split(), [ref.split()]) == pytest.approx(BLEU_CAT_MAT, abs=1e-12)

    def test_bleu_longer_candidate_has_no_penalty(self):
        # Every reference n-gram matched and c > r: precisions below 1 come from extra words only.
        value = bleu("a b c d e", ["a b c d"])
        assert value == pytest.approx(reference_bleu(list("abcde"), [list("abcd")]))
        assert value == pytest.approx((4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25)

    def test_bleu_brevity_penalty(self):
        assert bleu("a b", ["a b c d"]) == pytest.approx(math.exp(1 - 4 / 2) * (1 * 1 * 1 / 1 * 1 / 1) ** 0.25)

    def test_levenshtein(self):
        assert levenshtein("abc", "") == 3
        assert levenshtein("kitten", "sitting") == 3
        assert levenshtein("ångström", "angstrom") == 2

    def test_semantic_similarity(self):
        p = MockProvider(dim=2, text_vectors={"a": [1, 0], "b": [0, 1]})
        assert semantic_similarity("a", "b", p) == pytest.approx(0.0)
        q = MockProvider()
        assert semantic_similarity("same text", "same text", q) == pytest.approx(1.0, abs=1e-6)
        assert semantic_similarity("x y", "y z", q) == semantic_similarity("y z", "x y", q)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from("abcde"), min_size=1, max_size=12),
           st.lists(st.sampled_from("abcde"), min_size=1, max_size=12))
    def test_ranges(self, a, b):
        ca, cb = " ".join(a), " ".join(b)
        for mode in RougeMode:
            r = rouge(ca, cb, mode)
            assert 0.0 <= r.precision <= 1.0 and 0.0 <= r.recall <= 1.0 and 0.0 <= r.f1 <= 1.0
        assert 0.0 <= bleu(ca, [cb]) <= 1.0
        assert levenshtein(ca, cb) == levenshtein(cb, ca)


def judges(*scripts):
    return [MockProvider(f"judge-{i}", replies={"judge": list(s)}) for i, s in enumerate(scripts)]


OBJ = GroundTruthObjective("O1", "S1", "reset link expires")


class TestJudgeObjective:
    def test_verdicts_recorded_verbatim(self, story):
        js = judges(["Verdict: Full"], ["Verdict: Partial"], ["verdict - full coverage"])
        out = judge_objective(OBJ, [ac("g", "w", "t")], story, js)
        assert [v.coverage for v in out] == [Coverage.FULL, Coverage.PARTIAL, Coverage.FULL]
        assert [v.judge_id for v in out] == ["judge-0", "judge-1", "judge-2"]
        for j in js:
            assert j.requests[0].sampling == JUDGE_SAMPLING
            assert "reset link expires" in j.requests[0].prompt_text

    def test_unparseable(self, story):
        js = judges(["maybe", "maybe"], ["Verdict: Full"], ["Verdict: Full"])
        with pytest.raises(UnparseableVerdict):
            judge_objective(OBJ, [ac("g", "w", "t")], story, js)

    def test_needs_three_judges(self, story):
        with pytest.raises(ValueError):
            judge_objective(OBJ, [], story, judges(["Verdict: Full"]))

    @pytest.mark.parametrize("text,cov", [
        ("Verdict: Not", Coverage.NOT), ("Verdict: Not covered", Coverage.NOT),
        ("**Verdict:** Partially", Coverage.PARTIAL), ("Verdict: Full\n", Coverage.FULL), ("Full", None),
    ])
    def test_parse(self, text, cov):
        assert parse_coverage(text) == cov


def _verdicts(obj_id, *covs):
    return [JudgeVerdict(obj_id, f"j{i}", c) for i, c in enumerate(covs)]


class TestAccuracy:
    def objectives(self):
        return {
            "A": [GroundTruthObjective("A1", "A", "x")],
            "B": [GroundTruthObjective(f"B{i}", "B", "y") for i in range(1, 4)],
        }

    def test_case_vs_point(self):
        full = ("Full",) * 3
        vs = _verdicts("A1", *full) + _verdicts("B1", *full) + _verdicts("B2", "Full", "Partial", "Full") \
            + _verdicts("B3", "Not", "Full", "Full")
        r = accuracy_report(vs, self.objectives())
        assert r.cor_point == pytest.approx(0.5, abs=1e-9)
        assert r.cor_case == pytest.approx((1 + 1 / 3) / 2, abs=1e-9)
        assert r.hit_point == pytest.approx(3 / 4)
        assert r.cor_point <= r.hit_point and r.cor_case <= r.hit_case

    def test_saturation(self):
        vs = [v for o in ("A1", "B1", "B2", "B3") for v in _verdicts(o, "Full", "Full", "Full")]
        r = accuracy_report(vs, self.objectives())
        assert (r.hit_case, r.cor_case, r.hit_point, r.cor_point) == (1.0, 1.0, 1.0, 1.0)

    def test_one_not_blocks_both(self):
        r = accuracy_report(_verdicts("A1", "Full", "Not", "Full"), {"A": self.objectives()["A"]})
        assert r.hit_point == 0.0 and r.cor_point == 0.0

    def test_incomplete(self):
        with pytest.raises(IncompleteVerdicts):
            accuracy_report(_verdicts("A1", "Full", "Full"), {"A": self.objectives()["A"]})
        with pytest.raises(IncompleteVerdicts):
            accuracy_report(_verdicts("A1", "Full", "Full", "Full") + [JudgeVerdict("A1", "j0", "Full")],
                            {"A": self.objectives()["A"]})

    @settings(max_examples=200)
    @given(st.lists(st.lists(st.tuples(*[st.sampled_from(list(Coverage))] * 3), min_size=1, max_size=4),
                    min_size=1, max_size=4))
    def test_cor_never_exceeds_hit(self, stories):
        objectives, verdicts = {}, []
        for s, objs in enumerate(stories):
            objectives[f"S{s}"] = [GroundTruthObjective(f"S{s}O{o}", f"S{s}", "t") for o in range(len(objs))]
            for o, covs in enumerate(objs):
                verdicts += _verdicts(f"S{s}O{o}", *covs)
        r = accuracy_report(verdicts, objectives)
        assert r.cor_point <= r.hit_point and r.cor_case <= r.hit_case


class TestCompare:
    ORIGINAL = [ac("g", "w", "old")]
    POLISHED = [ac("g", "w", "new")]

    def _judges(self, prefs):
        """Script raw A/B answers so that each judge prefers ``prefs[i]`` in ('P', 'O', 'T')."""
        out = []
        for i, pref in enumerate(prefs):
            polished_slot = "A" if i % 2 else "B"
            original_slot = "B" if i % 2 else "A"
            letter = {"P": polished_slot, "O": original_slot, "T": "Tie"}[pref]
            out.append(MockProvider(f"j{i}", replies={"compare": [f"Preference: {letter}"]}))
        return out

    def test_unanimous(self, story):
        r = compare_polish(story, self.ORIGINAL, self.POLISHED, self._judges("PPP"))
        assert r.unanimous_better and r.votes == ("polished",) * 3

    def test_split(self, story):
        assert not compare_polish(story, self.ORIGINAL, self.POLISHED, self._judges("POP")).unanimous_better

    def test_ties(self, story):
        r = compare_polish(story, self.ORIGINAL, self.ORIGINAL, self._judges("TTT"))
        assert not r.unanimous_better and r.votes == ("tie",) * 3

    def test_positions_swap_by_parity(self, story):
        js = self._judges("PPP")
        compare_polish(story, self.ORIGINAL, self.POLISHED, js)
        first, second = js[0].requests[0].prompt_text, js[1].requests[0].prompt_text
        assert first.index("THEN old") < first.index("THEN new")
        assert second.index("THEN new") < second.index("THEN old")

    def test_unparseable(self, story):
        js = [MockProvider(f"j{i}", replies={"compare": ["hmm", "hmm"]}) for i in range(3)]
        with pytest.raises(UnparseablePreference):
            compare_polish(story, self.ORIGINAL, self.POLISHED, js)
