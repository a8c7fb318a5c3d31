"""Metrics, answer normalization, judge prompt protocol, and rubric."""

import re
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hulirag import (
    EvalReport,
    JudgeRequest,
    RankedList,
    RatingParseError,
    build_report,
    exact_match,
    mean_recall,
    normalize_answer,
    parse_rating,
    recall_at_k,
    render_judge_prompt,
    rubric_score,
    token_f1,
)
from hulirag.evaluation import JUDGE_PROMPT_TEMPLATE


def normalize_oracle(text):
    """Independent normalization: lowercase, drop punctuation chars one by
    one, remove standalone articles, collapse whitespace."""
    out = []
    for ch in text.lower():
        if ch.isalnum() or ch.isspace():
            out.append(ch)
    words = [w for w in "".join(out).split() if w not in ("a", "an", "the")]
    return " ".join(words)


def f1_oracle(pred, gold):
    """Token-multiset F1 computed with explicit counting loops."""
    p_tokens = normalize_oracle(pred).split()
    g_tokens = normalize_oracle(gold).split()
    if not p_tokens and not g_tokens:
        return 1.0
    if not p_tokens or not g_tokens:
        return 0.0
    overlap = 0
    remaining = list(g_tokens)
    for tok in p_tokens:
        if tok in remaining:
            remaining.remove(tok)
            overlap += 1
    if overlap == 0:
        return 0.0
    precision = overlap / len(p_tokens)
    recall = overlap / len(g_tokens)
    return 2 * precision * recall / (precision + recall)


# Realistic QA answer pairs: (prediction, gold). Mix of exact hits, partial
# overlaps, and flat misses, the shapes a retrieval-backed VQA system
# actually produces.
ANSWER_PAIRS = [
    ("Phone booths", "Phone booths."),
    ("Street signs", "Phone booths."),
    ("Bus stops", "Phone booths."),
    ("A shop sign and a banner.", "A lantern."),
    ("A light fixture or chandelier.", "A lantern."),
    ("A lantern.", "A lantern."),
    ("Jerseys and sports bras", "T-shirts and tank tops"),
    ("Singlets and vests", "T-shirts and tank tops"),
    ("T-shirts and tank tops", "T-shirts and tank tops"),
    ("Ponce Cathedral", "St Georges Church Organ"),
    ("St Georges Church Organ", "St Georges Church Organ"),
    ("3", "3"),
    ("4", "3"),
    ("zipped", "unzipped"),
    ("His hands", "his hands"),
    ("Drumsticks", "his hands"),
    ("His arms", "his hands"),
    ("soccer", "soccer"),
    ("basketball", "soccer"),
    ("volleyball", "soccer"),
]


class TestNormalizeAnswer:
    def test_case_and_punctuation(self):
        assert normalize_answer("Phone booths.") == "phone booths"

    def test_article_removal(self):
        assert normalize_answer("the red car") == "red car"

    def test_composed_rules(self):
        assert normalize_answer("  A   lantern ") == "lantern"

    def test_article_inside_word_kept(self):
        # "an" must be removed only as a standalone token
        assert normalize_answer("analog antenna") == "analog antenna"

    def test_empty(self):
        assert normalize_answer("") == ""
        assert normalize_answer("the a an") == ""

    def test_agrees_with_oracle_on_pairs(self):
        for pred, gold in ANSWER_PAIRS:
            assert normalize_answer(pred) == normalize_oracle(pred)
            assert normalize_answer(gold) == normalize_oracle(gold)


class TestExactMatch:
    def test_identical(self):
        assert exact_match("3", "3") == 1

    def test_normalized_match(self):
        assert exact_match("Phone booths", "phone booths.") == 1

    def test_miss(self):
        assert exact_match("street signs", "phone booths") == 0

    def test_em_implies_f1(self):
        for pred, gold in ANSWER_PAIRS:
            if exact_match(pred, gold):
                assert token_f1(pred, gold) == pytest.approx(1.0)


class TestTokenF1:
    def test_identical(self):
        assert token_f1("a lantern", "a lantern") == pytest.approx(1.0)

    def test_partial_overlap(self):
        # pred {x, y}, gold {x, y, z, w}: P=1, R=0.5
        assert token_f1("red car", "red car blue truck") == pytest.approx(2 / 3)

    def test_disjoint(self):
        assert token_f1("street signs", "phone booths") == 0.0

    def test_both_empty(self):
        assert token_f1("the", "a") == 1.0

    def test_one_empty(self):
        assert token_f1("the", "phone") == 0.0
        assert token_f1("phone", "an") == 0.0

    def test_multiset_counting(self):
        # repeated tokens count once per occurrence, not as a set
        assert token_f1("dog dog cat", "dog cat cat") == pytest.approx(2 / 3)

    def test_symmetric(self):
        for pred, gold in ANSWER_PAIRS:
            assert token_f1(pred, gold) == pytest.approx(token_f1(gold, pred))

    def test_agrees_with_oracle_on_pairs(self):
        for pred, gold in ANSWER_PAIRS:
            assert token_f1(pred, gold) == pytest.approx(f1_oracle(pred, gold), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet="abc .,!AB-'", max_size=25),
           st.text(alphabet="abc .,!AB-'", max_size=25))
    def test_agrees_with_oracle_on_random_text(self, pred, gold):
        assert token_f1(pred, gold) == pytest.approx(f1_oracle(pred, gold), abs=1e-12)


class TestRecall:
    def _ranking(self, ids):
        return RankedList("q", [(iid, 1.0 - 0.01 * i) for i, iid in enumerate(ids)])

    def test_hit_at_one(self):
        assert recall_at_k(self._ranking(["GT", "B"]), {"GT"}, 1) == 1

    def test_positional(self):
        r = self._ranking(["A", "B", "GT"])
        assert recall_at_k(r, {"GT"}, 2) == 0
        assert recall_at_k(r, {"GT"}, 5) == 1

    def test_any_match(self):
        r = self._ranking(["A", "G2", "B"])
        assert recall_at_k(r, {"G1", "G2"}, 2) == 1

    def test_k_validated(self):
        with pytest.raises(ValueError):
            recall_at_k(self._ranking(["A"]), {"A"}, 0)

    def test_empty_ranking_rejected(self):
        with pytest.raises(ValueError):
            recall_at_k(RankedList("q", []), {"A"}, 1)

    def test_mean_recall(self):
        rs = [self._ranking(["GT", "B"]), self._ranking(["B", "GT"])]
        gt = {"q": frozenset({"GT"})}
        got = mean_recall(rs, {"q": gt["q"]}, 1)
        assert got == pytest.approx(0.5)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 2**32 - 1))
    def test_monotone_in_k(self, n, seed):
        import numpy as np
        rng = np.random.default_rng(seed)
        ids = [f"img{i}" for i in range(n)]
        rng.shuffle(ids)
        ranking = self._ranking(ids)
        gt = {f"img{int(rng.integers(n))}"}
        values = [recall_at_k(ranking, gt, k) for k in range(1, n + 1)]
        assert all(values[i] <= values[i + 1] for i in range(len(values) - 1))
        assert values[-1] == 1


class TestJudgePrompt:
    def test_contains_protocol_markers(self):
        prompt = render_judge_prompt("How many flags?", "Three.")
        assert "impartial judge" in prompt
        assert "on a scale of 1 to 100" in prompt
        assert '"Rating: [[X]]"' in prompt
        assert "[Question]\nHow many flags?" in prompt
        assert "[The Start of Assistant's Answer]\nThree.\n[The End of Assistant's Answer]" in prompt

    def test_sections_ordered(self):
        prompt = render_judge_prompt("Q?", "A.")
        q_pos = prompt.index("[Question]")
        start = prompt.index("[The Start of Assistant's Answer]")
        end = prompt.index("[The End of Assistant's Answer]")
        assert q_pos < start < end

    def test_multiline_answer_preserved(self):
        prompt = render_judge_prompt("Q?", "line one\nline two")
        assert "line one\nline two" in prompt

    def test_empty_answer_allowed(self):
        prompt = render_judge_prompt("Q?", "")
        assert "[The Start of Assistant's Answer]\n\n[The End of Assistant's Answer]" in prompt

    def test_empty_question_rejected(self):
        with pytest.raises(ValueError):
            render_judge_prompt("", "answer")

    def test_template_has_exactly_two_slots(self):
        assert JUDGE_PROMPT_TEMPLATE.count("{question}") == 1
        assert JUDGE_PROMPT_TEMPLATE.count("{answer}") == 1

    def test_judge_request_builder(self):
        req = JudgeRequest.build("Q?", "A.")
        assert req.question == "Q?"
        assert req.answer == "A."
        assert req.rendered_prompt == render_judge_prompt("Q?", "A.")


class TestParseRating:
    def test_basic(self):
        assert parse_rating("The answer is helpful. Rating: [[85]]") == 85

    def test_last_occurrence_wins(self):
        assert parse_rating("Rating: [[5]] then Rating: [[90]]") == 90

    def test_round_trip_full_range(self):
        for n in range(1, 101):
            text = render_judge_prompt("q", "a") + f"\nRating: [[{n}]]"
            assert parse_rating(text) == n

    def test_missing_pattern(self):
        with pytest.raises(RatingParseError):
            parse_rating("no rating here")

    def test_out_of_range(self):
        with pytest.raises(RatingParseError):
            parse_rating("Rating: [[0]]")
        with pytest.raises(RatingParseError):
            parse_rating("Rating: [[101]]")

    def test_whitespace_tolerated(self):
        assert parse_rating("Rating:   [[42]]") == 42

    def test_malformed_brackets_rejected(self):
        with pytest.raises(RatingParseError):
            parse_rating("Rating: [85]")


class TestRubric:
    def test_reference_example(self):
        assert rubric_score(8.50, 9.25, 7.00, 9.00) == pytest.approx(8.5125)

    def test_all_ten(self):
        assert rubric_score(10, 10, 10, 10) == pytest.approx(10.0)

    def test_all_zero(self):
        assert rubric_score(0, 0, 0, 0) == 0.0

    def test_bonus_added_and_capped(self):
        assert rubric_score(8.50, 9.25, 7.00, 9.00, bonus=0.5) == pytest.approx(9.0125)
        assert rubric_score(10, 10, 10, 10, bonus=1.3) == 10.0

    def test_component_range_validated(self):
        with pytest.raises(ValueError):
            rubric_score(11, 5, 5, 5)
        with pytest.raises(ValueError):
            rubric_score(5, -1, 5, 5)
        with pytest.raises(ValueError):
            rubric_score(5, 5, 5, 5, bonus=-0.5)

    def test_stays_in_range(self):
        import numpy as np
        rng = np.random.default_rng(4)
        for _ in range(50):
            h, a, d, c = rng.uniform(0, 10, size=4)
            assert 0.0 <= rubric_score(h, a, d, c) <= 10.0


class TestEvalReport:
    def test_monotonicity_enforced(self):
        with pytest.raises(ValueError):
            EvalReport(recall_at={1: 0.9, 5: 0.4})

    def test_range_enforced(self):
        with pytest.raises(ValueError):
            EvalReport(recall_at={1: 1.2})
        with pytest.raises(ValueError):
            EvalReport(recall_at={1: 0.5}, em=-0.1)

    def test_json_roundtrip(self):
        rep = EvalReport(recall_at={1: 0.5, 5: 0.75}, em=0.5, f1=0.625, n_queries=4)
        got = EvalReport.from_json(rep.to_json())
        assert got == rep

    def test_build_report(self):
        rankings = [
            RankedList("q1", [("GT1", 0.9), ("B", 0.1)]),
            RankedList("q2", [("B", 0.9), ("GT2", 0.1)]),
        ]
        gt = {"q1": frozenset({"GT1"}), "q2": frozenset({"GT2"})}
        answers = {"q1": ("phone booths", "Phone booths."), "q2": ("red", "blue")}
        rep = build_report(rankings, gt, ks=(1, 2), answers=answers)
        assert rep.recall_at[1] == pytest.approx(0.5)
        assert rep.recall_at[2] == pytest.approx(1.0)
        assert rep.em == pytest.approx(0.5)
        assert rep.f1 == pytest.approx(0.5)
        assert rep.n_queries == 2

    def test_build_report_without_answers(self):
        rankings = [RankedList("q1", [("GT1", 0.9)])]
        rep = build_report(rankings, {"q1": frozenset({"GT1"})}, ks=(1,))
        assert rep.em is None and rep.f1 is None
