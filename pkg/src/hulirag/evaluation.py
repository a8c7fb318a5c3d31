"""Retrieval and answer-quality metrics, plus the judging protocol.

Retrieval is scored by Recall@K with an any-match rule over possibly several
ground-truth images. Answers are scored by exact match and token-level F1
after a shared normalization (lowercase, punctuation stripped, articles
removed, whitespace collapsed), so trivially different surface forms compare
equal. The judging side renders a fixed prompt template asking an external
model for an integer rating from 1 to 100 in a bracketed format, parses that
rating back out, and separately computes a four-component weighted rubric.
"""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import RatingParseError
from .retrieval import RankedList

RUBRIC_WEIGHTS = (0.35, 0.35, 0.20, 0.10)  # helpfulness, accuracy, depth, clarity
RUBRIC_CAP = 10.0

JUDGE_PROMPT_TEMPLATE = (
    "Please act as an impartial judge and evaluate the quality of the response "
    "provided by an AI assistant to the user question displayed below. Your "
    "evaluation should consider factors such as the helpfulness, relevance, "
    "accuracy, depth, creativity, and level of detail of the response.\n"
    "Begin your evaluation by providing a short explanation. Be as objective as "
    "possible. After providing your explanation, please rate the response on a "
    "scale of 1 to 100, where only integer scores are allowed, by strictly "
    'following this format: "Rating: [[X]]", for example: "Rating: [[85]]".\n'
    "\n"
    "[Question]\n"
    "{question}\n"
    "[The Start of Assistant's Answer]\n"
    "{answer}\n"
    "[The End of Assistant's Answer]"
)

_RATING_RE = re.compile(r"Rating:\s*\[\[(-?\d+)\]\]")
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass
class EvalReport:
    """Aggregated metric values for one evaluation run."""

    recall_at: dict[int, float] = field(default_factory=dict)
    em: float | None = None
    f1: float | None = None
    judge_scores: list[int] | None = None
    rubric_scores: list[tuple[float, float, float, float]] | None = None
    n_queries: int = 0

    def __post_init__(self):
        ks = sorted(self.recall_at)
        for k, value in self.recall_at.items():
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"recall@{k} = {value} outside [0,1]")
        for lo, hi in zip(ks, ks[1:]):
            if self.recall_at[lo] > self.recall_at[hi] + 1e-12:
                raise ValueError(
                    f"recall@{lo} = {self.recall_at[lo]} exceeds recall@{hi} = {self.recall_at[hi]}")
        for name, value in (("em", self.em), ("f1", self.f1)):
            if value is not None and not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} = {value} outside [0,1]")

    def to_json(self) -> dict:
        doc: dict = {"recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
                     "n_queries": self.n_queries}
        if self.em is not None:
            doc["em"] = self.em
        if self.f1 is not None:
            doc["f1"] = self.f1
        if self.judge_scores is not None:
            doc["judge_scores"] = self.judge_scores
        if self.rubric_scores is not None:
            doc["rubric_scores"] = [list(t) for t in self.rubric_scores]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "EvalReport":
        return cls(
            recall_at={int(k): float(v) for k, v in doc.get("recall_at", {}).items()},
            em=doc.get("em"),
            f1=doc.get("f1"),
            judge_scores=doc.get("judge_scores"),
            rubric_scores=[tuple(t) for t in doc["rubric_scores"]] if "rubric_scores" in doc else None,
            n_queries=int(doc.get("n_queries", 0)),
        )


def recall_at_k(ranked: RankedList, gt_ids: frozenset[str] | set[str], k: int) -> int:
    """1 iff any ground-truth image appears in the first k entries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranked.entries:
        raise ValueError(f"query {ranked.query_id!r} has an empty ranking")
    return int(any(iid in gt_ids for iid in ranked.ids()[:k]))


def mean_recall(rankings: Sequence[RankedList],
                gt_map: Mapping[str, frozenset[str] | set[str]], k: int) -> float:
    """Mean of the per-query recall indicator over all rankings."""
    if not rankings:
        raise ValueError("no rankings to score")
    return sum(recall_at_k(r, gt_map[r.query_id], k) for r in rankings) / len(rankings)


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, drop articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def token_f1(pred: str, gold: str) -> float:
    """Harmonic mean of token-multiset precision and recall.

    Both answers empty after normalization counts as full credit; exactly
    one empty counts as zero.
    """
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = Counter(pred_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def render_judge_prompt(question: str, answer: str) -> str:
    """Fill the judging template; the answer may span lines and is kept
    verbatim between its delimiters."""
    if not question:
        raise ValueError("question must be non-empty")
    return JUDGE_PROMPT_TEMPLATE.format(question=question, answer=answer)


@dataclass(frozen=True)
class JudgeRequest:
    question: str
    answer: str
    rendered_prompt: str

    @classmethod
    def build(cls, question: str, answer: str) -> "JudgeRequest":
        return cls(question, answer, render_judge_prompt(question, answer))


def parse_rating(judge_output: str) -> int:
    """Integer from the last ``Rating: [[X]]`` occurrence, in [1, 100]."""
    matches = _RATING_RE.findall(judge_output)
    if not matches:
        raise RatingParseError(f"no rating pattern in judge output: {judge_output[:80]!r}")
    value = int(matches[-1])
    if not (1 <= value <= 100):
        raise RatingParseError(f"rating {value} outside [1, 100]")
    return value


def rubric_score(h: float, a: float, d: float, c: float, bonus: float = 0.0) -> float:
    """Weighted rubric: 0.35 h + 0.35 a + 0.20 d + 0.10 c, plus any bonus,
    capped at 10.0."""
    for name, v in (("helpfulness", h), ("accuracy", a), ("depth", d), ("clarity", c)):
        if not (0.0 <= v <= 10.0):
            raise ValueError(f"{name} = {v} outside [0, 10]")
    if bonus < 0.0:
        raise ValueError("bonus must be non-negative")
    w_h, w_a, w_d, w_c = RUBRIC_WEIGHTS
    return min(w_h * h + w_a * a + w_d * d + w_c * c + bonus, RUBRIC_CAP)


def build_report(rankings: Sequence[RankedList],
                 gt_map: Mapping[str, frozenset[str] | set[str]],
                 ks: Sequence[int],
                 answers: Mapping[str, tuple[str, str]] | None = None,
                 ) -> EvalReport:
    """Score rankings at each K and, when (pred, gold) answer pairs are
    given, mean EM and token F1 over them."""
    report = EvalReport(
        recall_at={k: mean_recall(rankings, gt_map, k) for k in ks},
        n_queries=len(rankings),
    )
    if answers:
        pairs = list(answers.values())
        report.em = sum(exact_match(p, g) for p, g in pairs) / len(pairs)
        report.f1 = sum(token_f1(p, g) for p, g in pairs) / len(pairs)
    return report
