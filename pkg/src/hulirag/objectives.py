"""Pure evaluators for the training objectives.

Nothing here updates parameters. These functions recompute loss values from
exported similarity matrices and answer distributions, so an external
training loop can be audited: contrastive (InfoNCE) loss over holistic and
region-level pairs, the hybrid sampling rule that swaps a fraction of region
pairs for full-image ones, the VQA negative log-likelihood, and the squared
distance consistency penalty between full and masked visual contexts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, TypeVar

import numpy as np

DEFAULT_TEMPERATURE = 0.07
HYBRID_FRACTION = 0.10

T = TypeVar("T")


@dataclass
class ContrastiveBatch:
    """Square matrix of pairwise similarities: row i is one image-side item
    scored against every text-side item; the matched pair sits on the
    diagonal."""

    sim_matrix: np.ndarray
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        m = np.asarray(self.sim_matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"similarity matrix must be square and non-empty, got shape {m.shape}")
        if not np.isfinite(m).all():
            raise ValueError("similarity matrix has non-finite entries")
        if not (self.temperature > 0):
            raise ValueError("temperature must be > 0")
        self.sim_matrix = m

    @property
    def n(self) -> int:
        return self.sim_matrix.shape[0]

    @classmethod
    def from_json(cls, doc: dict) -> "ContrastiveBatch":
        return cls(np.asarray(doc["sim_matrix"], dtype=np.float64),
                   float(doc.get("temperature", DEFAULT_TEMPERATURE)))


@dataclass
class AnswerDistribution:
    """Probability distribution over a finite answer vocabulary."""

    probs: dict[str, float]

    def __post_init__(self):
        if not self.probs:
            raise ValueError("answer distribution must not be empty")
        total = 0.0
        for answer, p in self.probs.items():
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"p({answer!r}) = {p} outside [0,1]")
            total += p
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")

    @property
    def vocabulary(self) -> frozenset[str]:
        return frozenset(self.probs)

    @classmethod
    def from_json(cls, doc: Mapping[str, float]) -> "AnswerDistribution":
        return cls({str(k): float(v) for k, v in doc.items()})


def info_nce(batch: ContrastiveBatch) -> float:
    """Mean over rows of the negative log softmax mass on the diagonal."""
    scaled = batch.sim_matrix / batch.temperature
    # Row-wise logsumexp, shifted for stability.
    peak = scaled.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(scaled - peak).sum(axis=1))
    losses = lse - np.diagonal(scaled)
    return float(losses.mean())


def combined_contrastive_loss(global_batch: ContrastiveBatch,
                              regional_batches: Sequence[ContrastiveBatch]) -> float:
    """Global InfoNCE plus the mean of the regional InfoNCE losses."""
    total = info_nce(global_batch)
    if regional_batches:
        total += sum(info_nce(b) for b in regional_batches) / len(regional_batches)
    return total


def hybrid_sample(regional_pairs: Sequence[T], fraction: float = HYBRID_FRACTION,
                  seed: int = 0) -> list[tuple[T, bool]]:
    """Flag round(fraction * n) pairs for full-image treatment (weight 1).

    Selection is uniform without replacement under the seed. round() here is
    Python's round-half-to-even, so e.g. 5 pairs at fraction 0.1 flag 0.
    """
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("fraction must be in [0,1]")
    n = len(regional_pairs)
    k = round(fraction * n)
    chosen: set[int] = set()
    if k:
        rng = np.random.default_rng(seed)
        chosen = set(int(i) for i in rng.choice(n, size=k, replace=False))
    return [(pair, i in chosen) for i, pair in enumerate(regional_pairs)]


def vqa_loss(dist: AnswerDistribution, gold: str) -> float:
    """Negative log-likelihood of the gold answer; +inf when p(gold) is 0."""
    if gold not in dist.probs:
        raise KeyError(f"gold answer {gold!r} not in the answer vocabulary")
    p = dist.probs[gold]
    return math.inf if p == 0.0 else -math.log(p)


def consistency_loss(p_full: AnswerDistribution, p_masked: AnswerDistribution) -> float:
    """Squared Euclidean distance between two distributions on one vocabulary."""
    if p_full.vocabulary != p_masked.vocabulary:
        raise ValueError("distributions are over different vocabularies")
    return sum((p_full.probs[a] - p_masked.probs[a]) ** 2 for a in p_full.probs)


def total_ft_loss(vqa: float, cons: float) -> float:
    """Sum of the answer loss and the consistency penalty."""
    if vqa < 0 or cons < 0:
        raise ValueError("loss terms must be non-negative")
    return vqa + cons
