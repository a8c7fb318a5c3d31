"""Global shortlist retrieval: cosine scoring and exact top-K extraction.

The scan is brute-force and exact. At the corpus sizes this engine targets
that is both faster than an approximate index and usable as the ground truth
an approximate backend would later be checked against; ``ShortlistIndex`` is
the seam where such a backend would plug in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingVector, ImageRecord, QueryRecord
from .errors import DegenerateEmbeddingError, DimensionMismatchError


@dataclass
class RankedList:
    """Descending (image_id, score) entries for one query.

    Ties are broken by image_id ascending so runs are reproducible.
    """

    query_id: str
    entries: list[tuple[str, float]]

    def __post_init__(self):
        self.entries = [(str(i), float(s)) for i, s in self.entries]
        seen = set()
        for image_id, _ in self.entries:
            if image_id in seen:
                raise ValueError(f"ranking {self.query_id!r}: duplicate image_id {image_id!r}")
            seen.add(image_id)
        keys = [(-score, image_id) for image_id, score in self.entries]
        if keys != sorted(keys):
            raise ValueError(f"ranking {self.query_id!r}: entries not in (score desc, id asc) order")

    def ids(self) -> list[str]:
        return [image_id for image_id, _ in self.entries]

    def to_json(self) -> dict:
        return {"query_id": self.query_id,
                "entries": [[image_id, score] for image_id, score in self.entries]}

    @classmethod
    def from_json(cls, doc: dict) -> "RankedList":
        return cls(query_id=doc["query_id"],
                   entries=[(str(i), float(s)) for i, s in doc["entries"]])


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two embeddings, in [-1, 1].

    Refuses zero-norm inputs: a degenerate vector has no direction.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dim {a.dim} vs {b.dim} ({a.id!r} vs {b.id!r})")
    if a.degenerate or b.degenerate:
        bad = a.id if a.degenerate else b.id
        raise DegenerateEmbeddingError(f"embedding {bad!r} has zero norm")
    return float(np.dot(a.values, b.values) / (a.norm * b.norm))


class ShortlistIndex:
    """Read-only exact index over image global embeddings."""

    def __init__(self, images: list[ImageRecord]):
        if not images:
            raise ValueError("cannot index an empty corpus")
        for img in images:
            if img.global_embedding.degenerate:
                raise DegenerateEmbeddingError(
                    f"image {img.image_id!r} has a zero-norm global embedding")
        self._ids = np.array([img.image_id for img in images])
        matrix = np.stack([img.global_embedding.values for img in images])
        self._unit = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
        self._dim = matrix.shape[1]

    def search(self, query: QueryRecord, k: int) -> RankedList:
        if k < 1:
            raise ValueError("k must be >= 1")
        emb = query.text_embedding
        if emb.dim != self._dim:
            raise DimensionMismatchError(
                f"query {query.query_id!r} dim {emb.dim} vs corpus dim {self._dim}")
        if emb.degenerate:
            raise DegenerateEmbeddingError(f"query {query.query_id!r} has zero norm")
        scores = self._unit @ (emb.values / emb.norm)
        # lexsort: last key is primary, so score desc first, then id asc.
        order = np.lexsort((self._ids, -scores))[: min(k, len(self._ids))]
        return RankedList(
            query_id=query.query_id,
            entries=[(str(self._ids[i]), float(scores[i])) for i in order],
        )


def top_k(corpus: list[ImageRecord], query: QueryRecord, k: int) -> RankedList:
    """Exact top-k of the corpus by cosine similarity to the query text."""
    return ShortlistIndex(corpus).search(query, k)
