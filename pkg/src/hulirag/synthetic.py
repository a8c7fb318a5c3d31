"""Synthetic corpus generators for tests and benchmarks.

Embeddings are built on orthogonal axes: every image owns one basis axis and
every query another, so planted cosines are exact and orderings engineered
here survive any seed. A small shared background subspace adds realistic
jitter without threatening the planted margins.

The fusion benchmark plants four query populations:

  easy             GT leads on both the global and the local channel, but a
                   decoy image with strong region evidence and mediocre
                   global score sits in its hard-negative pool
  global_confused  a confuser image outranks GT globally; region evidence
                   still points at GT
  local_confused   a confuser's region weakly matches the query; GT leads
                   globally
  asymmetric       the confuser leads globally by a lot and locally by a
                   little, so equal-weight fusion picks it while a fit that
                   trusts the local channel more picks GT

With these, global-only and local-only each lose a dedicated population and
plain addition and multiplication lose the asymmetric one, while a
calibrated reweight model can win all four. The easy-population decoys
matter for calibration: hard negatives are drawn from the top of the global
ranking, which alone would teach the fit that a high global score signals a
negative; the decoys balance that with negatives whose local channel is the
misleading one, keeping both learned weights positive.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .corpus import (EmbeddingVector, ImageRecord, QueryRecord, RegionRecord,
                     rle_encode)

BACKGROUND_DIMS = 32
BACKGROUND_SCALE = 0.1

# Planted raw cosines per population: the GT image's (global, local) pair
# plus extra planted images (confusers/decoys) sharing the query's shortlist.
POPULATIONS = {
    "easy": {"gt": (0.75, 0.85), "extras": [(0.34, 0.80)]},
    "global_confused": {"gt": (0.55, 0.85), "extras": [(0.75, 0.30)]},
    "local_confused": {"gt": (0.80, 0.70), "extras": [(0.55, 0.74)]},
    "asymmetric": {"gt": (0.35, 0.85), "extras": [(0.78, 0.51)]},
}
POPULATION_FRACTIONS = {
    "easy": 0.45,
    "global_confused": 0.30,
    "local_confused": 0.15,
    "asymmetric": 0.10,
}


def seed_for(root_seed: int, label: str) -> int:
    """Derive an independent child seed from a root seed and a stage label."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class SyntheticBundle:
    """A generated corpus with queries and the query train/held-out split."""

    images: list[ImageRecord]
    queries: list[QueryRecord]
    train_query_ids: list[str]
    heldout_query_ids: list[str]
    detections: list[dict] = field(default_factory=list)   # raw detection docs
    answers: dict[str, str] = field(default_factory=dict)  # query_id -> predicted


class _AxisSpace:
    """Hands out orthogonal unit axes plus seeded background components."""

    def __init__(self, dim: int, n_images: int, n_queries: int, rng: np.random.Generator):
        if dim < n_images + n_queries + BACKGROUND_DIMS:
            raise ValueError(
                f"dim {dim} too small for {n_images} images + {n_queries} queries "
                f"+ {BACKGROUND_DIMS} background dims")
        self.dim = dim
        self._n_images = n_images
        self._rng = rng

    def image_axis(self, i: int) -> np.ndarray:
        v = np.zeros(self.dim)
        v[i] = 1.0
        return v

    def query_axis(self, q: int) -> np.ndarray:
        v = np.zeros(self.dim)
        v[self._n_images + q] = 1.0
        return v

    def background(self) -> np.ndarray:
        v = np.zeros(self.dim)
        raw = self._rng.normal(size=BACKGROUND_DIMS)
        v[-BACKGROUND_DIMS:] = raw / np.linalg.norm(raw)
        return v


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _half_masks(width: int, height: int):
    left = np.zeros((height, width), dtype=np.uint8)
    left[:, : width // 2] = 1
    right = np.zeros((height, width), dtype=np.uint8)
    right[:, width // 2 :] = 1
    return rle_encode(left), rle_encode(right)


def _image(space: _AxisSpace, idx: int, image_id: str, width: int, height: int,
           planted: np.ndarray | None, with_regions: bool = True) -> ImageRecord:
    """One image: its own global axis plus a left/right region pair.

    The left region carries the planted embedding when given (the evidence a
    query can find); the right one is a filler on the image's own axis.
    """
    own = space.image_axis(idx)
    glob = _unit(np.sqrt(1 - BACKGROUND_SCALE**2) * own
                 + BACKGROUND_SCALE * space.background())
    regions: list[RegionRecord] = []
    if with_regions:
        left_mask, right_mask = _half_masks(width, height)
        left_emb = planted if planted is not None else own
        regions = [
            RegionRecord(
                region_id=f"{image_id}#r0", phrase_key="object#1",
                bbox=(0, 0, width // 2, height), confidence=0.9,
                mask=left_mask,
                embedding=EmbeddingVector(f"{image_id}/r0", left_emb)),
            RegionRecord(
                region_id=f"{image_id}#r1", phrase_key="scene#1",
                bbox=(width // 2, 0, width, height), confidence=0.6,
                mask=right_mask,
                embedding=EmbeddingVector(f"{image_id}/r1", own)),
        ]
    return ImageRecord(image_id, width, height,
                       EmbeddingVector(f"{image_id}/global", glob), regions)


def _planted_region(space: _AxisSpace, image_idx: int, query_idx: int,
                    strength: float) -> np.ndarray:
    """Region embedding with an exact cosine of ``strength`` to the query axis."""
    return (strength * space.query_axis(query_idx)
            + np.sqrt(1 - strength**2) * space.image_axis(image_idx))


def _population_counts(n_queries: int) -> list[str]:
    counts = {name: int(round(frac * n_queries))
              for name, frac in POPULATION_FRACTIONS.items()}
    drift = n_queries - sum(counts.values())
    counts["easy"] += drift  # absorb rounding in the largest population
    labels = []
    for name in POPULATIONS:
        labels.extend([name] * counts[name])
    return labels


def fusion_benchmark(seed: int = 7, n_images: int = 500, n_queries: int = 160,
                     dim: int = 768, width: int = 64, height: int = 48,
                     ) -> SyntheticBundle:
    """The corpus behind the fusion-strategy ordering benchmark.

    Each query gets a dedicated GT image and, in the confused populations, a
    dedicated confuser image, so populations never interfere. Queries
    alternate into train and held-out within each population.
    """
    labels = _population_counts(n_queries)
    n_extra = sum(len(POPULATIONS[l]["extras"]) for l in labels)
    if n_images < n_queries + n_extra + 2:
        raise ValueError(f"need at least {n_queries + n_extra + 2} images")
    rng = np.random.default_rng(seed_for(seed, "corpus"))
    space = _AxisSpace(dim, n_images, n_queries, rng)

    planted: dict[int, np.ndarray] = {}   # image idx -> left-region embedding
    queries: list[QueryRecord] = []
    train: list[str] = []
    heldout: list[str] = []
    per_pop_seen: dict[str, int] = {}
    extra_next = n_queries  # planted extras take the image slots after the GTs

    for q_idx, label in enumerate(labels):
        g_gt, l_gt = POPULATIONS[label]["gt"]
        gt_idx = q_idx
        planted[gt_idx] = _planted_region(space, gt_idx, q_idx, l_gt)
        parts = [g_gt * space.image_axis(gt_idx)]
        for g_x, l_x in POPULATIONS[label]["extras"]:
            extra_idx = extra_next
            extra_next += 1
            planted[extra_idx] = _planted_region(space, extra_idx, q_idx, l_x)
            parts.append(g_x * space.image_axis(extra_idx))
        used = sum(float(np.dot(p, p)) for p in parts) + BACKGROUND_SCALE**2
        parts.append(np.sqrt(1 - used) * space.query_axis(q_idx))
        parts.append(BACKGROUND_SCALE * space.background())
        q_glob = _unit(sum(parts))
        q_loc = _unit(np.sqrt(1 - BACKGROUND_SCALE**2) * space.query_axis(q_idx)
                      + BACKGROUND_SCALE * space.background())
        query_id = f"q{q_idx:03d}"
        gt_id = f"img{gt_idx:04d}"
        queries.append(QueryRecord(
            query_id=query_id,
            text=f"which object stands beside marker {q_idx} in the plaza",
            text_embedding=EmbeddingVector(f"{query_id}/text", q_glob),
            gt_image_ids=frozenset({gt_id}),
            gold_answer=f"marker {q_idx}",
            local_embedding=EmbeddingVector(f"{query_id}/local", q_loc),
        ))
        seen = per_pop_seen.get(label, 0)
        (train if seen % 2 == 0 else heldout).append(query_id)
        per_pop_seen[label] = seen + 1

    images = []
    for i in range(n_images):
        image_id = f"img{i:04d}"
        # A couple of filler images carry no regions at all, so the
        # degenerate-image fallback is exercised inside the benchmark too.
        with_regions = not (i >= n_images - 2)
        images.append(_image(space, i, image_id, width, height,
                             planted.get(i), with_regions))
    return SyntheticBundle(images, queries, train, heldout)


def smoke_bundle(seed: int = 11, dim: int = 64, width: int = 16, height: int = 12,
                 ) -> SyntheticBundle:
    """Small twelve-image fixture for pipeline smoke and determinism tests.

    Ships a detections file (soft masks, one below the confidence cut) and a
    toy answers file so every pipeline stage has something to chew on.
    """
    bundle = fusion_benchmark(seed=seed, n_images=14, n_queries=6, dim=dim,
                              width=width, height=height)
    # One query with two acceptable GT images exercises the any-match rule.
    q = bundle.queries[0]
    second = "img0008"
    bundle.queries[0] = QueryRecord(
        query_id=q.query_id, text=q.text, text_embedding=q.text_embedding,
        gt_image_ids=frozenset(q.gt_image_ids | {second}),
        gold_answer=q.gold_answer, local_embedding=q.local_embedding)

    rng = np.random.default_rng(seed_for(seed, "detections"))
    for image in bundle.images[:3]:
        soft = np.zeros((height, width))
        soft[:, : width // 2] = 0.9
        soft[0, 0] = 0.45  # falls under the mask threshold after binarization
        weak = np.full((height, width), 0.1)
        emb = image.regions[0].embedding.values
        bundle.detections.append({
            "image_id": image.image_id,
            "detections": [
                {"phrase_key": "object#1", "bbox": [0, 0, width // 2, height],
                 "confidence": 0.85, "soft_mask": soft.tolist(),
                 "embedding": [float(v) for v in emb]},
                {"phrase_key": "backdrop#1", "bbox": [0, 0, width, height],
                 "confidence": 0.2, "soft_mask": weak.tolist(),
                 "embedding": [float(v) for v in rng.normal(size=dim)]},
            ],
        })
    for i, q in enumerate(bundle.queries):
        if i % 3 == 2:
            bundle.answers[q.query_id] = "something else entirely"
        else:
            bundle.answers[q.query_id] = f"The {q.gold_answer}."
    return bundle
