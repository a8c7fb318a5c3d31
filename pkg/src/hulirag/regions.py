"""Region evidence: detection filtering, mask handling, and local scoring.

Every image's surviving region masks are turned into per-region weights by a
soft partition of the pixel domain: each pixel distributes one unit of mass
equally among the masks that cover it (plus a small epsilon guarding empty
pixels), and a region's weight is its collected mass divided by the image
area. Disjoint masks that exactly cover the image therefore get weights that
sum to one; overlapping masks share, and uncovered pixels contribute to no
one. The local relevance of an image is the weight-averaged cosine between
the query text embedding and the region embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import (EmbeddingVector, ImageRecord, QueryRecord, RegionRecord,
                     RleMask, _parse_embedding, _parse_mask, rle_decode,
                     rle_encode)
from .errors import CorpusFormatError
from .jsonl import read_jsonl, write_jsonl
from .retrieval import cosine_similarity

CONFIDENCE_THRESHOLD = 0.3
MASK_THRESHOLD = 0.5
ALPHA_EPSILON = 1e-6
REGION_CAP = 32


@dataclass
class Detection:
    """One raw grounding result for a phrase on an image, pre-threshold."""

    phrase_key: str
    bbox: tuple[int, int, int, int]
    confidence: float
    soft_mask: np.ndarray | None = None  # floats in [0,1], image-sized
    mask: RleMask | None = None          # pre-binarized alternative
    embedding: EmbeddingVector | None = None

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"detection {self.phrase_key!r}: confidence outside [0,1]")
        if (self.soft_mask is None) == (self.mask is None):
            raise ValueError(f"detection {self.phrase_key!r}: exactly one of soft_mask/mask required")

    def binary_mask(self, threshold: float = MASK_THRESHOLD) -> RleMask:
        if self.mask is not None:
            return self.mask
        return binarize_mask(self.soft_mask, threshold)


@dataclass
class MaskedPatch:
    """Descriptor of a masked image patch: pixels are not stored, so this
    records the foreground extent instead."""

    width: int
    height: int
    foreground: int
    bbox: tuple[int, int, int, int] | None  # None when the mask is empty

    @property
    def degenerate(self) -> bool:
        return self.foreground == 0


@dataclass
class LocalScore:
    """Aggregated region-level relevance of one image for one query."""

    image_id: str
    s_local: float
    per_region: list[tuple[str, float, float]]  # (region_id, alpha, cosine)
    degenerate: bool = False

    def __post_init__(self):
        expected = sum(alpha * cos for _, alpha, cos in self.per_region)
        if abs(self.s_local - expected) > 1e-9:
            raise ValueError(
                f"image {self.image_id!r}: s_local {self.s_local} != weighted sum {expected}")

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "s_local": self.s_local,
            "degenerate": self.degenerate,
            "per_region": [[rid, alpha, cos] for rid, alpha, cos in self.per_region],
        }


def filter_detections(dets: Sequence[Detection],
                      threshold: float = CONFIDENCE_THRESHOLD) -> list[Detection]:
    """Keep detections strictly above the confidence threshold, in order."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("confidence threshold must be in [0,1]")
    return [d for d in dets if d.confidence > threshold]


def binarize_mask(soft, threshold: float = MASK_THRESHOLD) -> RleMask:
    """Threshold a soft mask: a cell is foreground iff its value >= threshold."""
    grid = np.asarray(soft, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("soft mask must be a non-empty 2-d grid")
    if grid.min() < 0.0 or grid.max() > 1.0:
        raise ValueError("soft mask values must lie in [0,1]")
    return rle_encode((grid >= threshold).astype(np.uint8))


def apply_mask(image_dims: tuple[int, int], mask: RleMask) -> MaskedPatch:
    """Describe the patch a mask cuts out of an image of (width, height)."""
    width, height = image_dims
    if (mask.width, mask.height) != (width, height):
        raise ValueError(
            f"mask is {mask.width}x{mask.height}, image is {width}x{height}")
    grid = rle_decode(mask)
    ys, xs = np.nonzero(grid)
    if xs.size == 0:
        return MaskedPatch(width, height, 0, None)
    bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    return MaskedPatch(width, height, int(xs.size), bbox)


def compute_alpha_weights(masks: Sequence[RleMask],
                          epsilon: float = ALPHA_EPSILON) -> list[float]:
    """Per-region weights from the soft partition of the pixel domain.

    For masks m_1..m_T over a W x H image, weight k is the average over all
    pixels p of m_k(p) / (sum_l m_l(p) + epsilon).
    """
    if not masks:
        raise ValueError("at least one mask is required")
    dims = (masks[0].width, masks[0].height)
    for m in masks:
        if (m.width, m.height) != dims:
            raise ValueError("all masks must share the same dimensions")
    stack = np.stack([rle_decode(m).astype(np.float64) for m in masks])
    denom = stack.sum(axis=0) + epsilon
    area = dims[0] * dims[1]
    return [float((grid / denom).sum() / area) for grid in stack]


def local_score(query_emb: EmbeddingVector,
                regions: Sequence[RegionRecord],
                image_id: str = "") -> LocalScore:
    """Weight-averaged cosine between the query and each region embedding.

    Regions must carry alpha weights. An empty region list yields a zero
    score flagged degenerate so fusion can fall back to the global score.
    """
    if not regions:
        return LocalScore(image_id=image_id, s_local=0.0, per_region=[], degenerate=True)
    per_region = []
    total = 0.0
    for region in regions:
        if region.alpha is None:
            raise ValueError(f"region {region.region_id!r} has no alpha weight")
        cos = cosine_similarity(query_emb, region.embedding)
        per_region.append((region.region_id, region.alpha, cos))
        total += region.alpha * cos
    return LocalScore(image_id=image_id, s_local=total, per_region=per_region)


def select_regions(image: ImageRecord,
                   confidence_threshold: float = CONFIDENCE_THRESHOLD,
                   region_cap: int = REGION_CAP) -> list[RegionRecord]:
    """Confidence-filter an image's regions and cap their number.

    Excess regions are dropped lowest-confidence-first (ties broken by
    region_id so runs are reproducible); survivors keep their stored order.
    """
    survivors = [r for r in image.regions if r.confidence > confidence_threshold]
    if len(survivors) > region_cap:
        keep = sorted(survivors, key=lambda r: (-r.confidence, r.region_id))[:region_cap]
        keep_ids = {r.region_id for r in keep}
        survivors = [r for r in survivors if r.region_id in keep_ids]
    return survivors


def weighted_regions(image: ImageRecord,
                     confidence_threshold: float = CONFIDENCE_THRESHOLD,
                     region_cap: int = REGION_CAP,
                     epsilon: float = ALPHA_EPSILON) -> list[RegionRecord]:
    """Surviving regions of an image with freshly computed alpha weights."""
    survivors = select_regions(image, confidence_threshold, region_cap)
    if not survivors:
        return []
    alphas = compute_alpha_weights([r.mask for r in survivors], epsilon)
    return [replace(r, alpha=a) for r, a in zip(survivors, alphas)]


def score_image(query: QueryRecord, image: ImageRecord, *,
                confidence_threshold: float = CONFIDENCE_THRESHOLD,
                region_cap: int = REGION_CAP,
                epsilon: float = ALPHA_EPSILON) -> LocalScore:
    """Full per-image local scoring: filter, weight, aggregate."""
    regions = weighted_regions(image, confidence_threshold, region_cap, epsilon)
    return local_score(query.local_text_embedding, regions, image_id=image.image_id)


# ---------------------------------------------------------------------------
# Detections file handling
# ---------------------------------------------------------------------------

def load_detections(path: str | Path) -> dict[str, list[Detection]]:
    """Read a detections file: ``{image_id, detections: [...]}`` per line.

    Each detection carries phrase_key, bbox, confidence, an embedding, and
    either a ``soft_mask`` grid or a pre-binarized ``mask``.
    """
    spath = str(path)
    out: dict[str, list[Detection]] = {}
    for line, raw in read_jsonl(path):
        image_id = raw.get("image_id")
        if not image_id:
            raise CorpusFormatError("missing image_id", spath, line)
        image_id = str(image_id)
        if image_id in out:
            raise CorpusFormatError(f"duplicate image_id {image_id!r}", spath, line)
        dets = []
        for idx, d in enumerate(raw.get("detections", [])):
            try:
                soft = None
                mask = None
                if "soft_mask" in d:
                    soft = np.asarray(d["soft_mask"], dtype=np.float64)
                elif "mask" in d:
                    mask = _parse_mask(d["mask"], path=spath, line=line)
                bbox = d["bbox"]
                emb = None
                if "embedding" in d:
                    emb = _parse_embedding(f"{image_id}/det{idx}", d["embedding"],
                                           path=spath, line=line)
                dets.append(Detection(
                    phrase_key=str(d["phrase_key"]),
                    bbox=tuple(int(v) for v in bbox),
                    confidence=float(d["confidence"]),
                    soft_mask=soft,
                    mask=mask,
                    embedding=emb,
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(
                    f"image {image_id!r} detection {idx}: {exc}", spath, line) from exc
        out[image_id] = dets
    return out


def attach_detections(images: Sequence[ImageRecord],
                      detections: Mapping[str, Sequence[Detection]],
                      *,
                      confidence_threshold: float = CONFIDENCE_THRESHOLD,
                      mask_threshold: float = MASK_THRESHOLD) -> list[ImageRecord]:
    """Turn raw detections into region records on a copy of the corpus.

    Applies the confidence filter and binarizes soft masks; images without
    detections keep whatever regions they already had. Detections lacking an
    embedding are rejected, since regions without embeddings cannot score.
    """
    known = {image.image_id for image in images}
    stray = sorted(set(detections) - known)
    if stray:
        raise ValueError(f"detections reference unknown image ids: {stray[:5]}")
    out = []
    for image in images:
        dets = detections.get(image.image_id)
        if dets is None:
            out.append(image)
            continue
        kept = filter_detections(list(dets), confidence_threshold)
        regions = []
        for idx, det in enumerate(kept):
            if det.embedding is None:
                raise ValueError(
                    f"image {image.image_id!r}: detection {det.phrase_key!r} has no embedding")
            mask = det.binary_mask(mask_threshold)
            if (mask.width, mask.height) != (image.width, image.height):
                raise ValueError(
                    f"image {image.image_id!r}: detection mask is {mask.width}x{mask.height}, "
                    f"image is {image.width}x{image.height}")
            regions.append(RegionRecord(
                region_id=f"{image.image_id}#r{idx}",
                phrase_key=det.phrase_key,
                bbox=det.bbox,
                confidence=det.confidence,
                mask=mask,
                embedding=det.embedding,
            ))
        out.append(ImageRecord(image.image_id, image.width, image.height,
                               image.global_embedding, regions))
    return out


def write_local_scores(path: str | Path, scores: Mapping[str, Sequence[LocalScore]]) -> None:
    """Persist per-query local scores, one line per query."""
    records = [
        {"query_id": qid, "scores": [s.to_json() for s in per_image]}
        for qid, per_image in scores.items()
    ]
    write_jsonl(path, records)


def load_local_scores(path: str | Path) -> dict[str, dict[str, LocalScore]]:
    out: dict[str, dict[str, LocalScore]] = {}
    for line, raw in read_jsonl(path):
        qid = str(raw["query_id"])
        per_image = {}
        for s in raw["scores"]:
            score = LocalScore(
                image_id=str(s["image_id"]),
                s_local=float(s["s_local"]),
                per_region=[(str(r), float(a), float(c)) for r, a, c in s["per_region"]],
                degenerate=bool(s["degenerate"]),
            )
            per_image[score.image_id] = score
        out[qid] = per_image
    return out
