"""Data model and file I/O for corpora, queries, and masks.

File formats are line-delimited JSON (one record per line, UTF-8):

* corpus:  ``{image_id, width, height, embedding, regions: [...]}`` where each
  region is ``{region_id, phrase_key, bbox, confidence, mask: {width, height,
  runs}, embedding, alpha?}``.
* queries: ``{query_id, text, embedding, gt_image_ids, gold_answer?,
  local_embedding?}``.

Embeddings are stored as 32-bit floats in files and widened to 64-bit for all
internal math. Masks are stored run-length encoded: alternating run lengths of
0s and 1s over the row-major scan, always starting with the 0-run (which may
be empty only when immediately followed by a 1-run).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusFormatError
from .jsonl import read_jsonl, write_jsonl


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingVector:
    """A fixed-dimension real vector for an image, region, or query text.

    ``degenerate`` marks zero-norm vectors: they load fine but cosine scoring
    refuses them, so the failure happens at the use site with context.
    """

    id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError(f"embedding {self.id!r} must be a non-empty 1-d vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"embedding {self.id!r} contains non-finite values")

    @property
    def dim(self) -> int:
        return int(self.values.size)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    @property
    def degenerate(self) -> bool:
        return self.norm == 0.0

    def file_values(self) -> list[float]:
        """Values rounded through float32, the on-disk precision."""
        return [float(v) for v in self.values.astype(np.float32)]


def _parse_embedding(owner_id: str, raw, *, path=None, line=None) -> EmbeddingVector:
    if not isinstance(raw, list) or not raw:
        raise CorpusFormatError(f"embedding of {owner_id!r} must be a non-empty array", path, line)
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise CorpusFormatError(f"embedding of {owner_id!r} has non-numeric entries", path, line) from exc
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise CorpusFormatError(f"embedding of {owner_id!r} must be a flat array of finite numbers", path, line)
    return EmbeddingVector(owner_id, arr)


# ---------------------------------------------------------------------------
# RLE masks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RleMask:
    """Run-length encoded binary mask over a row-major width x height grid."""

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("mask dimensions must be positive")
        runs = tuple(int(r) for r in self.runs)
        object.__setattr__(self, "runs", runs)
        if not runs:
            raise ValueError("mask runs must be non-empty")
        if any(r < 0 for r in runs):
            raise ValueError("mask runs must be non-negative")
        if any(r == 0 for r in runs[1:]):
            raise ValueError("zero-length run after the first")
        if runs[0] == 0 and len(runs) < 2:
            raise ValueError("a leading empty 0-run must be followed by a 1-run")
        if sum(runs) != self.width * self.height:
            raise ValueError(
                f"run sum {sum(runs)} != width*height {self.width * self.height}"
            )

    @property
    def foreground(self) -> int:
        return sum(self.runs[1::2])

    def to_json(self) -> dict:
        return {"width": self.width, "height": self.height, "runs": list(self.runs)}


def rle_encode(mask) -> RleMask:
    """Encode a rectangular binary grid as an RleMask.

    Round-trips exactly: ``rle_decode(rle_encode(m)) == m``.
    """
    grid = np.asarray(mask)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("mask grid must be a non-empty 2-d array")
    if not np.isin(grid, (0, 1)).all():
        raise ValueError("mask grid must be binary")
    flat = grid.astype(np.uint8).ravel()
    height, width = grid.shape
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    lengths = (ends - starts).tolist()
    runs = lengths if flat[0] == 0 else [0] + lengths
    return RleMask(width=width, height=height, runs=tuple(runs))


def rle_decode(mask: RleMask) -> np.ndarray:
    """Expand an RleMask to a height x width uint8 grid."""
    values = np.zeros(len(mask.runs), dtype=np.uint8)
    values[1::2] = 1
    flat = np.repeat(values, np.asarray(mask.runs, dtype=np.int64))
    return flat.reshape(mask.height, mask.width)


def _parse_mask(raw, *, path=None, line=None) -> RleMask:
    if not isinstance(raw, dict):
        raise CorpusFormatError("mask must be an object with width/height/runs", path, line)
    try:
        return RleMask(
            width=int(raw["width"]), height=int(raw["height"]),
            runs=tuple(int(r) for r in raw["runs"]),
        )
    except KeyError as exc:
        raise CorpusFormatError(f"mask missing key {exc}", path, line) from exc
    except (TypeError, ValueError) as exc:
        raise CorpusFormatError(f"malformed mask: {exc}", path, line) from exc


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class RegionRecord:
    """A grounded phrase region inside one image."""

    region_id: str
    phrase_key: str
    bbox: tuple[int, int, int, int]
    confidence: float
    mask: RleMask
    embedding: EmbeddingVector
    alpha: float | None = None  # filled by the region-evidence stage

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"region {self.region_id!r}: bbox must satisfy x0<x1 and y0<y1")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"region {self.region_id!r}: confidence outside [0,1]")
        if self.alpha is not None and not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"region {self.region_id!r}: alpha outside [0,1]")

    def to_json(self) -> dict:
        doc = {
            "region_id": self.region_id,
            "phrase_key": self.phrase_key,
            "bbox": list(self.bbox),
            "confidence": self.confidence,
            "mask": self.mask.to_json(),
            "embedding": self.embedding.file_values(),
        }
        if self.alpha is not None:
            doc["alpha"] = self.alpha
        return doc


@dataclass
class ImageRecord:
    """A corpus image: global embedding, pixel dimensions, attached regions."""

    image_id: str
    width: int
    height: int
    global_embedding: EmbeddingVector
    regions: list[RegionRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.image_id!r}: dimensions must be positive")
        seen = set()
        for region in self.regions:
            if region.region_id in seen:
                raise ValueError(f"image {self.image_id!r}: duplicate region id {region.region_id!r}")
            seen.add(region.region_id)
            if region.mask.width != self.width or region.mask.height != self.height:
                raise ValueError(
                    f"image {self.image_id!r}: region {region.region_id!r} mask is "
                    f"{region.mask.width}x{region.mask.height}, image is {self.width}x{self.height}"
                )

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "embedding": self.global_embedding.file_values(),
            "regions": [r.to_json() for r in self.regions],
        }


@dataclass
class QueryRecord:
    """One query: text, its embedding(s), ground-truth image ids, optional gold answer."""

    query_id: str
    text: str
    text_embedding: EmbeddingVector
    gt_image_ids: frozenset[str]
    gold_answer: str | None = None
    # The local scoring stage may use a different text encoder than the global
    # one; when absent it falls back to text_embedding.
    local_embedding: EmbeddingVector | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"query {self.query_id!r}: text must be non-empty")
        if not self.gt_image_ids:
            raise ValueError(f"query {self.query_id!r}: gt_image_ids must be non-empty")
        self.gt_image_ids = frozenset(self.gt_image_ids)
        if self.local_embedding is not None and self.local_embedding.dim != self.text_embedding.dim:
            raise ValueError(f"query {self.query_id!r}: local embedding dim differs from text embedding")

    @property
    def local_text_embedding(self) -> EmbeddingVector:
        return self.local_embedding if self.local_embedding is not None else self.text_embedding

    def to_json(self) -> dict:
        doc = {
            "query_id": self.query_id,
            "text": self.text,
            "embedding": self.text_embedding.file_values(),
            "gt_image_ids": sorted(self.gt_image_ids),
        }
        if self.gold_answer is not None:
            doc["gold_answer"] = self.gold_answer
        if self.local_embedding is not None:
            doc["local_embedding"] = self.local_embedding.file_values()
        return doc


# ---------------------------------------------------------------------------
# Loading / saving
# ---------------------------------------------------------------------------

def _require(raw: dict, key: str, path, line):
    if key not in raw:
        raise CorpusFormatError(f"missing key {key!r}", path, line)
    return raw[key]


def _parse_region(raw, image_id: str, *, path, line) -> RegionRecord:
    if not isinstance(raw, dict):
        raise CorpusFormatError(f"image {image_id!r}: region entry is not an object", path, line)
    region_id = str(_require(raw, "region_id", path, line))
    bbox_raw = _require(raw, "bbox", path, line)
    if not (isinstance(bbox_raw, list) and len(bbox_raw) == 4):
        raise CorpusFormatError(f"region {region_id!r}: bbox must be [x0,y0,x1,y1]", path, line)
    try:
        return RegionRecord(
            region_id=region_id,
            phrase_key=str(_require(raw, "phrase_key", path, line)),
            bbox=tuple(int(v) for v in bbox_raw),
            confidence=float(_require(raw, "confidence", path, line)),
            mask=_parse_mask(_require(raw, "mask", path, line), path=path, line=line),
            embedding=_parse_embedding(region_id, _require(raw, "embedding", path, line), path=path, line=line),
            alpha=float(raw["alpha"]) if "alpha" in raw else None,
        )
    except ValueError as exc:
        raise CorpusFormatError(str(exc), path, line) from exc


def load_corpus(path: str | Path) -> list[ImageRecord]:
    """Load and validate a corpus file.

    Rejects duplicate image ids, embedding dimension drift, malformed masks,
    and out-of-range fields, reporting the offending line number.
    """
    images: list[ImageRecord] = []
    seen_ids: set[str] = set()
    dim: int | None = None
    spath = str(path)
    for line, raw in read_jsonl(path):
        image_id = str(_require(raw, "image_id", spath, line))
        if image_id in seen_ids:
            raise CorpusFormatError(f"duplicate image_id {image_id!r}", spath, line)
        seen_ids.add(image_id)
        try:
            width = int(_require(raw, "width", spath, line))
            height = int(_require(raw, "height", spath, line))
        except (TypeError, ValueError) as exc:
            raise CorpusFormatError(f"image {image_id!r}: non-integer dimensions", spath, line) from exc
        embedding = _parse_embedding(image_id, _require(raw, "embedding", spath, line), path=spath, line=line)
        if dim is None:
            dim = embedding.dim
        regions_raw = raw.get("regions", [])
        if not isinstance(regions_raw, list):
            raise CorpusFormatError(f"image {image_id!r}: regions must be an array", spath, line)
        regions = [_parse_region(r, image_id, path=spath, line=line) for r in regions_raw]
        for region in regions:
            if region.embedding.dim != dim:
                raise CorpusFormatError(
                    f"region {region.region_id!r} has dim {region.embedding.dim}, corpus dim is {dim}",
                    spath, line,
                )
        if embedding.dim != dim:
            raise CorpusFormatError(
                f"image {image_id!r} has dim {embedding.dim}, corpus dim is {dim}", spath, line
            )
        try:
            images.append(ImageRecord(image_id, width, height, embedding, regions))
        except ValueError as exc:
            raise CorpusFormatError(str(exc), spath, line) from exc
    return images


def save_corpus(path: str | Path, images: Iterable[ImageRecord]) -> None:
    write_jsonl(path, images, to_json=lambda img: img.to_json())


def load_queries(path: str | Path, *, expected_dim: int | None = None) -> list[QueryRecord]:
    """Load and validate a query file.

    When ``expected_dim`` is given (usually the corpus dim), every query
    embedding must match it.
    """
    queries: list[QueryRecord] = []
    seen: set[str] = set()
    dim = expected_dim
    spath = str(path)
    for line, raw in read_jsonl(path):
        query_id = str(_require(raw, "query_id", spath, line))
        if query_id in seen:
            raise CorpusFormatError(f"duplicate query_id {query_id!r}", spath, line)
        seen.add(query_id)
        embedding = _parse_embedding(query_id, _require(raw, "embedding", spath, line), path=spath, line=line)
        if dim is None:
            dim = embedding.dim
        if embedding.dim != dim:
            raise CorpusFormatError(
                f"query {query_id!r} has dim {embedding.dim}, expected {dim}", spath, line
            )
        local = None
        if "local_embedding" in raw:
            local = _parse_embedding(query_id, raw["local_embedding"], path=spath, line=line)
        gt_raw = _require(raw, "gt_image_ids", spath, line)
        if not isinstance(gt_raw, list) or not gt_raw:
            raise CorpusFormatError(f"query {query_id!r}: gt_image_ids must be a non-empty array", spath, line)
        try:
            queries.append(QueryRecord(
                query_id=query_id,
                text=str(_require(raw, "text", spath, line)),
                text_embedding=embedding,
                gt_image_ids=frozenset(str(g) for g in gt_raw),
                gold_answer=raw.get("gold_answer"),
                local_embedding=local,
            ))
        except ValueError as exc:
            raise CorpusFormatError(str(exc), spath, line) from exc
    return queries


def save_queries(path: str | Path, queries: Iterable[QueryRecord]) -> None:
    write_jsonl(path, queries, to_json=lambda q: q.to_json())


def corpus_dim(images: Sequence[ImageRecord]) -> int:
    if not images:
        raise ValueError("empty corpus has no dimensionality")
    return images[0].global_embedding.dim
