"""Shared builders for the test suite.

Plain functions instead of fixtures: most tests want several differently
shaped records and fixture indirection just obscures that.
"""

import numpy as np

from hulirag import (
    EmbeddingVector,
    ImageRecord,
    QueryRecord,
    RegionRecord,
    rle_encode,
)


def emb(eid, values):
    return EmbeddingVector(eid, np.asarray(values, dtype=np.float64))


def unit(eid, values):
    v = np.asarray(values, dtype=np.float64)
    return EmbeddingVector(eid, v / np.linalg.norm(v))


def grid_mask(rows):
    """RleMask from a list of 0/1 rows."""
    return rle_encode(np.asarray(rows, dtype=np.int64))


def make_region(rid, mask, vec, *, phrase_key="obj#1", confidence=0.9, alpha=None):
    return RegionRecord(
        region_id=rid,
        phrase_key=phrase_key,
        bbox=(0, 0, mask.width, mask.height),
        confidence=confidence,
        mask=mask,
        embedding=emb(rid, vec),
        alpha=alpha,
    )


def make_image(iid, vec, regions=(), *, width=None, height=None):
    if regions:
        width = width or regions[0].mask.width
        height = height or regions[0].mask.height
    return ImageRecord(iid, width or 4, height or 4, emb(iid, vec), list(regions))


def make_query(qid, vec, gt, *, text="a thing on a table", gold=None, local=None):
    return QueryRecord(
        qid,
        text,
        emb(qid, vec),
        frozenset(gt),
        gold_answer=gold,
        local_embedding=None if local is None else emb(qid + ":local", local),
    )
