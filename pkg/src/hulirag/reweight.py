"""Score fusion and calibration of the three-scalar reweight model.

Global and local similarities live on different scales, so both columns are
min-max normalized to [0,1] per query over its shortlist before any fusion
(a constant column maps to 0.5, the uninformative midpoint). Three fusion
strategies are supported: plain addition, plain multiplication, and the
learnable model w_g * g + w_l * l + b whose parameters are fit by full-batch
gradient descent on a squared loss that pushes ground-truth pairs toward 1
and hard negatives toward 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import CalibrationDivergedError
from .regions import LocalScore
from .retrieval import RankedList

STRATEGIES = ("global", "local", "add", "multiply", "reweight")

DEFAULT_LEARNING_RATE = 0.05
DEFAULT_MAX_EPOCHS = 500
DEFAULT_TOLERANCE = 1e-6
DEFAULT_INIT = (0.5, 0.5, 0.0)
HARD_NEGATIVE_POOL = 5

# Local score substituted for images with no usable regions when building
# calibration examples: the midpoint, same convention as a constant column.
DEGENERATE_LOCAL = 0.5


@dataclass(frozen=True)
class ReweightParams:
    w_g: float
    w_l: float
    b: float

    def __post_init__(self):
        for name, v in (("w_g", self.w_g), ("w_l", self.w_l), ("b", self.b)):
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")

    def to_json(self) -> dict:
        return {"w_g": self.w_g, "w_l": self.w_l, "b": self.b}

    @classmethod
    def from_json(cls, doc: dict) -> "ReweightParams":
        return cls(float(doc["w_g"]), float(doc["w_l"]), float(doc["b"]))


@dataclass(frozen=True)
class CalibrationExample:
    """One training pair: the GT image's scores and a hard negative's.

    Scores are the normalized (s_global, s_local) tuples, both in [0,1].
    """

    query_id: str
    pos: tuple[float, float]
    neg: tuple[float, float]

    def __post_init__(self):
        for label, (g, l) in (("pos", self.pos), ("neg", self.neg)):
            if not (0.0 <= g <= 1.0 and 0.0 <= l <= 1.0):
                raise ValueError(
                    f"query {self.query_id!r}: {label} scores {(g, l)} outside [0,1]")

    def to_json(self) -> dict:
        return {"query_id": self.query_id,
                "pos": list(self.pos), "neg": list(self.neg)}

    @classmethod
    def from_json(cls, doc: dict) -> "CalibrationExample":
        return cls(str(doc["query_id"]),
                   (float(doc["pos"][0]), float(doc["pos"][1])),
                   (float(doc["neg"][0]), float(doc["neg"][1])))


@dataclass(frozen=True)
class CalibrationPool:
    """A positive plus the whole hard-negative pool for one query, so the
    negative can be re-drawn every epoch instead of fixed up front."""

    query_id: str
    pos: tuple[float, float]
    negatives: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.negatives:
            raise ValueError(f"query {self.query_id!r}: empty negative pool")


@dataclass(frozen=True)
class CalibrationConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    max_epochs: int = DEFAULT_MAX_EPOCHS
    tolerance: float = DEFAULT_TOLERANCE
    seed: int = 0

    def __post_init__(self):
        # learning_rate 0 is allowed as an explicit no-op configuration.
        if not (0.0 <= self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in [0, 1]")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be > 0")

    def to_json(self) -> dict:
        return {"learning_rate": self.learning_rate, "max_epochs": self.max_epochs,
                "tolerance": self.tolerance, "seed": self.seed}

    @classmethod
    def from_json(cls, doc: dict) -> "CalibrationConfig":
        return cls(
            learning_rate=float(doc.get("learning_rate", DEFAULT_LEARNING_RATE)),
            max_epochs=int(doc.get("max_epochs", DEFAULT_MAX_EPOCHS)),
            tolerance=float(doc.get("tolerance", DEFAULT_TOLERANCE)),
            seed=int(doc.get("seed", 0)),
        )


@dataclass(frozen=True)
class CalibrationResult:
    params: ReweightParams
    loss: float
    epochs: int
    loss_history: tuple[float, ...]


@dataclass(frozen=True)
class ScoredCandidate:
    """Score bundle for one (query, image) pair after fusion."""

    image_id: str
    s_global: float
    s_local: float
    fused: float
    rank: int  # 1-based position after re-sorting
    degenerate: bool = False

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "s_global": self.s_global,
                "s_local": self.s_local, "fused": self.fused,
                "rank": self.rank, "degenerate": self.degenerate}


def fuse(strategy: str, params: ReweightParams | None, s_g: float, s_l: float) -> float:
    """Combine one global/local score pair under the named strategy.

    Params are required for reweight and rejected otherwise, so a caller
    passing weights to a strategy that silently ignores them fails loudly.
    """
    if strategy == "reweight":
        if params is None:
            raise ValueError("reweight fusion requires params")
        return params.w_g * s_g + params.w_l * s_l + params.b
    if params is not None:
        raise ValueError(f"strategy {strategy!r} takes no params")
    if strategy == "add":
        return s_g + s_l
    if strategy == "multiply":
        return s_g * s_l
    if strategy == "global":
        return s_g
    if strategy == "local":
        return s_l
    raise ValueError(f"unknown fusion strategy {strategy!r}")


def reweight_loss(params: ReweightParams, ex: CalibrationExample) -> float:
    """Squared calibration loss of one example: (1 - S+)^2 + (S-)^2."""
    s_pos = fuse("reweight", params, *ex.pos)
    s_neg = fuse("reweight", params, *ex.neg)
    return (1.0 - s_pos) ** 2 + s_neg ** 2


def mean_loss(params: ReweightParams, examples: Sequence[CalibrationExample]) -> float:
    if not examples:
        raise ValueError("at least one example is required")
    return sum(reweight_loss(params, ex) for ex in examples) / len(examples)


def reweight_gradient(params: ReweightParams,
                      examples: Sequence[CalibrationExample]) -> tuple[float, float, float]:
    """Analytic gradient of the mean calibration loss wrt (w_g, w_l, b)."""
    if not examples:
        raise ValueError("at least one example is required")
    dw_g = dw_l = db = 0.0
    for ex in examples:
        s_pos = fuse("reweight", params, *ex.pos)
        s_neg = fuse("reweight", params, *ex.neg)
        # d/dS of (1 - S+)^2 is -2(1 - S+); of (S-)^2 is 2 S-.
        c_pos = -2.0 * (1.0 - s_pos)
        c_neg = 2.0 * s_neg
        dw_g += c_pos * ex.pos[0] + c_neg * ex.neg[0]
        dw_l += c_pos * ex.pos[1] + c_neg * ex.neg[1]
        db += c_pos + c_neg
    n = len(examples)
    return (dw_g / n, dw_l / n, db / n)


def calibrate(examples: Sequence[CalibrationExample],
              config: CalibrationConfig = CalibrationConfig()) -> CalibrationResult:
    """Full-batch gradient descent on the mean calibration loss.

    Starts from (0.5, 0.5, 0) and stops when the loss change falls below the
    tolerance or the epoch budget runs out. Raises on non-finite loss.
    """
    return _descend(lambda epoch: list(examples), config)


def calibrate_pooled(pools: Sequence[CalibrationPool],
                     config: CalibrationConfig = CalibrationConfig()) -> CalibrationResult:
    """Like calibrate, but the hard negative of each query is re-drawn
    uniformly from its pool at the start of every epoch (seeded). Pools of
    size one reduce to plain calibrate."""
    if not pools:
        raise ValueError("at least one pool is required")
    rng = np.random.default_rng(config.seed)

    def draw(epoch: int) -> list[CalibrationExample]:
        out = []
        for pool in pools:
            neg = pool.negatives[int(rng.integers(len(pool.negatives)))]
            out.append(CalibrationExample(pool.query_id, pool.pos, neg))
        return out

    return _descend(draw, config)


def _descend(examples_for_epoch, config: CalibrationConfig) -> CalibrationResult:
    w = np.array(DEFAULT_INIT, dtype=np.float64)
    prev_loss = None
    history: list[float] = []
    epoch = 0
    examples: list[CalibrationExample] = []
    # Divergence is detected through the loss overflowing to inf, so the
    # overflow itself is expected and must not warn.
    with np.errstate(over="ignore"):
        for epoch in range(1, config.max_epochs + 1):
            examples = examples_for_epoch(epoch)
            params = ReweightParams(*w)
            loss = mean_loss(params, examples)
            if not math.isfinite(loss):
                raise CalibrationDivergedError(epoch, loss)
            history.append(loss)
            grad = np.array(reweight_gradient(params, examples))
            w = w - config.learning_rate * grad
            if prev_loss is not None and abs(prev_loss - loss) < config.tolerance:
                break
            prev_loss = loss
        final = ReweightParams(*w)
        # Report the loss at the returned params on the last epoch's examples,
        # not at the last pre-step point.
        final_loss = mean_loss(final, examples)
    if not math.isfinite(final_loss):
        raise CalibrationDivergedError(epoch, final_loss)
    return CalibrationResult(final, final_loss, epoch, tuple(history))


def select_hard_negative(ranked: RankedList, gt_ids: frozenset[str] | set[str],
                         rng_seed: int | np.random.Generator,
                         pool_size: int = HARD_NEGATIVE_POOL) -> str:
    """Draw one non-GT image uniformly from the top of the global ranking.

    The pool is the first ``pool_size`` non-GT entries in ranking order.
    """
    pool = hard_negative_pool(ranked, gt_ids, pool_size)
    rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
           else np.random.default_rng(rng_seed))
    return pool[int(rng.integers(len(pool)))]


def hard_negative_pool(ranked: RankedList, gt_ids: frozenset[str] | set[str],
                       pool_size: int = HARD_NEGATIVE_POOL) -> list[str]:
    pool = [iid for iid in ranked.ids() if iid not in gt_ids][:pool_size]
    if not pool:
        raise ValueError(f"query {ranked.query_id!r}: no non-GT candidate to sample")
    return pool


def minmax_normalize(values: Sequence[float]) -> list[float]:
    """Map values to [0,1] by min-max; a constant column maps to all 0.5."""
    if len(values) == 0:
        return []
    arr = np.asarray(values, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        return [0.5] * len(values)
    return [float(v) for v in (arr - lo) / (hi - lo)]


def normalized_columns(shortlist: RankedList,
                       local_scores: Mapping[str, LocalScore],
                       ) -> dict[str, tuple[float, float, bool]]:
    """Per-image (norm_global, norm_local, degenerate) over one shortlist.

    Degenerate images are left out of the local column's min-max fit (their
    zero placeholder is not a measurement) and get the midpoint instead.
    """
    ids = shortlist.ids()
    for iid in ids:
        if iid not in local_scores:
            raise KeyError(f"image {iid!r} has no local score and no degenerate flag")
    norm_g = minmax_normalize([score for _, score in shortlist.entries])
    live = [iid for iid in ids if not local_scores[iid].degenerate]
    norm_l_live = minmax_normalize([local_scores[iid].s_local for iid in live])
    norm_l = dict(zip(live, norm_l_live))
    out = {}
    for iid, g in zip(ids, norm_g):
        degenerate = local_scores[iid].degenerate
        out[iid] = (g, norm_l.get(iid, DEGENERATE_LOCAL), degenerate)
    return out


def rerank(shortlist: RankedList,
           local_scores: Mapping[str, LocalScore],
           strategy: str,
           params: ReweightParams | None = None,
           top_n: int | None = None) -> RankedList:
    """Re-order a shortlist by fused score (descending, ties by image_id).

    Every shortlisted image needs a local score entry, possibly carrying a
    degenerate flag; flagged images are scored by their normalized global
    similarity alone. ``top_n`` truncates after sorting when given.
    """
    ranked = [(c.image_id, c.fused) for c in
              scored_candidates(shortlist, local_scores, strategy, params)]
    if top_n is not None:
        if top_n < 1:
            raise ValueError("top_n must be >= 1")
        ranked = ranked[:top_n]
    return RankedList(shortlist.query_id, ranked)


def scored_candidates(shortlist: RankedList,
                      local_scores: Mapping[str, LocalScore],
                      strategy: str,
                      params: ReweightParams | None = None,
                      ) -> list[ScoredCandidate]:
    """Fused score bundles for a shortlist, sorted into final rank order."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown fusion strategy {strategy!r}")
    if strategy == "reweight" and params is None:
        raise ValueError("reweight fusion requires params")
    columns = normalized_columns(shortlist, local_scores)
    rows = []
    for iid in shortlist.ids():
        g, l, degenerate = columns[iid]
        fused = g if degenerate else fuse(strategy, params, g, l)
        rows.append((iid, g, l, fused, degenerate))
    rows.sort(key=lambda r: (-r[3], r[0]))
    return [ScoredCandidate(image_id=iid, s_global=g, s_local=l, fused=fused,
                            rank=pos + 1, degenerate=degenerate)
            for pos, (iid, g, l, fused, degenerate) in enumerate(rows)]


def build_calibration_pool(shortlist: RankedList,
                           local_scores: Mapping[str, LocalScore],
                           gt_ids: frozenset[str] | set[str],
                           pool_size: int = HARD_NEGATIVE_POOL,
                           ) -> CalibrationPool | None:
    """Assemble a query's calibration pool from its shortlist.

    Returns None when no GT image made the shortlist (nothing to learn from)
    or when every shortlisted image is GT (no negative exists).
    """
    columns = normalized_columns(shortlist, local_scores)
    gt_in_list = [iid for iid in shortlist.ids() if iid in gt_ids]
    if not gt_in_list:
        return None
    try:
        pool_ids = hard_negative_pool(shortlist, gt_ids, pool_size)
    except ValueError:
        return None
    pos_id = gt_in_list[0]  # highest-ranked GT stands in for the query
    pos = columns[pos_id][:2]
    negatives = tuple(columns[iid][:2] for iid in pool_ids)
    return CalibrationPool(shortlist.query_id, pos, negatives)
