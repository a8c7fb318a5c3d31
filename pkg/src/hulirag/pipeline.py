"""File-based orchestration of the full retrieval cascade.

Stages run in a fixed order (retrieve, decompose, score-local, calibrate,
rerank, evaluate) and communicate only through files in the output
directory, so any stage can be rerun in isolation and an external adapter
can inject its own artifacts at any boundary. All stage artifacts are
serialized with stable key ordering and no timestamps, which makes a rerun
with the same config and inputs byte-identical; volatile data (timings)
goes only into the manifest.

Seeds are split from the root seed by hashing "{seed}:{label}", so adding a
stage never shifts the randomness of existing ones.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import phrases as phrase_mod
from . import regions as regions_mod
from .corpus import ImageRecord, QueryRecord, load_corpus, load_queries
from .errors import HuliragError, PipelineStageError
from .evaluation import EvalReport, build_report
from .jsonl import dumps_stable, read_json, read_jsonl, write_json, write_jsonl
from .retrieval import RankedList, ShortlistIndex
from .reweight import (CalibrationConfig, ReweightParams, build_calibration_pool,
                       calibrate_pooled, scored_candidates)
from .synthetic import seed_for

STAGES = ("retrieve", "decompose", "score-local", "calibrate", "rerank", "evaluate")

ARTIFACTS = {
    "retrieve": "shortlists.jsonl",
    "decompose": "phrases.jsonl",
    "score-local": "local_scores.jsonl",
    "calibrate": "params.json",
    "rerank": "reranked.jsonl",
    "evaluate": "report.json",
}

DEFAULT_K_SHORTLIST = 20
DEFAULT_TOP_N = 1
DEFAULT_EVAL_KS = (1, 5, 10)


@dataclass
class PipelineConfig:
    corpus_path: str
    queries_path: str
    out_dir: str
    detections_path: str | None = None
    answers_path: str | None = None
    k_shortlist: int = DEFAULT_K_SHORTLIST
    top_n: int = DEFAULT_TOP_N
    strategy: str = "reweight"
    params: ReweightParams | None = None  # fixed params skip calibration
    confidence_threshold: float = regions_mod.CONFIDENCE_THRESHOLD
    mask_threshold: float = regions_mod.MASK_THRESHOLD
    jaccard_threshold: float = phrase_mod.MERGE_THRESHOLD
    epsilon: float = regions_mod.ALPHA_EPSILON
    region_cap: int = regions_mod.REGION_CAP
    eval_ks: tuple[int, ...] = DEFAULT_EVAL_KS
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.k_shortlist < 1:
            raise ValueError("k_shortlist must be >= 1")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if self.strategy not in ("global", "local", "add", "multiply", "reweight"):
            raise ValueError(f"unknown fusion strategy {self.strategy!r}")
        for name, v in (("confidence_threshold", self.confidence_threshold),
                        ("mask_threshold", self.mask_threshold),
                        ("jaccard_threshold", self.jaccard_threshold)):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.region_cap < 1:
            raise ValueError("region_cap must be >= 1")
        if not self.eval_ks or any(k < 1 for k in self.eval_ks):
            raise ValueError("eval_ks must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_json(self) -> dict:
        doc = {
            "corpus_path": self.corpus_path,
            "queries_path": self.queries_path,
            "out_dir": self.out_dir,
            "k_shortlist": self.k_shortlist,
            "top_n": self.top_n,
            "strategy": self.strategy,
            "confidence_threshold": self.confidence_threshold,
            "mask_threshold": self.mask_threshold,
            "jaccard_threshold": self.jaccard_threshold,
            "epsilon": self.epsilon,
            "region_cap": self.region_cap,
            "eval_ks": list(self.eval_ks),
            "calibration": self.calibration.to_json(),
            "seed": self.seed,
            "workers": self.workers,
        }
        if self.detections_path is not None:
            doc["detections_path"] = self.detections_path
        if self.answers_path is not None:
            doc["answers_path"] = self.answers_path
        if self.params is not None:
            doc["params"] = self.params.to_json()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "calibration" in kwargs:
            kwargs["calibration"] = CalibrationConfig.from_json(kwargs["calibration"])
        if "params" in kwargs and kwargs["params"] is not None:
            kwargs["params"] = ReweightParams.from_json(kwargs["params"])
        if "eval_ks" in kwargs:
            kwargs["eval_ks"] = tuple(int(k) for k in kwargs["eval_ks"])
        return cls(**kwargs)

    def config_hash(self) -> str:
        return hashlib.sha256(dumps_stable(self.to_json()).encode()).hexdigest()

    def artifact(self, stage: str) -> Path:
        return Path(self.out_dir) / ARTIFACTS[stage]


def load_config(path: str | Path) -> PipelineConfig:
    try:
        return PipelineConfig.from_json(read_json(path))
    except (ValueError, TypeError, KeyError) as exc:
        raise PipelineStageError("config", f"{path}: {exc}") from exc


def validate_config(config: PipelineConfig) -> None:
    """Check every referenced input file exists before any stage runs."""
    paths = {"corpus": config.corpus_path, "queries": config.queries_path}
    if config.detections_path is not None:
        paths["detections"] = config.detections_path
    if config.answers_path is not None:
        paths["answers"] = config.answers_path
    for kind, p in paths.items():
        if not Path(p).is_file():
            raise PipelineStageError("config", f"{kind} file not found: {p}")


# ---------------------------------------------------------------------------
# Stage bodies. Each loads what it needs from files and writes one artifact.
# ---------------------------------------------------------------------------

def _load_inputs(config: PipelineConfig) -> tuple[list[ImageRecord], list[QueryRecord]]:
    images = load_corpus(config.corpus_path)
    dim = images[0].global_embedding.dim if images else None
    queries = load_queries(config.queries_path, expected_dim=dim)
    return images, queries


def stage_retrieve(config: PipelineConfig) -> None:
    images, queries = _load_inputs(config)
    index = ShortlistIndex(images)
    ranked = [index.search(q, config.k_shortlist) for q in queries]
    write_jsonl(config.artifact("retrieve"), [r.to_json() for r in ranked])


def stage_decompose(config: PipelineConfig) -> None:
    _, queries = _load_inputs(config)
    records = []
    for q in queries:
        extracted = phrase_mod.extract_phrases(q.text)
        merged = phrase_mod.merge_phrases(extracted, config.jaccard_threshold)
        records.append({"query_id": q.query_id,
                        "phrases": [p.to_json() for p in merged]})
    write_jsonl(config.artifact("decompose"), records)


def stage_score_local(config: PipelineConfig) -> None:
    images, queries = _load_inputs(config)
    if config.detections_path is not None:
        detections = regions_mod.load_detections(config.detections_path)
        images = regions_mod.attach_detections(
            images, detections,
            confidence_threshold=config.confidence_threshold,
            mask_threshold=config.mask_threshold)
    by_id = {img.image_id: img for img in images}
    shortlists = _read_shortlists(config)
    queries_by_id = {q.query_id: q for q in queries}

    def score_one(ranked: RankedList) -> dict:
        query = queries_by_id.get(ranked.query_id)
        if query is None:
            raise PipelineStageError(
                "score-local", f"shortlist query {ranked.query_id!r} not in queries file")
        scores = []
        for image_id in ranked.ids():
            image = by_id.get(image_id)
            if image is None:
                raise PipelineStageError(
                    "score-local",
                    f"query {ranked.query_id!r}: shortlisted image {image_id!r} not in corpus")
            score = regions_mod.score_image(
                query, image,
                confidence_threshold=config.confidence_threshold,
                region_cap=config.region_cap,
                epsilon=config.epsilon)
            scores.append(score.to_json())
        return {"query_id": ranked.query_id, "scores": scores}

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(score_one, shortlists))
    else:
        records = [score_one(r) for r in shortlists]
    write_jsonl(config.artifact("score-local"), records)


def stage_calibrate(config: PipelineConfig) -> None:
    doc: dict = {"strategy": config.strategy, "params": None}
    if config.strategy == "reweight":
        if config.params is not None:
            doc["params"] = config.params.to_json()
            doc["source"] = "config"
        else:
            _, queries = _load_inputs(config)
            gt = {q.query_id: q.gt_image_ids for q in queries}
            shortlists = _read_shortlists(config)
            local = regions_mod.load_local_scores(config.artifact("score-local"))
            pools = []
            for ranked in shortlists:
                pool = build_calibration_pool(ranked, local[ranked.query_id],
                                              gt[ranked.query_id])
                if pool is not None:
                    pools.append(pool)
            if not pools:
                raise PipelineStageError(
                    "calibrate", "no query has both a shortlisted GT image and a negative")
            calib = replace(config.calibration, seed=seed_for(config.seed, "calibrate"))
            result = calibrate_pooled(pools, calib)
            doc["params"] = result.params.to_json()
            doc["loss"] = result.loss
            doc["epochs"] = result.epochs
            doc["n_examples"] = len(pools)
            doc["source"] = "calibrated"
    write_json(config.artifact("calibrate"), doc)


def stage_rerank(config: PipelineConfig) -> None:
    shortlists = _read_shortlists(config)
    local = regions_mod.load_local_scores(config.artifact("score-local"))
    params_doc = read_json(config.artifact("calibrate"))
    params = (ReweightParams.from_json(params_doc["params"])
              if params_doc.get("params") else None)
    records = []
    for ranked in shortlists:
        cands = scored_candidates(ranked, local[ranked.query_id],
                                  config.strategy, params)
        records.append({
            "query_id": ranked.query_id,
            "candidates": [c.to_json() for c in cands],
            "top_n": [c.image_id for c in cands[: config.top_n]],
        })
    write_jsonl(config.artifact("rerank"), records)


def stage_evaluate(config: PipelineConfig) -> EvalReport:
    _, queries = _load_inputs(config)
    gt = {q.query_id: q.gt_image_ids for q in queries}
    gold = {q.query_id: q.gold_answer for q in queries}
    rankings = []
    for line, doc in read_jsonl(config.artifact("rerank")):
        rankings.append(RankedList(
            query_id=str(doc["query_id"]),
            entries=[(c["image_id"], float(c["fused"])) for c in doc["candidates"]]))
    answers = None
    if config.answers_path is not None:
        answers = {}
        for line, doc in read_jsonl(config.answers_path):
            qid = str(doc["query_id"])
            if gold.get(qid) is None:
                raise PipelineStageError(
                    "evaluate", f"answer for query {qid!r} but no gold answer on record")
            answers[qid] = (str(doc["answer"]), gold[qid])
    report = build_report(rankings, gt, config.eval_ks, answers)
    write_json(config.artifact("evaluate"), report.to_json())
    return report


def _read_shortlists(config: PipelineConfig) -> list[RankedList]:
    path = config.artifact("retrieve")
    if not path.is_file():
        raise FileNotFoundError(f"missing upstream artifact {path}")
    return [RankedList.from_json(doc) for _, doc in read_jsonl(path)]


_STAGE_BODIES = {
    "retrieve": stage_retrieve,
    "decompose": stage_decompose,
    "score-local": stage_score_local,
    "calibrate": stage_calibrate,
    "rerank": stage_rerank,
    "evaluate": stage_evaluate,
}


def run_stage(config: PipelineConfig, stage: str):
    if stage not in _STAGE_BODIES:
        raise PipelineStageError(stage, "unknown stage")
    try:
        return _STAGE_BODIES[stage](config)
    except PipelineStageError:
        raise
    except HuliragError as exc:
        raise PipelineStageError(stage, str(exc)) from exc
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise PipelineStageError(stage, f"{type(exc).__name__}: {exc}") from exc


def run_pipeline(config: PipelineConfig, from_stage: str = "retrieve") -> EvalReport:
    """Run all stages from ``from_stage`` on; returns the final report.

    Writes a manifest recording the config hash, seed, and per-stage wall
    times. The manifest is the only artifact that differs between reruns.
    """
    if from_stage not in STAGES:
        raise PipelineStageError(from_stage, "unknown stage")
    validate_config(config)
    Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    report: EvalReport | None = None
    timings = {}
    for stage in STAGES[STAGES.index(from_stage):]:
        started = time.perf_counter()
        result = run_stage(config, stage)
        timings[stage] = time.perf_counter() - started
        if stage == "evaluate":
            report = result
    manifest = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "from_stage": from_stage,
        "artifacts": {s: ARTIFACTS[s] for s in STAGES},
        "timings_s": timings,
    }
    write_json(Path(config.out_dir) / "manifest.json", manifest)
    assert report is not None
    return report
