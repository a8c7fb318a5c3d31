"""Command-line entry points.

``hulirag run --config config.json`` drives the whole cascade; the other
subcommands mirror single stages so any of them can be run (or replaced) in
isolation. Every command exits 0 on success and nonzero with a
stage-tagged diagnostic on stderr otherwise.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import phrases as phrase_mod
from . import regions as regions_mod
from .clients import ClientConfig, judge_many
from .corpus import load_corpus, load_queries, save_corpus, save_queries
from .errors import HuliragError
from .evaluation import JudgeRequest, build_report
from .jsonl import dumps_stable, read_json, read_jsonl, write_json, write_jsonl
from .objectives import (AnswerDistribution, ContrastiveBatch,
                         combined_contrastive_loss, consistency_loss, info_nce,
                         total_ft_loss, vqa_loss)
from .pipeline import PipelineConfig, load_config, run_pipeline
from .retrieval import RankedList, ShortlistIndex
from .reweight import (CalibrationConfig, CalibrationExample, ReweightParams,
                       calibrate, rerank)
from .synthetic import fusion_benchmark, smoke_bundle


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except HuliragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hulirag",
        description="Staged multimodal retrieval: global shortlist, phrase "
                    "decomposition, region evidence, score fusion, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--from-stage", default="retrieve",
                   help="first stage to execute (earlier artifacts must exist)")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("retrieve", help="global top-K shortlist per query")
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_retrieve)

    p = sub.add_parser("decompose", help="split query text into merged phrases")
    p.add_argument("--queries", required=True)
    p.add_argument("--phrases", help="externally parsed phrase records to ingest instead")
    p.add_argument("--jaccard", type=float, default=phrase_mod.MERGE_THRESHOLD)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_decompose)

    p = sub.add_parser("score-local", help="region-weighted local scores over a shortlist")
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--shortlist", required=True)
    p.add_argument("--detections", help="raw detections to attach before scoring")
    p.add_argument("--confidence", type=float, default=regions_mod.CONFIDENCE_THRESHOLD)
    p.add_argument("--mask-threshold", type=float, default=regions_mod.MASK_THRESHOLD)
    p.add_argument("--epsilon", type=float, default=regions_mod.ALPHA_EPSILON)
    p.add_argument("--region-cap", type=int, default=regions_mod.REGION_CAP)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_score_local)

    p = sub.add_parser("calibrate", help="fit reweight params on an examples file")
    p.add_argument("--examples", required=True)
    p.add_argument("--config", help="calibration config JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_calibrate)

    p = sub.add_parser("rerank", help="re-order a shortlist by fused scores")
    p.add_argument("--shortlist", required=True)
    p.add_argument("--local", required=True)
    p.add_argument("--strategy", default="reweight",
                   choices=["global", "local", "add", "multiply", "reweight"])
    p.add_argument("--params", help="params JSON (required for reweight)")
    p.add_argument("--top-n", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_rerank)

    p = sub.add_parser("evaluate", help="score rankings (and answers) into a report")
    p.add_argument("--rankings", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--answers", help="predicted answers JSONL {query_id, answer}")
    p.add_argument("--k", default="1,5,10", help="comma-separated K values")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("judge", help="rate answers through an external judge service")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--answers", required=True,
                   help="JSONL {query_id, question, answer}")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_judge)

    p = sub.add_parser("loss", help="evaluate a training objective on a file")
    p.add_argument("--kind", required=True,
                   choices=["nce", "combined", "vqa", "cons", "total"])
    p.add_argument("--in", dest="in_path", required=True)
    p.set_defaults(handler=_cmd_loss)

    p = sub.add_parser("synth", help="generate a synthetic fixture corpus")
    p.add_argument("--kind", default="smoke", choices=["smoke", "benchmark"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=_cmd_synth)

    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    report = run_pipeline(config, from_stage=args.from_stage)
    print(f"report written to {config.artifact('evaluate')}")
    for k in sorted(report.recall_at):
        print(f"recall@{k}: {report.recall_at[k]:.4f}")
    if report.em is not None:
        print(f"em: {report.em:.4f}")
    if report.f1 is not None:
        print(f"f1: {report.f1:.4f}")
    return 0


def _cmd_retrieve(args) -> int:
    images = load_corpus(args.corpus)
    queries = load_queries(args.queries, expected_dim=images[0].global_embedding.dim
                           if images else None)
    index = ShortlistIndex(images)
    write_jsonl(args.out, [index.search(q, args.k).to_json() for q in queries])
    print(f"{len(queries)} shortlists written to {args.out}")
    return 0


def _cmd_decompose(args) -> int:
    queries = load_queries(args.queries)
    external = None
    if args.phrases:
        external = {str(doc["query_id"]): doc.get("phrases", [])
                    for _, doc in read_jsonl(args.phrases)}
    records = []
    for q in queries:
        if external is not None:
            parsed = phrase_mod.phrases_from_records(external.get(q.query_id, []))
        else:
            parsed = phrase_mod.extract_phrases(q.text)
        merged = phrase_mod.merge_phrases(parsed, args.jaccard)
        records.append({"query_id": q.query_id,
                        "phrases": [p.to_json() for p in merged]})
    write_jsonl(args.out, records)
    print(f"{len(records)} phrase records written to {args.out}")
    return 0


def _cmd_score_local(args) -> int:
    images = load_corpus(args.corpus)
    queries = load_queries(args.queries, expected_dim=images[0].global_embedding.dim
                           if images else None)
    if args.detections:
        detections = regions_mod.load_detections(args.detections)
        images = regions_mod.attach_detections(
            images, detections,
            confidence_threshold=args.confidence, mask_threshold=args.mask_threshold)
    by_id = {img.image_id: img for img in images}
    queries_by_id = {q.query_id: q for q in queries}
    records = []
    for _, doc in read_jsonl(args.shortlist):
        ranked = RankedList.from_json(doc)
        query = queries_by_id[ranked.query_id]
        scores = [regions_mod.score_image(
            query, by_id[iid], confidence_threshold=args.confidence,
            region_cap=args.region_cap, epsilon=args.epsilon).to_json()
            for iid in ranked.ids()]
        records.append({"query_id": ranked.query_id, "scores": scores})
    write_jsonl(args.out, records)
    print(f"local scores for {len(records)} queries written to {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    examples = [CalibrationExample.from_json(doc)
                for _, doc in read_jsonl(args.examples)]
    config = (CalibrationConfig.from_json(read_json(args.config))
              if args.config else CalibrationConfig())
    result = calibrate(examples, config)
    write_json(args.out, {"params": result.params.to_json(), "loss": result.loss,
                          "epochs": result.epochs})
    print(f"calibrated in {result.epochs} epochs, loss {result.loss:.6f}; "
          f"params written to {args.out}")
    return 0


def _read_params_file(path: str) -> ReweightParams:
    doc = read_json(path)
    if "params" in doc and isinstance(doc["params"], dict):
        doc = doc["params"]
    return ReweightParams.from_json(doc)


def _cmd_rerank(args) -> int:
    local = regions_mod.load_local_scores(args.local)
    params = _read_params_file(args.params) if args.params else None
    records = []
    for _, doc in read_jsonl(args.shortlist):
        ranked = RankedList.from_json(doc)
        result = rerank(ranked, local[ranked.query_id], args.strategy, params,
                        top_n=args.top_n)
        records.append(result.to_json())
    write_jsonl(args.out, records)
    print(f"{len(records)} reranked lists written to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    queries = load_queries(args.queries)
    gt = {q.query_id: q.gt_image_ids for q in queries}
    gold = {q.query_id: q.gold_answer for q in queries}
    rankings = []
    for _, doc in read_jsonl(args.rankings):
        if "candidates" in doc:  # rerank-stage artifact
            entries = [(c["image_id"], float(c["fused"])) for c in doc["candidates"]]
            rankings.append(RankedList(str(doc["query_id"]), entries))
        else:
            rankings.append(RankedList.from_json(doc))
    answers = None
    if args.answers:
        answers = {}
        for _, doc in read_jsonl(args.answers):
            qid = str(doc["query_id"])
            if gold.get(qid) is None:
                raise HuliragError(f"answer for query {qid!r} but no gold answer on record")
            answers[qid] = (str(doc["answer"]), gold[qid])
    ks = [int(k) for k in str(args.k).split(",") if k]
    report = build_report(rankings, gt, ks, answers)
    write_json(args.out, report.to_json())
    for k in sorted(report.recall_at):
        print(f"recall@{k}: {report.recall_at[k]:.4f}")
    if report.em is not None:
        print(f"em: {report.em:.4f}")
    if report.f1 is not None:
        print(f"f1: {report.f1:.4f}")
    return 0


def _cmd_judge(args) -> int:
    items = []
    for _, doc in read_jsonl(args.answers):
        items.append((str(doc["query_id"]),
                      JudgeRequest.build(str(doc["question"]), str(doc["answer"]))))
    config = ClientConfig(max_in_flight=args.max_in_flight)
    ratings = judge_many(args.endpoint, [req for _, req in items], config)
    records = [{"query_id": qid, "rating": rating}
               for (qid, _), rating in zip(items, ratings)]
    write_jsonl(args.out, records)
    print(f"{len(records)} ratings written to {args.out}")
    return 0


def _cmd_loss(args) -> int:
    doc = read_json(args.in_path)
    kind = args.kind
    if kind == "nce":
        value = info_nce(ContrastiveBatch.from_json(doc))
    elif kind == "combined":
        value = combined_contrastive_loss(
            ContrastiveBatch.from_json(doc["global"]),
            [ContrastiveBatch.from_json(b) for b in doc.get("regional", [])])
    elif kind == "vqa":
        value = vqa_loss(AnswerDistribution.from_json(doc["probs"]), str(doc["gold"]))
    elif kind == "cons":
        value = consistency_loss(AnswerDistribution.from_json(doc["p_full"]),
                                 AnswerDistribution.from_json(doc["p_masked"]))
    else:
        value = total_ft_loss(float(doc["vqa"]), float(doc["cons"]))
    if math.isinf(value):
        print(dumps_stable({"kind": kind, "value": "inf", "infinite": True}))
    else:
        print(dumps_stable({"kind": kind, "value": value}))
    return 0


def _cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "smoke":
        bundle = smoke_bundle() if args.seed is None else smoke_bundle(seed=args.seed)
    else:
        bundle = fusion_benchmark() if args.seed is None else fusion_benchmark(seed=args.seed)
    save_corpus(out / "corpus.jsonl", bundle.images)
    save_queries(out / "queries.jsonl", bundle.queries)
    if bundle.detections:
        write_jsonl(out / "detections.jsonl", bundle.detections)
    if bundle.answers:
        write_jsonl(out / "answers.jsonl",
                    [{"query_id": qid, "answer": ans}
                     for qid, ans in bundle.answers.items()])
    write_json(out / "split.json", {"train": bundle.train_query_ids,
                                    "heldout": bundle.heldout_query_ids})
    print(f"{len(bundle.images)} images, {len(bundle.queries)} queries written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
