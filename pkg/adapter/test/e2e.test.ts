/**
 * End-to-end acceptance: a ten-image sample flows through every adapter
 * command, every emitted file passes the retrieval engine's ingestion with
 * zero errors, and a full engine pipeline run over the adapter's output
 * completes. Requires the `hulirag` console script on PATH (install the
 * engine package first) and builds this package's dist/ before running.
 */

import { execFileSync, spawnSync } from "node:child_process";
import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { beforeAll, describe, expect, it } from "vitest";
import { writePpm } from "../src/ppm.js";
import { makeTestImage, tempDir } from "./helpers.js";

const ADAPTER_ROOT = fileURLToPath(new URL("..", import.meta.url));
const CLI = join(ADAPTER_ROOT, "dist", "cli.js");
const TSC = join(ADAPTER_ROOT, "node_modules", "typescript", "bin", "tsc");

const SAMPLE_SIZE = 10;

const QUERY_SPECS = [
  { query_id: "q000", text: "a red lantern on the wooden pier", gt_image_ids: ["img0000"], gold_answer: "A red lantern." },
  { query_id: "q001", text: "the striped cat under a parked car", gt_image_ids: ["img0001"] },
  { query_id: "q002", text: "a red lantern beside the market stall", gt_image_ids: ["img0002", "img0007"], gold_answer: "Next to the stall." },
  { query_id: "q003", text: "an old fishing boat at the stone dock", gt_image_ids: ["img0003"] },
  { query_id: "q004", text: "the blue kite above the sandy shore", gt_image_ids: ["img0004"], gold_answer: "A blue kite." },
  { query_id: "q005", text: "a wooden pier stretching into the fog", gt_image_ids: ["img0005"] },
];

let work: string;
let imagesDir: string;
const paths = {
  queriesSpec: "", queries: "", phrases: "", corpus: "", detections: "",
  manifest: "", config: "", outDir: "",
};

function adapt(args: string[]): string {
  return execFileSync("node", [CLI, ...args],
                      { cwd: work, encoding: "utf8", stdio: ["ignore", "pipe", "pipe"] });
}

function engine(args: string[]): string {
  return execFileSync("hulirag", args, { cwd: work, encoding: "utf8" });
}

function readLines(path: string): Array<Record<string, unknown>> {
  return readFileSync(path, "utf8")
    .split("\n")
    .filter((l) => l.trim().length > 0)
    .map((l) => JSON.parse(l));
}

beforeAll(() => {
  execFileSync("node", [TSC], { cwd: ADAPTER_ROOT });

  work = tempDir("adapter-e2e-");
  imagesDir = join(work, "images");
  execFileSync("mkdir", [imagesDir]);
  for (let i = 0; i < SAMPLE_SIZE; i++) {
    writePpm(join(imagesDir, `img${String(i).padStart(4, "0")}.ppm`),
             makeTestImage(64, 48, i));
  }
  writeFileSync(join(imagesDir, "not-an-image.ppm"), "P6\n64 oops");

  paths.queriesSpec = join(work, "queries_spec.jsonl");
  writeFileSync(paths.queriesSpec,
                QUERY_SPECS.map((q) => JSON.stringify(q)).join("\n") + "\n");
  paths.queries = join(work, "queries.jsonl");
  paths.phrases = join(work, "phrases.jsonl");
  paths.corpus = join(work, "corpus.jsonl");
  paths.detections = join(work, "detections.jsonl");
  paths.manifest = join(work, "adapter_manifest.json");
  paths.config = join(work, "config.json");
  paths.outDir = join(work, "run_out");
}, 180_000);

describe("ten-image sample through the full stack", () => {
  it("adapts raw query specs into engine-ingestible queries", () => {
    adapt(["adapt-queries", "--queries", paths.queriesSpec, "--out", paths.queries,
           "--manifest-out", paths.manifest]);
    const lines = readLines(paths.queries);
    expect(lines).toHaveLength(QUERY_SPECS.length);
    expect(Object.keys(lines[0]).sort())
      .toEqual(["embedding", "gold_answer", "gt_image_ids", "query_id", "text"]);
    expect(lines[0].embedding).toHaveLength(768);
    expect(lines[1]).not.toHaveProperty("gold_answer");
  }, 60_000);

  it("feeds the engine's phrase decomposition from adapted queries", () => {
    engine(["decompose", "--queries", paths.queries, "--out", paths.phrases]);
    const lines = readLines(paths.phrases);
    expect(lines).toHaveLength(QUERY_SPECS.length);
    const surfaces = lines.flatMap(
      (l) => (l.phrases as Array<{ surface: string }>).map((p) => p.surface));
    expect(surfaces).toContain("red lantern");
    expect(surfaces.length).toBeGreaterThanOrEqual(8);
  }, 60_000);

  it("encodes the sample into a corpus, skipping the corrupt file", () => {
    const result = spawnSync(
      "node", [CLI, "adapt-corpus", "--images", imagesDir, "--out", paths.corpus,
               "--manifest-out", paths.manifest],
      { cwd: work, encoding: "utf8" });
    expect(result.status).toBe(0);
    expect(result.stderr).toMatch(/skipping .*not-an-image\.ppm/);
    const lines = readLines(paths.corpus);
    expect(lines).toHaveLength(SAMPLE_SIZE);
    expect(lines.map((l) => l.image_id))
      .toEqual([...Array(SAMPLE_SIZE).keys()].map((i) => `img${String(i).padStart(4, "0")}`));
    expect(Object.keys(lines[0]).sort())
      .toEqual(["embedding", "height", "image_id", "regions", "width"]);
    expect(lines[0].width).toBe(64);
    expect(lines[0].height).toBe(48);
    expect(lines[0].embedding).toHaveLength(768);
    expect(lines[0].regions).toEqual([]);
  }, 60_000);

  it("grounds the decomposed phrases across the sample", () => {
    const result = spawnSync(
      "node", [CLI, "adapt-detections", "--images", imagesDir,
               "--phrases", paths.phrases, "--out", paths.detections,
               "--manifest-out", paths.manifest],
      { cwd: work, encoding: "utf8" });
    expect(result.status).toBe(0);
    expect(result.stderr).toMatch(/skipping .*not-an-image\.ppm/);
    const lines = readLines(paths.detections);
    expect(lines).toHaveLength(SAMPLE_SIZE);
    let total = 0;
    for (const line of lines) {
      const detections = line.detections as Array<Record<string, unknown>>;
      for (const det of detections) {
        total += 1;
        expect(Object.keys(det).sort())
          .toEqual(["bbox", "confidence", "embedding", "phrase_key", "soft_mask"]);
        expect(det.embedding).toHaveLength(768);
        const mask = det.soft_mask as number[][];
        expect(mask).toHaveLength(48);
        expect(mask[0]).toHaveLength(64);
      }
    }
    expect(total).toBeGreaterThan(SAMPLE_SIZE);
  }, 120_000);

  it("passes the engine's ingestion on every emitted file with zero errors", () => {
    const shortlists = join(work, "shortlists.jsonl");
    engine(["retrieve", "--corpus", paths.corpus, "--queries", paths.queries,
            "--k", "5", "--out", shortlists]);
    expect(readLines(shortlists)).toHaveLength(QUERY_SPECS.length);

    const localScores = join(work, "local_scores.jsonl");
    engine(["score-local", "--corpus", paths.corpus, "--queries", paths.queries,
            "--shortlist", shortlists, "--detections", paths.detections,
            "--out", localScores]);
    expect(readLines(localScores)).toHaveLength(QUERY_SPECS.length);
  }, 120_000);

  it("completes a full engine pipeline run over adapter output", () => {
    writeFileSync(paths.config, JSON.stringify({
      corpus_path: paths.corpus,
      queries_path: paths.queries,
      detections_path: paths.detections,
      out_dir: paths.outDir,
      strategy: "add",
      k_shortlist: 6,
      eval_ks: [1, 3, 5],
      seed: 11,
    }, null, 2));
    const stdout = engine(["run", "--config", paths.config]);
    expect(stdout).toMatch(/recall@1/);

    const report = JSON.parse(readFileSync(join(paths.outDir, "report.json"), "utf8"));
    expect(report.n_queries).toBe(QUERY_SPECS.length);
    expect(Object.keys(report.recall_at).sort()).toEqual(["1", "3", "5"]);

    const manifest = JSON.parse(readFileSync(join(paths.outDir, "manifest.json"), "utf8"));
    expect(Object.keys(manifest.artifacts)).toHaveLength(6);
  }, 120_000);

  it("reproduces corpus and detections byte for byte on a second run", () => {
    const corpusRerun = join(work, "corpus_rerun.jsonl");
    adapt(["adapt-corpus", "--images", imagesDir, "--out", corpusRerun]);
    expect(readFileSync(corpusRerun, "utf8")).toBe(readFileSync(paths.corpus, "utf8"));

    const detectionsRerun = join(work, "detections_rerun.jsonl");
    adapt(["adapt-detections", "--images", imagesDir, "--phrases", paths.phrases,
           "--out", detectionsRerun]);
    expect(readFileSync(detectionsRerun, "utf8")).toBe(readFileSync(paths.detections, "utf8"));
  }, 120_000);

  it("exports a contrastive batch the engine's objective evaluator accepts", () => {
    const batchPath = join(work, "nce_batch.json");
    adapt(["export-loss", "--corpus", paths.corpus, "--queries", paths.queries,
           "--out", batchPath, "--temperature", "0.07",
           "--manifest-out", paths.manifest]);
    const batch = JSON.parse(readFileSync(batchPath, "utf8"));
    expect(batch.sim_matrix).toHaveLength(QUERY_SPECS.length);
    expect(batch.temperature).toBe(0.07);

    const stdout = engine(["loss", "--kind", "nce", "--in", batchPath]);
    const result = JSON.parse(stdout);
    expect(result.kind).toBe("nce");
    expect(result.value).toBeGreaterThan(0);
    expect(Number.isFinite(result.value)).toBe(true);
  }, 60_000);

  it("records models, checkpoint, resize target, seed, and outputs in the manifest", () => {
    const manifest = JSON.parse(readFileSync(paths.manifest, "utf8"));
    expect(manifest.models.imageEncoder).toBe("clip-vit-l-14-336");
    expect(manifest.models.detector).toBe("grounding-dino-swin-t");
    expect(manifest.models.segmenter).toBe("sam-vit-h");
    expect(manifest.models.checkpoint).toBe("base");
    expect(manifest.resize).toEqual({ width: 336, height: 336 });
    expect(manifest.seed).toBe(0);
    expect(Object.keys(manifest.outputs).sort())
      .toEqual(["corpus", "detections", "loss", "queries"]);
    expect(manifest.outputs.corpus).toBe(paths.corpus);
  });
});
