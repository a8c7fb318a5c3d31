/**
 * Adapter operations: turn images, phrase lists, and raw query specs into
 * the corpus, detections, and query files the retrieval engine ingests.
 *
 * Boundaries this module keeps deliberately:
 *  - Soft masks are emitted pre-threshold and detector confidences raw; all
 *    filtering, binarization, and region weighting happen downstream in the
 *    engine, never here.
 *  - A corrupt input image fails that one file with a logged error and the
 *    run continues; input problems in query specs fail the run, since a
 *    silently dropped query would skew every metric computed from the file.
 */

import { basename } from "node:path";
import { Grounding, VisionBackend } from "./backend.js";
import { AdapterError, JsonlEntry } from "./io.js";
import { ImageFormatError, RawImage, readPpm } from "./ppm.js";

/** One input file the run skipped, and why. */
export interface SkippedFile {
  path: string;
  reason: string;
}

/** Corpus line: whole-image embedding, no regions (those come from detections). */
export interface CorpusLine {
  image_id: string;
  width: number;
  height: number;
  embedding: number[];
  regions: never[];
}

export interface CorpusResult {
  lines: CorpusLine[];
  skipped: SkippedFile[];
}

/** Serialized detection: geometry, raw score, soft mask, region embedding. */
export interface DetectionLine {
  image_id: string;
  detections: Array<{
    phrase_key: string;
    bbox: [number, number, number, number];
    confidence: number;
    soft_mask: number[][];
    embedding: number[];
  }>;
}

export interface DetectionsResult {
  lines: DetectionLine[];
  skipped: SkippedFile[];
}

/** Query line in the engine's format. */
export interface QueryLine {
  query_id: string;
  text: string;
  embedding: number[];
  gt_image_ids: string[];
  gold_answer?: string;
}

/** Region embedding for one mask of a batch, tagged with its input index. */
export interface RegionFragment {
  index: number;
  embedding: number[];
}

/** Image id = file stem: `shots/img0003.ppm` -> `img0003`. */
export function imageIdFor(path: string): string {
  return basename(path).replace(/\.[^.]+$/, "");
}

function decodeOrSkip(path: string, skipped: SkippedFile[]): RawImage | null {
  try {
    return readPpm(path);
  } catch (err) {
    if (err instanceof ImageFormatError) {
      console.error(`skipping ${path}: ${err.detail}`);
      skipped.push({ path, reason: err.detail });
      return null;
    }
    throw err;
  }
}

function checkDuplicateIds(paths: string[]): void {
  const seen = new Map<string, string>();
  for (const path of paths) {
    const id = imageIdFor(path);
    const prior = seen.get(id);
    if (prior !== undefined) {
      throw new AdapterError(`image id ${JSON.stringify(id)} appears twice: ${prior}, ${path}`);
    }
    seen.set(id, path);
  }
}

/**
 * Encode whole images into corpus lines.
 *
 * Images are processed in batches of `batchSize` with a progress line per
 * batch; batching affects only logging cadence, never output content.
 * Undecodable files are skipped with a per-file error and the run continues.
 */
export function adaptCorpus(imagePaths: string[], backend: VisionBackend,
                            batchSize: number): CorpusResult {
  checkDuplicateIds(imagePaths);
  const lines: CorpusLine[] = [];
  const skipped: SkippedFile[] = [];
  for (let start = 0; start < imagePaths.length; start += batchSize) {
    const batch = imagePaths.slice(start, start + batchSize);
    for (const path of batch) {
      const image = decodeOrSkip(path, skipped);
      if (image === null) {
        continue;
      }
      lines.push({
        image_id: imageIdFor(path),
        width: image.width,
        height: image.height,
        embedding: backend.encodeImage(image),
        regions: [],
      });
    }
    const done = Math.min(start + batchSize, imagePaths.length);
    console.log(`encoded ${done}/${imagePaths.length} images`);
  }
  return { lines, skipped };
}

/**
 * Region embeddings for a batch of soft masks on one image.
 *
 * Masks with no foreground at all are skipped with a warning — there is no
 * region to embed — so the result carries input indices to show which masks
 * survived.
 */
export function extractRegionEmbeddings(image: RawImage, masks: Float64Array[],
                                        backend: VisionBackend,
                                        label = "image"): RegionFragment[] {
  const fragments: RegionFragment[] = [];
  masks.forEach((mask, index) => {
    if (mask.every((v) => v === 0)) {
      console.warn(`${label}: mask ${index} has no foreground, skipping region embedding`);
      return;
    }
    fragments.push({ index, embedding: backend.encodeRegion(image, mask) });
  });
  return fragments;
}

/** Deduplicate phrase surfaces, preserving first-seen order. */
export function uniqueSurfaces(surfaces: string[]): string[] {
  const seen = new Set<string>();
  const out: string[] = [];
  for (const surface of surfaces) {
    const trimmed = surface.trim();
    if (trimmed.length === 0 || seen.has(trimmed)) {
      continue;
    }
    seen.add(trimmed);
    out.push(trimmed);
  }
  return out;
}

/** Pull phrase surfaces out of a decomposed-phrases file's entries. */
export function surfacesFromPhraseEntries(entries: JsonlEntry[], path: string): string[] {
  const surfaces: string[] = [];
  for (const { line, value } of entries) {
    if (typeof value !== "object" || value === null) {
      throw new AdapterError(`${path}:${line}: expected an object`);
    }
    const phrases = (value as { phrases?: unknown }).phrases;
    if (phrases === undefined) {
      continue;
    }
    if (!Array.isArray(phrases)) {
      throw new AdapterError(`${path}:${line}: phrases must be an array`);
    }
    for (const phrase of phrases) {
      const surface = (phrase as { surface?: unknown })?.surface;
      if (typeof surface !== "string") {
        throw new AdapterError(`${path}:${line}: phrase without a surface string`);
      }
      surfaces.push(surface);
    }
  }
  return uniqueSurfaces(surfaces);
}

function phraseKey(surface: string, mentionIndex: number): string {
  return `${surface.replace(/\s+/g, "_")}#${mentionIndex}`;
}

/**
 * Ground every phrase on every image and emit raw detections.
 *
 * Each detector hit is segmented into a soft mask at image resolution and
 * embedded as a region. Output lines cover every decodable image, including
 * ones with no hits (an empty phrase list yields empty detection lists);
 * undecodable images are skipped with a per-file error.
 */
export function adaptDetections(imagePaths: string[], surfaces: string[],
                                backend: VisionBackend): DetectionsResult {
  checkDuplicateIds(imagePaths);
  const phrases = uniqueSurfaces(surfaces);
  const lines: DetectionLine[] = [];
  const skipped: SkippedFile[] = [];
  for (const path of imagePaths) {
    const image = decodeOrSkip(path, skipped);
    if (image === null) {
      continue;
    }
    const imageId = imageIdFor(path);
    const hits: Array<{ surface: string; mention: number; grounding: Grounding }> = [];
    for (const surface of phrases) {
      backend.ground(image, surface).forEach((grounding, mention) => {
        hits.push({ surface, mention, grounding });
      });
    }
    const masks = hits.map((hit) => backend.segment(image, hit.grounding.bbox));
    const fragments = extractRegionEmbeddings(image, masks, backend, imageId);
    const detections = fragments.map(({ index, embedding }) => {
      const { surface, mention, grounding } = hits[index];
      return {
        phrase_key: phraseKey(surface, mention),
        bbox: grounding.bbox,
        confidence: grounding.confidence,
        soft_mask: maskRows(masks[index], image.width, image.height),
        embedding,
      };
    });
    lines.push({ image_id: imageId, detections });
    console.log(`grounded ${imageId}: ${detections.length} detections from ${phrases.length} phrases`);
  }
  return { lines, skipped };
}

function maskRows(mask: Float64Array, width: number, height: number): number[][] {
  const rows: number[][] = new Array(height);
  for (let y = 0; y < height; y++) {
    rows[y] = Array.from(mask.subarray(y * width, (y + 1) * width));
  }
  return rows;
}

/**
 * Embed raw query specs into the engine's query file format.
 *
 * Input entries must carry `query_id`, `text`, and a non-empty
 * `gt_image_ids` array; `gold_answer` passes through when present. Any
 * malformed entry fails the run with its line number — queries are the
 * measurement frame, so none may be dropped silently.
 */
export function adaptQueries(entries: JsonlEntry[], backend: VisionBackend,
                             path: string): QueryLine[] {
  const out: QueryLine[] = [];
  const seen = new Set<string>();
  for (const { line, value } of entries) {
    const fail = (detail: string): never => {
      throw new AdapterError(`${path}:${line}: ${detail}`);
    };
    if (typeof value !== "object" || value === null || Array.isArray(value)) {
      fail("expected an object");
    }
    const raw = value as Record<string, unknown>;
    const queryId = raw.query_id;
    if (typeof queryId !== "string" || queryId.length === 0) {
      fail("query_id must be a non-empty string");
    }
    if (seen.has(queryId as string)) {
      fail(`duplicate query_id ${JSON.stringify(queryId)}`);
    }
    seen.add(queryId as string);
    const text = raw.text;
    if (typeof text !== "string" || text.trim().length === 0) {
      fail(`query ${JSON.stringify(queryId)}: text must be a non-empty string`);
    }
    const gt = raw.gt_image_ids;
    if (!Array.isArray(gt) || gt.length === 0
        || gt.some((g) => typeof g !== "string" || g.length === 0)) {
      fail(`query ${JSON.stringify(queryId)}: gt_image_ids must be a non-empty array of ids`);
    }
    const lineOut: QueryLine = {
      query_id: queryId as string,
      text: text as string,
      embedding: backend.encodeText(text as string),
      gt_image_ids: (gt as string[]).slice(),
    };
    if (raw.gold_answer !== undefined) {
      if (typeof raw.gold_answer !== "string") {
        fail(`query ${JSON.stringify(queryId)}: gold_answer must be a string`);
      }
      lineOut.gold_answer = raw.gold_answer as string;
    }
    out.push(lineOut);
  }
  return out;
}

function cosine(a: number[], b: number[]): number {
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const denom = Math.sqrt(na) * Math.sqrt(nb);
  return denom === 0 ? 0 : dot / denom;
}

/**
 * Build a contrastive similarity batch from adapted corpus and query files.
 *
 * Row i holds query i's similarity to every selected query's first ground
 * truth image, so the diagonal is the matched pair. The engine's objectives
 * evaluator consumes this document directly; running it before and after an
 * encoder change turns the change into a single comparable loss number.
 */
export function exportLossBatch(corpusLines: Array<{ image_id: string; embedding: number[] }>,
                                queryLines: Array<{ query_id: string; embedding: number[]; gt_image_ids: string[] }>,
                                temperature: number): { sim_matrix: number[][]; temperature: number } {
  if (!(temperature > 0)) {
    throw new AdapterError(`temperature must be positive, got ${temperature}`);
  }
  const imageEmbeddings = new Map(corpusLines.map((c) => [c.image_id, c.embedding]));
  const pairs: Array<{ query: number[]; image: number[] }> = [];
  for (const query of queryLines) {
    const gtId = query.gt_image_ids.find((id) => imageEmbeddings.has(id));
    if (gtId === undefined) {
      console.warn(`query ${query.query_id}: no ground-truth image in corpus, excluded from batch`);
      continue;
    }
    pairs.push({ query: query.embedding, image: imageEmbeddings.get(gtId)! });
  }
  if (pairs.length < 2) {
    throw new AdapterError(
      `contrastive batch needs at least two query/image pairs, got ${pairs.length}`);
  }
  const matrix = pairs.map(({ query }) =>
    pairs.map(({ image }) => cosine(query, image)));
  return { sim_matrix: matrix, temperature };
}
