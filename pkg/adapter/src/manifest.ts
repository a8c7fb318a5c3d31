/**
 * Adapter manifest: the single record of which models produced a set of
 * output files and under what preprocessing settings.
 *
 * Everything that can change an emitted byte lives here — model identifiers,
 * the checkpoint tag, the encoder resize target, the embedding width, the
 * batch size, and the seed — so that a manifest plus the input files fully
 * determines the outputs.
 */

import { existsSync, readFileSync, writeFileSync } from "node:fs";

/** Identifiers of the models behind each adapter role. */
export interface ModelIds {
  /** Whole-image embedding model. */
  imageEncoder: string;
  /** Mask-conditioned region embedding model. */
  regionEncoder: string;
  /** Phrase-conditioned box detector. */
  detector: string;
  /** Box-prompted segmenter producing soft masks. */
  segmenter: string;
  /** Query text embedding model (shares the image encoder's space). */
  textEncoder: string;
  /** Checkpoint tag distinguishing fine-tuned weights from the base release. */
  checkpoint: string;
}

/** Paths of the files a run has produced, keyed by kind. */
export interface OutputPaths {
  corpus?: string;
  detections?: string;
  queries?: string;
  loss?: string;
}

export interface AdapterManifest {
  models: ModelIds;
  /** Encoder input size; images are resized to this before encoding. */
  resize: { width: number; height: number };
  /** Embedding dimensionality shared by image, region, and text encoders. */
  embeddingDim: number;
  /** Number of images encoded per progress batch. */
  batchSize: number;
  /** Global seed mixed into every stochastic choice. */
  seed: number;
  outputs: OutputPaths;
}

/** Raised when a manifest file is malformed. */
export class ManifestError extends Error {
  constructor(detail: string) {
    super(`manifest: ${detail}`);
    this.name = "ManifestError";
  }
}

export const DEFAULT_MANIFEST: AdapterManifest = {
  models: {
    imageEncoder: "clip-vit-l-14-336",
    regionEncoder: "alpha-clip-vit-l-14-336",
    detector: "grounding-dino-swin-t",
    segmenter: "sam-vit-h",
    textEncoder: "clip-vit-l-14-336",
    checkpoint: "base",
  },
  resize: { width: 336, height: 336 },
  embeddingDim: 768,
  batchSize: 8,
  seed: 0,
  outputs: {},
};

const MODEL_KEYS: Array<keyof ModelIds> = [
  "imageEncoder", "regionEncoder", "detector", "segmenter", "textEncoder", "checkpoint",
];
const OUTPUT_KEYS = ["corpus", "detections", "queries", "loss"];
const TOP_KEYS = ["models", "resize", "embeddingDim", "batchSize", "seed", "outputs"];

function clone(manifest: AdapterManifest): AdapterManifest {
  return {
    models: { ...manifest.models },
    resize: { ...manifest.resize },
    embeddingDim: manifest.embeddingDim,
    batchSize: manifest.batchSize,
    seed: manifest.seed,
    outputs: { ...manifest.outputs },
  };
}

function requirePositiveInt(value: unknown, label: string): number {
  if (typeof value !== "number" || !Number.isInteger(value) || value < 1) {
    throw new ManifestError(`${label} must be a positive integer, got ${JSON.stringify(value)}`);
  }
  return value;
}

function rejectUnknown(raw: Record<string, unknown>, allowed: string[], scope: string): void {
  for (const key of Object.keys(raw)) {
    if (!allowed.includes(key)) {
      throw new ManifestError(`unknown ${scope} key ${JSON.stringify(key)}`);
    }
  }
}

/**
 * Merge a partial manifest document over the defaults and validate it.
 *
 * Unknown keys are rejected rather than ignored so that a typo in a settings
 * file fails loudly instead of silently running with defaults.
 */
export function resolveManifest(raw: unknown): AdapterManifest {
  const out = clone(DEFAULT_MANIFEST);
  if (raw === undefined || raw === null) {
    return out;
  }
  if (typeof raw !== "object" || Array.isArray(raw)) {
    throw new ManifestError("document must be a JSON object");
  }
  const doc = raw as Record<string, unknown>;
  rejectUnknown(doc, TOP_KEYS, "manifest");

  if (doc.models !== undefined) {
    if (typeof doc.models !== "object" || doc.models === null || Array.isArray(doc.models)) {
      throw new ManifestError("models must be an object");
    }
    const models = doc.models as Record<string, unknown>;
    rejectUnknown(models, MODEL_KEYS, "models");
    for (const key of MODEL_KEYS) {
      if (models[key] !== undefined) {
        const value = models[key];
        if (typeof value !== "string" || value.length === 0) {
          throw new ManifestError(`models.${key} must be a non-empty string`);
        }
        out.models[key] = value;
      }
    }
  }

  if (doc.resize !== undefined) {
    if (typeof doc.resize !== "object" || doc.resize === null || Array.isArray(doc.resize)) {
      throw new ManifestError("resize must be an object with width and height");
    }
    const resize = doc.resize as Record<string, unknown>;
    rejectUnknown(resize, ["width", "height"], "resize");
    if (resize.width !== undefined) {
      out.resize.width = requirePositiveInt(resize.width, "resize.width");
    }
    if (resize.height !== undefined) {
      out.resize.height = requirePositiveInt(resize.height, "resize.height");
    }
  }

  if (doc.embeddingDim !== undefined) {
    out.embeddingDim = requirePositiveInt(doc.embeddingDim, "embeddingDim");
  }
  if (doc.batchSize !== undefined) {
    out.batchSize = requirePositiveInt(doc.batchSize, "batchSize");
  }
  if (doc.seed !== undefined) {
    if (typeof doc.seed !== "number" || !Number.isInteger(doc.seed) || doc.seed < 0) {
      throw new ManifestError(`seed must be a non-negative integer, got ${JSON.stringify(doc.seed)}`);
    }
    out.seed = doc.seed;
  }

  if (doc.outputs !== undefined) {
    if (typeof doc.outputs !== "object" || doc.outputs === null || Array.isArray(doc.outputs)) {
      throw new ManifestError("outputs must be an object");
    }
    const outputs = doc.outputs as Record<string, unknown>;
    rejectUnknown(outputs, OUTPUT_KEYS, "outputs");
    for (const key of OUTPUT_KEYS as Array<keyof OutputPaths>) {
      if (outputs[key] !== undefined) {
        const value = outputs[key];
        if (typeof value !== "string" || value.length === 0) {
          throw new ManifestError(`outputs.${key} must be a non-empty string`);
        }
        out.outputs[key] = value;
      }
    }
  }

  return out;
}

/**
 * Load a manifest file, or return the defaults when no path is given.
 */
export function loadManifest(path?: string): AdapterManifest {
  if (path === undefined) {
    return clone(DEFAULT_MANIFEST);
  }
  let text: string;
  try {
    text = readFileSync(path, "utf8");
  } catch (err) {
    throw new ManifestError(`cannot read ${path}: ${(err as Error).message}`);
  }
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (err) {
    throw new ManifestError(`${path} is not valid JSON: ${(err as Error).message}`);
  }
  return resolveManifest(raw);
}

/**
 * Write a manifest, merging its output paths over any existing file's.
 *
 * Sequential adapter commands pointed at the same manifest path accumulate
 * their output records into one document.
 */
export function saveManifest(path: string, manifest: AdapterManifest): void {
  const merged = clone(manifest);
  if (existsSync(path)) {
    const previous = loadManifest(path);
    merged.outputs = { ...previous.outputs, ...manifest.outputs };
  }
  writeFileSync(path, JSON.stringify(merged, null, 2) + "\n", "utf8");
}
