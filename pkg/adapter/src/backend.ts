/**
 * Vision backend interface and the digest-seeded reference implementation.
 *
 * The adapter talks to its models through the VisionBackend interface: an
 * image/text encoder pair sharing one embedding space, a mask-conditioned
 * region encoder, a phrase-conditioned box detector, and a box-prompted
 * segmenter. A deployment with GPU weights implements this interface with
 * real model calls; this module ships DigestBackend, a stand-in whose every
 * output is a pure function of (model id, checkpoint, seed, input bytes).
 * That preserves the two contracts the downstream engine cares about —
 * output file formats and byte-level determinism — without requiring any
 * model weights in the environment.
 */

import { createHash } from "node:crypto";
import { AdapterManifest } from "./manifest.js";
import { RawImage, imageDigest, resizeNearest } from "./ppm.js";
import { seededStream, unitVector } from "./prng.js";

/** Axis-aligned box in pixel coordinates: [x0, y0, x1, y1], exclusive end. */
export type Bbox = [number, number, number, number];

/** One detector hit: a box and its pre-threshold confidence. */
export interface Grounding {
  bbox: Bbox;
  confidence: number;
}

export interface VisionBackend {
  /** Embedding width shared by all three encoders. */
  readonly dim: number;
  /** Whole-image embedding; the image is resized internally before encoding. */
  encodeImage(image: RawImage): number[];
  /** Text embedding in the same space as encodeImage. */
  encodeText(text: string): number[];
  /**
   * Region embedding conditioned on a soft mask at image resolution. The
   * mask rides along as an extra input channel, so the same pixels under a
   * different mask embed differently.
   */
  encodeRegion(image: RawImage, softMask: Float64Array): number[];
  /**
   * Detect a phrase on an image. Boxes are in original pixel coordinates.
   * Confidences are raw detector scores — no threshold is applied here; the
   * consumer decides what to keep.
   */
  ground(image: RawImage, phrase: string): Grounding[];
  /**
   * Soft foreground mask for a box prompt, one value per pixel in [0, 1] at
   * original image resolution, row-major.
   */
  segment(image: RawImage, bbox: Bbox): Float64Array;
}

/** Fraction of (image, phrase) pairs where the detector finds nothing. */
const MISS_RATE = 0.15;

function round4(value: number): number {
  return Math.round(value * 1e4) / 1e4;
}

/** Nearest-neighbour resize of a row-major float mask. */
function resizeMask(mask: Float64Array, srcW: number, srcH: number,
                    dstW: number, dstH: number): Float64Array {
  const out = new Float64Array(dstW * dstH);
  for (let y = 0; y < dstH; y++) {
    const sy = Math.min(srcH - 1, Math.floor((y * srcH) / dstH));
    for (let x = 0; x < dstW; x++) {
      const sx = Math.min(srcW - 1, Math.floor((x * srcW) / dstW));
      out[y * dstW + x] = mask[sy * srcW + sx];
    }
  }
  return out;
}

/**
 * Reference backend: embeddings and detections derived from content digests.
 *
 * Outputs look statistically like model outputs (unit-norm embeddings,
 * plausible box geometry, bimodal soft masks) and are reproducible from the
 * manifest plus the input bytes alone.
 */
export class DigestBackend implements VisionBackend {
  readonly dim: number;

  constructor(private readonly manifest: AdapterManifest) {
    this.dim = manifest.embeddingDim;
  }

  /** Resize to the encoder input size recorded in the manifest. */
  private encoderView(image: RawImage): RawImage {
    return resizeNearest(image, this.manifest.resize.width, this.manifest.resize.height);
  }

  encodeImage(image: RawImage): number[] {
    const view = this.encoderView(image);
    const draw = seededStream(
      "image-encode", this.manifest.models.imageEncoder,
      this.manifest.models.checkpoint, this.manifest.seed, imageDigest(view));
    return unitVector(this.dim, draw);
  }

  encodeText(text: string): number[] {
    const draw = seededStream(
      "text-encode", this.manifest.models.textEncoder,
      this.manifest.models.checkpoint, this.manifest.seed, text);
    return unitVector(this.dim, draw);
  }

  encodeRegion(image: RawImage, softMask: Float64Array): number[] {
    const expected = image.width * image.height;
    if (softMask.length !== expected) {
      throw new Error(
        `soft mask has ${softMask.length} values, image needs ${expected}`);
    }
    const view = this.encoderView(image);
    // The mask is resized alongside the pixels and quantized to bytes, the
    // same way an alpha channel would be preprocessed.
    const alpha = resizeMask(softMask, image.width, image.height,
                             view.width, view.height);
    const alphaBytes = Buffer.alloc(alpha.length);
    for (let i = 0; i < alpha.length; i++) {
      alphaBytes[i] = Math.max(0, Math.min(255, Math.round(alpha[i] * 255)));
    }
    const maskDigest = createHash("sha256").update(alphaBytes).digest("hex");
    const draw = seededStream(
      "region-encode", this.manifest.models.regionEncoder,
      this.manifest.models.checkpoint, this.manifest.seed,
      imageDigest(view), maskDigest);
    return unitVector(this.dim, draw);
  }

  ground(image: RawImage, phrase: string): Grounding[] {
    const draw = seededStream(
      "ground", this.manifest.models.detector,
      this.manifest.models.checkpoint, this.manifest.seed,
      imageDigest(image), phrase);
    if (draw() < MISS_RATE) {
      return [];
    }
    const w = image.width;
    const h = image.height;
    const boxW = Math.min(w, Math.max(2, Math.round(w * (0.25 + 0.5 * draw()))));
    const boxH = Math.min(h, Math.max(2, Math.round(h * (0.25 + 0.5 * draw()))));
    const x0 = Math.round((w - boxW) * draw());
    const y0 = Math.round((h - boxH) * draw());
    // Raw score: most hits are confident, some fall below typical keep
    // thresholds so that downstream filtering has work to do.
    const confidence = round4(0.2 + 0.75 * draw());
    return [{ bbox: [x0, y0, x0 + boxW, y0 + boxH], confidence }];
  }

  segment(image: RawImage, bbox: Bbox): Float64Array {
    const [x0, y0, x1, y1] = bbox;
    if (!(0 <= x0 && x0 < x1 && x1 <= image.width
          && 0 <= y0 && y0 < y1 && y1 <= image.height)) {
      throw new Error(`box [${bbox.join(", ")}] outside ${image.width}x${image.height}`);
    }
    const draw = seededStream(
      "segment", this.manifest.models.segmenter,
      this.manifest.models.checkpoint, this.manifest.seed,
      imageDigest(image), bbox.join(","));
    const inside = round4(0.82 + 0.15 * draw());
    const outside = round4(0.02 + 0.1 * draw());
    const mask = new Float64Array(image.width * image.height);
    for (let y = 0; y < image.height; y++) {
      const covered = y0 <= y && y < y1;
      for (let x = 0; x < image.width; x++) {
        mask[y * image.width + x] = covered && x0 <= x && x < x1 ? inside : outside;
      }
    }
    return mask;
  }
}
