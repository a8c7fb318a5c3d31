/**
 * Minimal binary PPM (P6) image handling.
 *
 * The adapter's image fixtures and inputs use the uncompressed PPM format so
 * that no native decoding library is needed. Real deployments would swap in a
 * richer decoder behind the same RawImage shape.
 */

import { createHash } from "node:crypto";
import { readFileSync, writeFileSync } from "node:fs";

/** Decoded RGB image: `pixels` holds 3 bytes per pixel, row-major. */
export interface RawImage {
  width: number;
  height: number;
  pixels: Buffer;
}

/** Raised when a file cannot be decoded as a P6 image. */
export class ImageFormatError extends Error {
  /** The defect alone, without the path prefix of `message`. */
  readonly detail: string;

  constructor(path: string, detail: string) {
    super(`${path}: ${detail}`);
    this.name = "ImageFormatError";
    this.detail = detail;
  }
}

const WHITESPACE = new Set([0x20, 0x09, 0x0a, 0x0d, 0x0b, 0x0c]);
const HASH = 0x23; // '#'

/**
 * Read a binary PPM (P6) file.
 *
 * Supports `#` comments in the header and requires an 8-bit maxval. The pixel
 * payload must contain exactly width*height*3 bytes.
 *
 * @throws {ImageFormatError} On any header or payload defect.
 */
export function readPpm(path: string): RawImage {
  let data: Buffer;
  try {
    data = readFileSync(path);
  } catch (err) {
    throw new ImageFormatError(path, `unreadable: ${(err as Error).message}`);
  }
  if (data.length < 2 || data[0] !== 0x50 || data[1] !== 0x36) {
    throw new ImageFormatError(path, "bad magic, expected P6");
  }

  let pos = 2;
  const nextInt = (label: string): number => {
    // Skip whitespace and comment lines before the token.
    while (pos < data.length) {
      if (WHITESPACE.has(data[pos])) {
        pos += 1;
      } else if (data[pos] === HASH) {
        while (pos < data.length && data[pos] !== 0x0a) pos += 1;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < data.length && data[pos] >= 0x30 && data[pos] <= 0x39) pos += 1;
    if (pos === start) {
      throw new ImageFormatError(path, `missing ${label} in header`);
    }
    return Number.parseInt(data.toString("ascii", start, pos), 10);
  };

  const width = nextInt("width");
  const height = nextInt("height");
  const maxval = nextInt("maxval");
  if (width < 1 || height < 1) {
    throw new ImageFormatError(path, `degenerate dimensions ${width}x${height}`);
  }
  if (maxval !== 255) {
    throw new ImageFormatError(path, `unsupported maxval ${maxval}, expected 255`);
  }
  if (pos >= data.length || !WHITESPACE.has(data[pos])) {
    throw new ImageFormatError(path, "missing separator before pixel data");
  }
  pos += 1; // exactly one whitespace byte separates header and payload

  const expected = width * height * 3;
  const pixels = data.subarray(pos);
  if (pixels.length < expected) {
    throw new ImageFormatError(
      path, `truncated pixel data: ${pixels.length} bytes, expected ${expected}`);
  }
  if (pixels.length > expected) {
    throw new ImageFormatError(
      path, `trailing bytes after pixel data: ${pixels.length - expected}`);
  }
  return { width, height, pixels: Buffer.from(pixels) };
}

/** Write a binary PPM (P6) file. */
export function writePpm(path: string, image: RawImage): void {
  const expected = image.width * image.height * 3;
  if (image.pixels.length !== expected) {
    throw new Error(
      `pixel buffer is ${image.pixels.length} bytes, expected ${expected}`);
  }
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  writeFileSync(path, Buffer.concat([header, image.pixels]));
}

/**
 * Nearest-neighbour resize to the given target dimensions.
 *
 * Uses floor mapping (source index = floor(dst * src / target)), which keeps
 * the operation exactly reproducible across platforms.
 */
export function resizeNearest(image: RawImage, width: number, height: number): RawImage {
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new Error(`resize target must be positive integers, got ${width}x${height}`);
  }
  const out = Buffer.alloc(width * height * 3);
  for (let y = 0; y < height; y++) {
    const sy = Math.min(image.height - 1, Math.floor((y * image.height) / height));
    for (let x = 0; x < width; x++) {
      const sx = Math.min(image.width - 1, Math.floor((x * image.width) / width));
      const src = (sy * image.width + sx) * 3;
      const dst = (y * width + x) * 3;
      out[dst] = image.pixels[src];
      out[dst + 1] = image.pixels[src + 1];
      out[dst + 2] = image.pixels[src + 2];
    }
  }
  return { width, height, pixels: out };
}

/** Content digest of an image (dimensions plus pixel bytes), as hex. */
export function imageDigest(image: RawImage): string {
  return createHash("sha256")
    .update(`${image.width}x${image.height}:`)
    .update(image.pixels)
    .digest("hex");
}
