/** Shared fixture builders for the adapter tests. */

import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { AdapterManifest, resolveManifest } from "../src/manifest.js";
import { RawImage, writePpm } from "../src/ppm.js";

/** Deterministic RGB test pattern; `tag` varies the content between images. */
export function makeTestImage(width: number, height: number, tag: number): RawImage {
  const pixels = Buffer.alloc(width * height * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const p = (y * width + x) * 3;
      pixels[p] = (tag * 41 + x * 7) % 256;
      pixels[p + 1] = (tag * 83 + y * 11) % 256;
      pixels[p + 2] = (tag * 131 + x * 3 + y * 5) % 256;
    }
  }
  return { width, height, pixels };
}

/** Write `count` patterned images named img0000.ppm ... into a fresh dir. */
export function writeImageDir(parent: string, count: number,
                              width = 24, height = 18): string {
  const dir = mkdtempSync(join(parent, "images-"));
  for (let i = 0; i < count; i++) {
    writePpm(join(dir, `img${String(i).padStart(4, "0")}.ppm`),
             makeTestImage(width, height, i));
  }
  return dir;
}

export function tempDir(prefix: string): string {
  return mkdtempSync(join(tmpdir(), prefix));
}

/** Small, fast manifest for unit tests (full-size defaults stay covered too). */
export function testManifest(overrides: Record<string, unknown> = {}): AdapterManifest {
  return resolveManifest({
    resize: { width: 32, height: 32 },
    embeddingDim: 16,
    batchSize: 2,
    ...overrides,
  });
}
