/**
 * Line-delimited JSON helpers and the adapter's user-facing error type.
 */

import { readFileSync, writeFileSync } from "node:fs";

/** Raised for input problems the operator must fix; shown without a stack. */
export class AdapterError extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = "AdapterError";
  }
}

/** One parsed JSONL entry with its 1-indexed source line. */
export interface JsonlEntry {
  line: number;
  value: unknown;
}

/**
 * Read a JSONL file, skipping blank lines.
 *
 * @throws {AdapterError} With `path:line:` context on unreadable files or
 *   malformed JSON.
 */
export function readJsonlFile(path: string): JsonlEntry[] {
  let text: string;
  try {
    text = readFileSync(path, "utf8");
  } catch (err) {
    throw new AdapterError(`cannot read ${path}: ${(err as Error).message}`);
  }
  const entries: JsonlEntry[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const trimmed = lines[i].trim();
    if (trimmed.length === 0) {
      continue;
    }
    try {
      entries.push({ line: i + 1, value: JSON.parse(trimmed) });
    } catch (err) {
      throw new AdapterError(`${path}:${i + 1}: invalid JSON: ${(err as Error).message}`);
    }
  }
  return entries;
}

/** Write records as JSONL, one compact JSON document per line. */
export function writeJsonlFile(path: string, records: unknown[]): void {
  const body = records.map((r) => JSON.stringify(r)).join("\n");
  writeFileSync(path, records.length > 0 ? body + "\n" : "", "utf8");
}

/** Write one value as a single JSON document. */
export function writeJsonFile(path: string, value: unknown): void {
  writeFileSync(path, JSON.stringify(value) + "\n", "utf8");
}
