#!/usr/bin/env node
/**
 * Command line for the adapter.
 *
 * Commands:
 *   adapt-corpus      encode a directory of images into a corpus file
 *   adapt-detections  ground phrases on images into a raw detections file
 *   adapt-queries     embed raw query specs into a query file
 *   export-loss       build a contrastive loss batch from adapted files
 *
 * Every command accepts --manifest to override model/preprocessing settings
 * and --manifest-out to record the run's settings and output paths.
 */

import { readdirSync } from "node:fs";
import { join, resolve } from "node:path";
import { parseArgs } from "node:util";
import {
  adaptCorpus, adaptDetections, adaptQueries, exportLossBatch,
  surfacesFromPhraseEntries,
} from "./adapt.js";
import { DigestBackend } from "./backend.js";
import { AdapterError, readJsonlFile, writeJsonFile, writeJsonlFile } from "./io.js";
import {
  AdapterManifest, ManifestError, OutputPaths, loadManifest, saveManifest,
} from "./manifest.js";
import { ImageFormatError } from "./ppm.js";

const USAGE = `usage: hulirag-adapt <command> [options]

commands:
  adapt-corpus      --images <dir> --out <file> [--manifest <file>] [--manifest-out <file>]
  adapt-detections  --images <dir> --phrases <file> --out <file> [--manifest <file>] [--manifest-out <file>]
  adapt-queries     --queries <file> --out <file> [--manifest <file>] [--manifest-out <file>]
  export-loss       --corpus <file> --queries <file> --out <file> [--temperature <t>] [--manifest <file>] [--manifest-out <file>]
`;

/** List a directory's .ppm files in sorted order. */
function listPpmFiles(dir: string): string[] {
  let names: string[];
  try {
    names = readdirSync(dir);
  } catch (err) {
    throw new AdapterError(`cannot list ${dir}: ${(err as Error).message}`);
  }
  const files = names
    .filter((n) => n.toLowerCase().endsWith(".ppm"))
    .sort()
    .map((n) => join(dir, n));
  if (files.length === 0) {
    throw new AdapterError(`no .ppm files in ${dir}`);
  }
  return files;
}

interface ParsedCommand {
  values: Record<string, string | undefined>;
}

function parseCommand(args: string[], flags: Record<string, { required: boolean }>,
                      command: string): ParsedCommand {
  const options: Record<string, { type: "string" }> = {};
  for (const name of Object.keys(flags)) {
    options[name] = { type: "string" };
  }
  let values: Record<string, string | undefined>;
  try {
    ({ values } = parseArgs({ args, options, allowPositionals: false }));
  } catch (err) {
    throw new AdapterError(`${command}: ${(err as Error).message}`);
  }
  for (const [name, spec] of Object.entries(flags)) {
    if (spec.required && values[name] === undefined) {
      throw new AdapterError(`${command}: --${name} is required`);
    }
  }
  return { values };
}

function recordOutputs(manifestOut: string | undefined, manifest: AdapterManifest,
                       outputs: OutputPaths): void {
  if (manifestOut === undefined) {
    return;
  }
  const doc = { ...manifest, outputs: { ...manifest.outputs } };
  for (const [kind, path] of Object.entries(outputs)) {
    doc.outputs[kind as keyof OutputPaths] = resolve(path);
  }
  saveManifest(manifestOut, doc);
  console.log(`manifest written to ${manifestOut}`);
}

function runAdaptCorpus(args: string[]): void {
  const { values } = parseCommand(args, {
    images: { required: true },
    out: { required: true },
    manifest: { required: false },
    "manifest-out": { required: false },
  }, "adapt-corpus");
  const manifest = loadManifest(values.manifest);
  const backend = new DigestBackend(manifest);
  const result = adaptCorpus(listPpmFiles(values.images!), backend, manifest.batchSize);
  writeJsonlFile(values.out!, result.lines);
  console.log(`wrote ${result.lines.length} corpus lines to ${values.out}`
    + (result.skipped.length > 0 ? ` (${result.skipped.length} files skipped)` : ""));
  recordOutputs(values["manifest-out"], manifest, { corpus: values.out! });
}

function runAdaptDetections(args: string[]): void {
  const { values } = parseCommand(args, {
    images: { required: true },
    phrases: { required: true },
    out: { required: true },
    manifest: { required: false },
    "manifest-out": { required: false },
  }, "adapt-detections");
  const manifest = loadManifest(values.manifest);
  const backend = new DigestBackend(manifest);
  const surfaces = surfacesFromPhraseEntries(readJsonlFile(values.phrases!), values.phrases!);
  const result = adaptDetections(listPpmFiles(values.images!), surfaces, backend);
  writeJsonlFile(values.out!, result.lines);
  const total = result.lines.reduce((n, line) => n + line.detections.length, 0);
  console.log(`wrote ${total} detections over ${result.lines.length} images to ${values.out}`
    + (result.skipped.length > 0 ? ` (${result.skipped.length} files skipped)` : ""));
  recordOutputs(values["manifest-out"], manifest, { detections: values.out! });
}

function runAdaptQueries(args: string[]): void {
  const { values } = parseCommand(args, {
    queries: { required: true },
    out: { required: true },
    manifest: { required: false },
    "manifest-out": { required: false },
  }, "adapt-queries");
  const manifest = loadManifest(values.manifest);
  const backend = new DigestBackend(manifest);
  const lines = adaptQueries(readJsonlFile(values.queries!), backend, values.queries!);
  writeJsonlFile(values.out!, lines);
  console.log(`wrote ${lines.length} queries to ${values.out}`);
  recordOutputs(values["manifest-out"], manifest, { queries: values.out! });
}

function runExportLoss(args: string[]): void {
  const { values } = parseCommand(args, {
    corpus: { required: true },
    queries: { required: true },
    out: { required: true },
    temperature: { required: false },
    manifest: { required: false },
    "manifest-out": { required: false },
  }, "export-loss");
  const manifest = loadManifest(values.manifest);
  const temperature = values.temperature === undefined ? 0.07 : Number(values.temperature);
  if (!Number.isFinite(temperature)) {
    throw new AdapterError(`export-loss: temperature must be a number, got ${values.temperature}`);
  }

  const corpusLines = readJsonlFile(values.corpus!).map(({ line, value }) => {
    const raw = value as { image_id?: unknown; embedding?: unknown };
    if (typeof raw?.image_id !== "string" || !Array.isArray(raw?.embedding)) {
      throw new AdapterError(`${values.corpus}:${line}: expected image_id and embedding`);
    }
    return { image_id: raw.image_id, embedding: raw.embedding as number[] };
  });
  const queryLines = readJsonlFile(values.queries!).map(({ line, value }) => {
    const raw = value as { query_id?: unknown; embedding?: unknown; gt_image_ids?: unknown };
    if (typeof raw?.query_id !== "string" || !Array.isArray(raw?.embedding)
        || !Array.isArray(raw?.gt_image_ids)) {
      throw new AdapterError(
        `${values.queries}:${line}: expected query_id, embedding, and gt_image_ids`);
    }
    return {
      query_id: raw.query_id,
      embedding: raw.embedding as number[],
      gt_image_ids: raw.gt_image_ids as string[],
    };
  });

  const batch = exportLossBatch(corpusLines, queryLines, temperature);
  writeJsonFile(values.out!, batch);
  console.log(`wrote ${batch.sim_matrix.length}x${batch.sim_matrix.length} similarity batch to ${values.out}`);
  recordOutputs(values["manifest-out"], manifest, { loss: values.out! });
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case "adapt-corpus":
        runAdaptCorpus(rest);
        return 0;
      case "adapt-detections":
        runAdaptDetections(rest);
        return 0;
      case "adapt-queries":
        runAdaptQueries(rest);
        return 0;
      case "export-loss":
        runExportLoss(rest);
        return 0;
      case undefined:
      case "--help":
      case "-h":
        process.stdout.write(USAGE);
        return command === undefined ? 1 : 0;
      default:
        throw new AdapterError(`unknown command ${JSON.stringify(command)}`);
    }
  } catch (err) {
    if (err instanceof AdapterError || err instanceof ManifestError
        || err instanceof ImageFormatError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    throw err;
  }
}

process.exit(main(process.argv.slice(2)));
