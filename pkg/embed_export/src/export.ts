/** Orchestration: manifest in, binary embedding file out. */

import { writeFileSync } from "node:fs";

import { UsageError } from "./errors.js";
import { EmbeddingEntry, serializeEmbeddingFile } from "./format.js";
import { HashEncoder } from "./hash.js";
import { ManifestEntry } from "./manifest.js";

export interface TokenEncoder {
  dim: number;
  /** Recorded in the file header so consumers can see how rows map to words. */
  headerExtras: Record<string, unknown>;
  encode(text: string): Promise<Float64Array[]> | Float64Array[];
}

const HASH_MODEL_RE = /^feature-hash(?::(\d+))?(?::(\d+))?$/;

/** Resolve a --model name to a backend. Everything that is not the built-in
 * hashing reference is treated as a pretrained-transformer identifier. */
export async function resolveEncoder(model: string, dim: number): Promise<TokenEncoder> {
  const hash = HASH_MODEL_RE.exec(model);
  if (hash) {
    const seed = hash[1] === undefined ? 0 : Number(hash[1]);
    const window = hash[2] === undefined ? 3 : Number(hash[2]);
    const encoder = new HashEncoder(dim, seed, window);
    return {
      dim,
      headerExtras: {
        model: `feature-hash:${seed}:${window}`,
        tokenizer: "word-regex",
        pooling: "none",
      },
      encode: (text) => encoder.encodeTokens(text).vectors,
    };
  }
  const { loadTransformerEncoder } = await import("./transformer.js");
  return loadTransformerEncoder(model, dim);
}

export function toFloat32Rows(vectors: Float64Array[]): Float32Array[] {
  return vectors.map((row) => Float32Array.from(row));
}

export async function exportManifest(
  entries: ManifestEntry[],
  encoder: TokenEncoder,
): Promise<Buffer> {
  const out: EmbeddingEntry[] = [];
  for (const entry of entries) {
    const vectors = await encoder.encode(entry.text);
    out.push({ key: entry.key, matrix: toFloat32Rows(vectors) });
  }
  return serializeEmbeddingFile(encoder.dim, out, encoder.headerExtras);
}

export interface ExportOptions {
  manifest: ManifestEntry[];
  outPath: string;
  model: string;
  dim: number;
}

export async function runExport(options: ExportOptions): Promise<void> {
  if (!Number.isInteger(options.dim) || options.dim < 1) {
    throw new UsageError(`--dim must be a positive integer, got ${options.dim}`);
  }
  const encoder = await resolveEncoder(options.model, options.dim);
  const blob = await exportManifest(options.manifest, encoder);
  writeFileSync(options.outPath, blob);
}
