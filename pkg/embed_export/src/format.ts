/** Binary embedding file: one JSON header line, then length-prefixed records.
 *
 * Layout (all integers u32 little-endian, all floats f32 little-endian):
 *   header JSON + "\n"   -- must carry {"dim": D, "count": K}; extra keys ok
 *   K records of:
 *     key length, UTF-8 key, token count, token_count * D floats row-major
 *
 * Values are stored at single precision; readers that work in doubles widen
 * losslessly, so a write/read/write cycle is byte-stable.
 */

import { DimMismatch } from "./errors.js";

export interface EmbeddingEntry {
  key: string;
  /** One row per token, each row `dim` wide. */
  matrix: Float32Array[];
}

export interface EmbeddingHeader {
  dim: number;
  count: number;
  [extra: string]: unknown;
}

export function serializeEmbeddingFile(
  dim: number,
  entries: EmbeddingEntry[],
  headerExtras: Record<string, unknown> = {},
): Buffer {
  const header: EmbeddingHeader = { dim, count: entries.length, ...headerExtras };
  const parts: Buffer[] = [Buffer.from(JSON.stringify(header) + "\n", "utf-8")];
  for (const entry of entries) {
    for (const row of entry.matrix) {
      if (row.length !== dim) {
        throw new DimMismatch(
          `entry ${JSON.stringify(entry.key)} has a row of width ${row.length}, dim ${dim} required`,
        );
      }
    }
    const keyBytes = Buffer.from(entry.key, "utf-8");
    const prefix = Buffer.alloc(4 + keyBytes.length + 4);
    prefix.writeUInt32LE(keyBytes.length, 0);
    keyBytes.copy(prefix, 4);
    prefix.writeUInt32LE(entry.matrix.length, 4 + keyBytes.length);
    parts.push(prefix);
    const payload = Buffer.alloc(entry.matrix.length * dim * 4);
    entry.matrix.forEach((row, i) => {
      for (let j = 0; j < dim; j++) {
        payload.writeFloatLE(row[j]!, (i * dim + j) * 4);
      }
    });
    parts.push(payload);
  }
  return Buffer.concat(parts);
}

export function parseEmbeddingFile(blob: Buffer): {
  header: EmbeddingHeader;
  entries: EmbeddingEntry[];
} {
  const newline = blob.indexOf(0x0a);
  if (newline < 0) {
    throw new Error("embedding file has no header line");
  }
  let header: EmbeddingHeader;
  try {
    header = JSON.parse(blob.subarray(0, newline).toString("utf-8"));
  } catch (err) {
    throw new Error(`bad embedding header: ${(err as Error).message}`);
  }
  const dim = header.dim;
  const count = header.count;
  if (!Number.isInteger(dim) || !Number.isInteger(count) || dim < 1 || count < 0) {
    throw new Error(`bad embedding header: dim=${dim} count=${count}`);
  }
  let offset = newline + 1;
  const need = (n: number) => {
    if (offset + n > blob.length) {
      throw new Error(`truncated embedding file at byte ${offset}`);
    }
  };
  const entries: EmbeddingEntry[] = [];
  for (let k = 0; k < count; k++) {
    need(4);
    const keyLen = blob.readUInt32LE(offset);
    offset += 4;
    need(keyLen + 4);
    const key = blob.subarray(offset, offset + keyLen).toString("utf-8");
    offset += keyLen;
    const tokenCount = blob.readUInt32LE(offset);
    offset += 4;
    need(tokenCount * dim * 4);
    const matrix: Float32Array[] = [];
    for (let i = 0; i < tokenCount; i++) {
      const row = new Float32Array(dim);
      for (let j = 0; j < dim; j++) {
        row[j] = blob.readFloatLE(offset);
        offset += 4;
      }
      matrix.push(row);
    }
    entries.push({ key, matrix });
  }
  if (offset !== blob.length) {
    throw new Error(`trailing bytes after ${count} records`);
  }
  return { header, entries };
}
