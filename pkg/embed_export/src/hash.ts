/** Self-contained reference encoder: keyed-hash token embeddings.
 *
 * Exists so the exporter can be exercised end to end, offline, and so its
 * files can be cross-checked against the consumer's built-in hashing
 * encoder. Recipe (must stay in lockstep with that consumer):
 *
 *   digest = blake2b(token_utf8, key = seed as 8 LE bytes, 20 bytes)
 *   4 chunks of 5 bytes; per chunk:
 *     bucket = u32 LE of bytes [0..4) modulo dim
 *     sign   = +1 if byte [4] is even else -1
 *     base[bucket] += sign / sqrt(4)
 *   context mixing, window w odd:
 *     mixed[i] = base[i] + sum_{1<=d<=(w-1)/2} 0.5^d (base[i-d] + base[i+d])
 *   (missing neighbors skipped)
 *
 * Tokens: lowercase [a-z0-9]+ runs, with decimal codes like 692.9 kept whole.
 */

import { blake2b } from "@noble/hashes/blake2.js";

const TOKEN_RE = /\d+\.\d+|[a-z0-9]+/g;
const HASH_CHUNKS = 4;
const CHUNK_BYTES = 5;

export function tokenize(text: string): string[] {
  return text.toLowerCase().match(TOKEN_RE) ?? [];
}

export class HashEncoder {
  readonly dim: number;
  readonly seed: number;
  readonly window: number;
  private readonly key: Uint8Array;
  private readonly cache = new Map<string, Float64Array>();

  constructor(dim: number, seed = 0, window = 3) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new Error(`dim must be a positive integer, got ${dim}`);
    }
    if (!Number.isInteger(window) || window < 1 || window % 2 === 0) {
      throw new Error(`window must be a positive odd integer, got ${window}`);
    }
    if (!Number.isInteger(seed) || seed < 0) {
      throw new Error(`seed must be a non-negative integer, got ${seed}`);
    }
    this.dim = dim;
    this.seed = seed;
    this.window = window;
    const key = new Uint8Array(8);
    new DataView(key.buffer).setBigUint64(0, BigInt(seed), true);
    this.key = key;
  }

  baseVector(token: string): Float64Array {
    const hit = this.cache.get(token);
    if (hit) return hit;
    const vec = new Float64Array(this.dim);
    const digest = blake2b(new TextEncoder().encode(token), {
      key: this.key,
      dkLen: HASH_CHUNKS * CHUNK_BYTES,
    });
    const view = new DataView(digest.buffer, digest.byteOffset, digest.byteLength);
    const scale = 1.0 / Math.sqrt(HASH_CHUNKS);
    for (let k = 0; k < HASH_CHUNKS; k++) {
      const at = k * CHUNK_BYTES;
      const bucket = view.getUint32(at, true) % this.dim;
      const sign = digest[at + 4]! % 2 === 0 ? 1.0 : -1.0;
      vec[bucket]! += sign * scale;
    }
    this.cache.set(token, vec);
    return vec;
  }

  /** Per-token vectors for a sentence, context-mixed, in double precision. */
  encodeTokens(text: string): { tokens: string[]; vectors: Float64Array[] } {
    const tokens = tokenize(text);
    if (tokens.length === 0) {
      throw new Error(`no tokens in ${JSON.stringify(text)}`);
    }
    const base = tokens.map((t) => this.baseVector(t));
    const mixed = base.map((row) => Float64Array.from(row));
    const half = (this.window - 1) / 2;
    for (let d = 1; d <= half; d++) {
      const w = Math.pow(0.5, d);
      for (let i = 0; i < tokens.length; i++) {
        if (i - d >= 0) {
          for (let j = 0; j < this.dim; j++) mixed[i]![j]! += w * base[i - d]![j]!;
        }
        if (i + d < tokens.length) {
          for (let j = 0; j < this.dim; j++) mixed[i]![j]! += w * base[i + d]![j]!;
        }
      }
    }
    return { tokens, vectors: mixed };
  }
}
