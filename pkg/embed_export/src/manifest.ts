/** Manifest loading: one JSON object per line, {"key": ..., "text": ...}. */

import { readFileSync } from "node:fs";

import { ManifestError } from "./errors.js";

export interface ManifestEntry {
  key: string;
  text: string;
}

export function parseManifest(raw: string, where = "manifest"): ManifestEntry[] {
  const entries: ManifestEntry[] = [];
  const seen = new Set<string>();
  const lines = raw.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i]!.trim();
    if (line === "") continue;
    let row: unknown;
    try {
      row = JSON.parse(line);
    } catch (err) {
      throw new ManifestError(
        `${where} line ${i + 1}: not valid JSON (${(err as Error).message})`,
      );
    }
    if (typeof row !== "object" || row === null || Array.isArray(row)) {
      throw new ManifestError(`${where} line ${i + 1}: expected an object`);
    }
    const { key, text } = row as Record<string, unknown>;
    if (typeof key !== "string" || key === "") {
      throw new ManifestError(`${where} line ${i + 1}: "key" must be a non-empty string`);
    }
    if (typeof text !== "string" || text.trim() === "") {
      throw new ManifestError(`${where} line ${i + 1}: "text" must be non-empty`);
    }
    if (seen.has(key)) {
      throw new ManifestError(`${where} line ${i + 1}: duplicate key ${JSON.stringify(key)}`);
    }
    seen.add(key);
    entries.push({ key, text });
  }
  if (entries.length === 0) {
    throw new ManifestError(`${where}: no entries`);
  }
  return entries;
}

export function loadManifest(path: string): ManifestEntry[] {
  let raw: string;
  try {
    raw = readFileSync(path, "utf-8");
  } catch (err) {
    throw new ManifestError(`cannot read ${path}: ${(err as Error).message}`);
  }
  return parseManifest(raw, path);
}
