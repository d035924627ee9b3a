#!/usr/bin/env node
/** embed-export: write token embeddings for a manifest of keyed texts.
 *
 *   embed-export export --manifest PATH --out PATH --model NAME --dim D
 *
 * Exit codes: 0 success, 1 usage problem, 2 bad manifest, 3 backend failure.
 * Errors print one line on stderr: "error: <Type>: <message>".
 */

import { parseArgs } from "node:util";
import { pathToFileURL } from "node:url";

import { DimMismatch, ManifestError, ModelUnavailable, UsageError } from "./errors.js";
import { runExport } from "./export.js";
import { loadManifest } from "./manifest.js";

const USAGE =
  "usage: embed-export export --manifest PATH --out PATH --model NAME --dim D";

function parse(argv: string[]) {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      allowPositionals: true,
      options: {
        manifest: { type: "string" },
        out: { type: "string" },
        model: { type: "string" },
        dim: { type: "string" },
      },
    });
  } catch (err) {
    throw new UsageError(`${(err as Error).message}\n${USAGE}`);
  }
  const { values, positionals } = parsed;
  if (positionals.length !== 1 || positionals[0] !== "export") {
    throw new UsageError(USAGE);
  }
  for (const name of ["manifest", "out", "model", "dim"] as const) {
    if (values[name] === undefined) {
      throw new UsageError(`missing --${name}\n${USAGE}`);
    }
  }
  const dim = Number(values.dim);
  return {
    manifestPath: values.manifest!,
    outPath: values.out!,
    model: values.model!,
    dim,
  };
}

export async function main(argv: string[]): Promise<number> {
  try {
    const args = parse(argv);
    const manifest = loadManifest(args.manifestPath);
    await runExport({
      manifest,
      outPath: args.outPath,
      model: args.model,
      dim: args.dim,
    });
    console.log(`wrote ${manifest.length} entries to ${args.outPath}`);
    return 0;
  } catch (err) {
    const error = err as Error;
    const message = String(error.message ?? error).split("\n").join(" ");
    console.error(`error: ${error.name ?? "Error"}: ${message}`);
    if (error instanceof UsageError) return 1;
    if (error instanceof ManifestError) return 2;
    if (error instanceof ModelUnavailable || error instanceof DimMismatch) return 3;
    return 3;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === pathToFileURL(process.argv[1]).href;

if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
