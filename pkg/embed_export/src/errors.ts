/** Error taxonomy shared across the exporter; the CLI maps these to exit codes. */

export class ExportError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

/** Bad command-line or configuration input. */
export class UsageError extends ExportError {}

/** The manifest file is missing, malformed, or violates its invariants. */
export class ManifestError extends ExportError {}

/** The named encoder backend cannot be loaded on this machine. */
export class ModelUnavailable extends ExportError {}

/** The encoder's output width disagrees with the requested dimension. */
export class DimMismatch extends ExportError {}
