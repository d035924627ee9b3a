/** Pretrained-model backend: per-token vectors from a local transformer.
 *
 * Loaded lazily so the package works without the heavyweight runtime
 * installed; any loading problem surfaces as ModelUnavailable. Remote
 * downloads are disabled on purpose -- exports must be reproducible, so the
 * model has to exist on disk before running.
 */

import { DimMismatch, ModelUnavailable } from "./errors.js";
import { TokenEncoder } from "./export.js";

const WORD_RE = /\S+/g;

/** Greedy subword-to-word grouping by consuming each word's characters. */
export function groupSubwords(words: string[], pieces: string[]): number[][] {
  const groups: number[][] = words.map(() => []);
  let word = 0;
  let consumed = 0;
  for (let p = 0; p < pieces.length; p++) {
    const piece = pieces[p]!.replace(/^##|^▁|^Ġ/, "");
    while (word < words.length && consumed >= words[word]!.length) {
      word++;
      consumed = 0;
    }
    if (word >= words.length) break;
    groups[word]!.push(p);
    consumed += piece.length;
  }
  return groups;
}

export async function loadTransformerEncoder(
  model: string,
  dim: number,
): Promise<TokenEncoder> {
  let lib: any;
  try {
    lib = await import("@xenova/transformers");
  } catch (err) {
    throw new ModelUnavailable(
      `backend for ${JSON.stringify(model)} needs the optional ` +
        `@xenova/transformers runtime: ${(err as Error).message}`,
    );
  }
  lib.env.allowRemoteModels = false;
  let tokenizer: any;
  let net: any;
  try {
    tokenizer = await lib.AutoTokenizer.from_pretrained(model);
    net = await lib.AutoModel.from_pretrained(model);
  } catch (err) {
    throw new ModelUnavailable(
      `model ${JSON.stringify(model)} is not available locally: ${(err as Error).message}`,
    );
  }

  return {
    dim,
    headerExtras: {
      model,
      tokenizer: "model-subwords",
      pooling: "max-subword-per-word",
    },
    async encode(text: string): Promise<Float64Array[]> {
      const words = text.match(WORD_RE) ?? [];
      if (words.length === 0) {
        throw new ModelUnavailable(`no words in ${JSON.stringify(text)}`);
      }
      const encoded = tokenizer(text, { add_special_tokens: false });
      const output = await net(encoded);
      const hidden = output.last_hidden_state;
      const [, tokens, width] = hidden.dims as number[];
      if (width !== dim) {
        throw new DimMismatch(
          `model ${JSON.stringify(model)} emits width ${width}, requested dim ${dim}`,
        );
      }
      const ids: number[] = Array.from(encoded.input_ids.data, Number);
      const pieces: string[] = ids.map((id) => String(tokenizer.decode([id])));
      const groups = groupSubwords(words, pieces);
      const data: Float32Array = hidden.data;
      return groups.map((group) => {
        const row = new Float64Array(dim);
        row.fill(Number.NEGATIVE_INFINITY);
        const indices = group.length > 0 ? group : [0];
        for (const p of indices) {
          if (p >= tokens!) continue;
          for (let j = 0; j < dim; j++) {
            const v = data[p * dim + j]!;
            if (v > row[j]!) row[j] = v;
          }
        }
        return row;
      });
    },
  };
}
