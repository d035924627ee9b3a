"""Token embedding backends for criteria text and concept descriptions.

Two interchangeable backends produce per-token vectors:

* feature_hash: self-contained, deterministic. Each token's base vector is
  built by keyed hashing (recipe below), then neighboring tokens are mixed
  in with geometrically decaying weights so embeddings are weakly contextual.
* precomputed_file: vectors exported offline by a separate tool and looked
  up by sentence key. Nothing is computed at run time.

Feature-hash recipe (normative, tests depend on it):
  digest = blake2b(token_utf8, key=seed as 8 little-endian bytes, digest_size=20)
  split digest into 4 chunks of 5 bytes; for each chunk:
    bucket = uint32 from bytes [0:4] little-endian, modulo embed_dim
    sign   = +1 if byte [4] is even else -1
  base[bucket] += sign / sqrt(4)        (collisions accumulate)
  context mixing with window w (odd):
    mixed_i = base_i + sum over 1 <= d <= (w-1)//2 of
              0.5**d * (base_{i-d} + base_{i+d}), missing neighbors skipped.

Embeddings are frozen inputs: no gradient flows into a backend.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, EmptySentence, IoError, MissingKey

TOKEN_RE = re.compile(r"\d+\.\d+|[a-z0-9]+")

HASH_CHUNKS = 4
_CHUNK_BYTES = 5


def tokenize(text: str) -> list[str]:
    """Lowercase word/number tokens; decimal codes like 692.9 stay whole."""
    return TOKEN_RE.findall(text.lower())


@dataclass
class TokenEmbeddingMatrix:
    tokens: list[str]
    vectors: np.ndarray  # (num_tokens, embed_dim) float64

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.tokens):
            raise DimMismatch(
                f"vector matrix {self.vectors.shape} does not cover "
                f"{len(self.tokens)} tokens"
            )


class FeatureHashEncoder:
    """Deterministic hashed token embeddings with a fixed context window."""

    kind = "feature_hash"

    def __init__(self, embed_dim: int = 64, seed: int = 0, window: int = 3):
        if embed_dim < 1:
            raise ValueError("embed_dim must be positive")
        if window < 1 or window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        self.embed_dim = embed_dim
        self.seed = int(seed)
        self.window = window
        self._key = self.seed.to_bytes(8, "little", signed=False)
        self._cache: dict[str, np.ndarray] = {}

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "embed_dim": self.embed_dim,
            "seed": self.seed,
            "window": self.window,
        }

    def base_vector(self, token: str) -> np.ndarray:
        cached = self._cache.get(token)
        if cached is not None:
            return cached
        vec = np.zeros(self.embed_dim)
        digest = hashlib.blake2b(
            token.encode("utf-8"), key=self._key, digest_size=HASH_CHUNKS * _CHUNK_BYTES
        ).digest()
        scale = 1.0 / np.sqrt(HASH_CHUNKS)
        for k in range(HASH_CHUNKS):
            chunk = digest[k * _CHUNK_BYTES : (k + 1) * _CHUNK_BYTES]
            bucket = int.from_bytes(chunk[:4], "little") % self.embed_dim
            sign = 1.0 if chunk[4] % 2 == 0 else -1.0
            vec[bucket] += sign * scale
        vec.flags.writeable = False
        self._cache[token] = vec
        return vec

    def encode_tokens(self, sentence: str | list[str]) -> TokenEmbeddingMatrix:
        tokens = tokenize(sentence) if isinstance(sentence, str) else list(sentence)
        if not tokens:
            raise EmptySentence(f"no tokens in {sentence!r}")
        base = np.stack([self.base_vector(t) for t in tokens])
        half = (self.window - 1) // 2
        mixed = base.copy()
        for d in range(1, half + 1):
            w = 0.5**d
            mixed[d:] += w * base[:-d]
            mixed[:-d] += w * base[d:]
        return TokenEmbeddingMatrix(tokens=tokens, vectors=mixed)


class PrecomputedEncoder:
    """Sentence-keyed embedding matrices loaded eagerly from a binary file."""

    kind = "precomputed_file"

    def __init__(self, path, embed_dim: int | None = None):
        self.path = str(path)
        table = read_embedding_file(path)
        file_dim = table.dim
        if embed_dim is not None and embed_dim != file_dim:
            raise DimMismatch(
                f"{path}: file dim {file_dim} != configured dim {embed_dim}"
            )
        self.embed_dim = file_dim
        self._table = table

    def config(self) -> dict:
        return {"kind": self.kind, "embed_dim": self.embed_dim, "path": self.path}

    def keys(self) -> list[str]:
        return list(self._table.entries)

    def encode_tokens(self, sentence: str) -> TokenEmbeddingMatrix:
        entry = self._table.entries.get(sentence)
        if entry is None:
            raise MissingKey(f"{self.path}: no embedding for key {sentence!r}")
        tokens = tokenize(sentence)
        if not tokens:
            raise EmptySentence(f"no tokens in {sentence!r}")
        # Token count in the file wins: the exporter may use its own splitter.
        if entry.shape[0] != len(tokens):
            tokens = [f"t{i}" for i in range(entry.shape[0])]
        return TokenEmbeddingMatrix(tokens=tokens, vectors=entry)

    def check_keys(self, keys) -> None:
        """Eagerly verify that every sentence in a manifest resolves."""
        missing = [k for k in keys if k not in self._table.entries]
        if missing:
            raise MissingKey(
                f"{self.path}: {len(missing)} unresolved keys, "
                f"first {missing[0]!r}"
            )


Encoder = FeatureHashEncoder | PrecomputedEncoder


def make_encoder(config: dict) -> Encoder:
    kind = config.get("kind", "feature_hash")
    if kind == "feature_hash":
        return FeatureHashEncoder(
            embed_dim=int(config.get("embed_dim", 64)),
            seed=int(config.get("seed", 0)),
            window=int(config.get("window", 3)),
        )
    if kind == "precomputed_file":
        return PrecomputedEncoder(
            config["path"], embed_dim=config.get("embed_dim")
        )
    raise ValueError(f"unknown encoder kind {kind!r}")


def concept_embedding(backend: Encoder, description: str) -> np.ndarray:
    """Elementwise max over the token vectors of a description."""
    return backend.encode_tokens(description).vectors.max(axis=0)


@dataclass
class EmbeddingTable:
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)


def read_embedding_file(path) -> EmbeddingTable:
    """Parse the binary embedding interchange format.

    Layout: one JSON header line {"dim": D, "count": K} terminated by \\n,
    then K records of (key_len u32 LE, key UTF-8, token_count u32 LE,
    token_count*D float32 LE row-major).
    """
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
            dim = int(header["dim"])
            count = int(header["count"])
        except (ValueError, KeyError, TypeError) as exc:
            raise IoError(f"{path}: bad embedding header: {exc}") from None
        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            raw = fh.read(4)
            if len(raw) < 4:
                raise IoError(f"{path}: truncated record header")
            (key_len,) = struct.unpack("<I", raw)
            key = fh.read(key_len).decode("utf-8")
            (token_count,) = struct.unpack("<I", fh.read(4))
            payload = fh.read(token_count * dim * 4)
            if len(payload) != token_count * dim * 4:
                raise IoError(f"{path}: truncated values for key {key!r}")
            mat = np.frombuffer(payload, dtype="<f4").reshape(token_count, dim)
            entries[key] = mat.astype(np.float64)
        if fh.read(1):
            raise IoError(f"{path}: trailing bytes after {count} records")
    return EmbeddingTable(dim=dim, entries=entries)


def write_embedding_file(path, table: EmbeddingTable) -> None:
    header = json.dumps({"dim": table.dim, "count": len(table.entries)})
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for key, mat in table.entries.items():
            if mat.ndim != 2 or mat.shape[1] != table.dim:
                raise DimMismatch(
                    f"entry {key!r} has shape {mat.shape}, dim {table.dim} required"
                )
            kb = key.encode("utf-8")
            fh.write(struct.pack("<I", len(kb)))
            fh.write(kb)
            fh.write(struct.pack("<I", mat.shape[0]))
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())
