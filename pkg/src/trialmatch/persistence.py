"""Binary model file: one JSON header line plus named float32 tensors.

Layout:
  header line: JSON {"format_version", "dims", "seed", "encoder"} + "\\n"
  then one record per tensor, sorted by name:
    name length  u32 LE
    name         UTF-8 bytes
    rank         u32 LE
    shape        rank x u32 LE
    values       float32 LE, row-major

Tensors are stored at float32; loading widens back to float64, so
save(load(path)) reproduces path byte for byte. Files declaring a newer
format version than this code understands are rejected.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatVersionMismatch, IoError

MODEL_FORMAT_VERSION = 1


def save_model(path, header: dict, params: dict[str, np.ndarray]) -> None:
    head = dict(header)
    head["format_version"] = MODEL_FORMAT_VERSION
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode("utf-8") + b"\n")
        for name in sorted(params):
            tensor = np.asarray(params[name])
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", tensor.ndim))
            for extent in tensor.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_model(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except ValueError as exc:
            raise IoError(f"{path}: bad model header: {exc}") from None
        version = header.get("format_version")
        if not isinstance(version, int):
            raise IoError(f"{path}: missing format_version")
        if version > MODEL_FORMAT_VERSION:
            raise FormatVersionMismatch(
                f"{path}: format_version {version} is newer than supported "
                f"{MODEL_FORMAT_VERSION}"
            )
        params: dict[str, np.ndarray] = {}
        while True:
            raw = fh.read(4)
            if not raw:
                break
            if len(raw) < 4:
                raise IoError(f"{path}: truncated record header")
            (name_len,) = struct.unpack("<I", raw)
            name = fh.read(name_len).decode("utf-8")
            if name in params:
                raise IoError(f"{path}: duplicate tensor {name!r}")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = fh.read(count * 4)
            if len(payload) != count * 4:
                raise IoError(f"{path}: truncated values for tensor {name!r}")
            params[name] = (
                np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
            )
    return header, params
