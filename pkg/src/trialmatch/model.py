"""Whole-model parameter bundle and the pair-level forward/backward pass.

A model is a flat {name: float64 array} dict covering the criterion
encoder ("ec.*"), the memory gates ("mem.*"), and the matcher ("match.*"),
plus a dims record describing the sizes. The forward pass for one
(patient, criterion) pair consumes precomputed constant inputs: the
criterion's token matrix, the patient's pooled update sequence, and the
demographics feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ec_encoder, matcher, memory
from .errors import DimMismatch


@dataclass(frozen=True)
class ModelDims:
    embed_dim: int = 64
    conv_dim: int = 16
    mem_dim: int = 32
    n_highway: int = 3

    @property
    def ec_dim(self) -> int:
        return ec_encoder.ec_output_dim(self.conv_dim)

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "conv_dim": self.conv_dim,
            "mem_dim": self.mem_dim,
            "n_highway": self.n_highway,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelDims":
        return cls(
            embed_dim=int(obj["embed_dim"]),
            conv_dim=int(obj["conv_dim"]),
            mem_dim=int(obj["mem_dim"]),
            n_highway=int(obj["n_highway"]),
        )


def init_params(dims: ModelDims, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    params.update(
        ec_encoder.init_ec_params(rng, dims.embed_dim, dims.conv_dim, dims.n_highway)
    )
    params.update(memory.init_memory_params(rng, dims.embed_dim, dims.mem_dim))
    params.update(matcher.init_matcher_params(rng, dims.ec_dim, dims.mem_dim))
    return params


def forward_pair(
    params: dict,
    dims: ModelDims,
    token_matrix: np.ndarray,
    updates: memory.PreparedUpdates,
    demo_vec: np.ndarray,
):
    """Returns (MatchPrediction, cache). cache feeds backward_pair."""
    if token_matrix.shape[1] != dims.embed_dim:
        raise DimMismatch(
            f"token dim {token_matrix.shape[1]} != embed_dim {dims.embed_dim}"
        )
    text_vec, ec_cache = ec_encoder.encode_criterion(params, token_matrix)
    slots, mem_records = memory.encode_prepared(params, updates, dims.mem_dim)
    pred, match_cache = matcher.predict(params, slots, demo_vec, text_vec)
    return pred, (ec_cache, mem_records, match_cache)


def backward_pair(
    params: dict,
    dims: ModelDims,
    cache,
    dlogits: np.ndarray,
    grads: dict,
    dquery_extra: np.ndarray | None = None,
    dretrieved_extra: np.ndarray | None = None,
) -> None:
    """Accumulates gradients for one pair into grads (in place)."""
    ec_cache, mem_records, match_cache = cache
    dslots, dtext = matcher.predict_backward(
        params, match_cache, dlogits, grads,
        dquery_extra=dquery_extra, dretrieved_extra=dretrieved_extra,
    )
    memory.encode_prepared_backward(params, mem_records, dslots, grads)
    ec_encoder.encode_criterion_backward(params, ec_cache, dtext, grads)


def pair_query(cache) -> np.ndarray:
    """The query-MLP output of a forward pass; the distance loss compares
    this projection of the criterion embedding against the retrieved
    memory."""
    _, _, match_cache = cache
    return match_cache[0][0]
