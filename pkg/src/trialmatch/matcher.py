"""Attentional matcher: reads patient memory with the criterion as query.

The criterion text embedding is mapped by a query MLP into memory space;
dot products against the 12 slots give attention logits, softmax weights,
and a retrieved summary vector. Demographics pass through their own MLP,
get fused with the text embedding, and a final affine head produces
3-class logits over (match, mismatch, unknown). The head is the minimal
output projection needed to turn the concatenated representation into 3
classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch
from .memory import DEMO_DIM, N_SLOTS
from .nn import (
    affine,
    affine_backward,
    init_mlp,
    mlp,
    mlp_backward,
    softmax,
    softmax_backward,
    uniform_init,
)

CLASSES = ("match", "mismatch", "unknown")
N_CLASSES = len(CLASSES)


@dataclass
class MatchPrediction:
    probs: np.ndarray       # (3,) over CLASSES
    attention: np.ndarray   # (12,) slot weights
    retrieved: np.ndarray   # (mem_dim,) attention-weighted slot sum


def init_matcher_params(rng: np.random.Generator, ec_dim: int, mem_dim: int) -> dict[str, np.ndarray]:
    params = {}
    params.update(init_mlp(rng, "match.query", ec_dim, mem_dim, mem_dim))
    # boost the query head so initial attention logits spread wide enough
    # for the softmax to commit to individual slots; at the default scale
    # attention starts near-uniform and the slot-selection gradient is too
    # weak to escape before the classification loss dominates
    params["match.query.w2"] *= 4.0
    params["match.query.b2"] *= 4.0
    params.update(init_mlp(rng, "match.demo", DEMO_DIM, mem_dim, mem_dim))
    params.update(init_mlp(rng, "match.fuse", mem_dim + ec_dim, mem_dim, mem_dim))
    params["match.head.w"] = uniform_init(rng, (N_CLASSES, 2 * mem_dim), 2 * mem_dim)
    params["match.head.b"] = uniform_init(rng, (N_CLASSES,), 2 * mem_dim)
    return params


def project_query(params: dict, text_vec: np.ndarray):
    return mlp(params, "match.query", text_vec)


def attend(params: dict, slots: np.ndarray, text_vec: np.ndarray):
    """Returns ((attention, retrieved), cache)."""
    if slots.ndim != 2 or slots.shape[0] != N_SLOTS:
        raise DimMismatch(f"expected ({N_SLOTS}, mem_dim) slots, got {slots.shape}")
    query, query_cache = project_query(params, text_vec)
    if slots.shape[1] != query.shape[0]:
        raise DimMismatch(
            f"slot dim {slots.shape[1]} != query dim {query.shape[0]}"
        )
    logits = slots @ query
    weights = softmax(logits)
    retrieved = weights @ slots
    return (weights, retrieved), (query, query_cache, slots, weights)


def embed_demographics(params: dict, features: np.ndarray):
    return mlp(params, "match.demo", features)


def predict(params: dict, slots: np.ndarray, demo_vec: np.ndarray, text_vec: np.ndarray):
    """Full matcher forward; returns (MatchPrediction, cache)."""
    (weights, retrieved), att_cache = attend(params, slots, text_vec)
    demo_emb, demo_cache = embed_demographics(params, demo_vec)
    fuse_in = np.concatenate([demo_emb, text_vec])
    fused, fuse_cache = mlp(params, "match.fuse", fuse_in)
    z = np.concatenate([retrieved, fused])
    logits, _ = affine(z, params["match.head.w"], params["match.head.b"])
    probs = softmax(logits)
    pred = MatchPrediction(probs=probs, attention=weights, retrieved=retrieved)
    cache = (att_cache, demo_cache, fuse_cache, z, probs, text_vec.shape[0])
    return pred, cache


def predict_backward(
    params: dict,
    cache,
    dlogits: np.ndarray,
    grads: dict,
    dquery_extra: np.ndarray | None = None,
    dretrieved_extra: np.ndarray | None = None,
):
    """Backward from head logits (plus optional extra gradients flowing
    directly into the query vector and the retrieved memory, as the
    distance loss produces). Returns (dslots, dtext)."""
    att_cache, demo_cache, fuse_cache, z, _, ec_dim = cache
    query, query_cache, slots, weights = att_cache
    mem_dim = slots.shape[1]

    dz = affine_backward(z, params["match.head.w"], dlogits,
                         grads["match.head.w"], grads["match.head.b"])
    dretrieved = dz[:mem_dim].copy()
    if dretrieved_extra is not None:
        dretrieved += dretrieved_extra
    dfused = dz[mem_dim:]

    dfuse_in = mlp_backward(params, "match.fuse", fuse_cache, dfused, grads)
    ddemo = dfuse_in[:mem_dim]
    dtext = dfuse_in[mem_dim:].copy()
    mlp_backward(params, "match.demo", demo_cache, ddemo, grads)

    # retrieved = weights @ slots
    dweights = slots @ dretrieved
    dslots = np.outer(weights, dretrieved)
    datt_logits = softmax_backward(weights, dweights)
    # logits = slots @ query
    dslots += np.outer(datt_logits, query)
    dquery = slots.T @ datt_logits
    if dquery_extra is not None:
        dquery = dquery + dquery_extra
    dtext += mlp_backward(params, "match.query", query_cache, dquery, grads)
    return dslots, dtext
