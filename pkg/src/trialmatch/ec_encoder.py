"""Criterion sentence encoder: token vectors to a fixed-length embedding.

Pipeline: four parallel 1-D convolutions with kernel sizes 1/3/5/7 whose
outputs are concatenated channel-wise (no activation in between), a stack
of convolutional highway layers (kernel 3), then max-over-time pooling.
The output length is always 4 * conv_dim, independent of sentence length.

Token vectors are frozen inputs; the backward pass stops at the token
matrix and only produces gradients for filters and biases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch
from .nn import conv1d, conv1d_backward, sigmoid, uniform_init

KERNEL_SIZES = (1, 3, 5, 7)
HIGHWAY_KERNEL = 3
DEFAULT_HIGHWAY_LAYERS = 3


@dataclass(frozen=True)
class EcEmbedding:
    vector: np.ndarray
    trial_id: str
    index: int
    polarity: str


def ec_output_dim(conv_dim: int) -> int:
    return len(KERNEL_SIZES) * conv_dim


def init_ec_params(
    rng: np.random.Generator,
    embed_dim: int,
    conv_dim: int,
    n_highway: int = DEFAULT_HIGHWAY_LAYERS,
) -> dict[str, np.ndarray]:
    if n_highway < 1:
        raise ValueError("need at least one highway layer")
    params: dict[str, np.ndarray] = {}
    for j, k in enumerate(KERNEL_SIZES, start=1):
        fan_in = embed_dim * k
        params[f"ec.conv{j}.w"] = uniform_init(rng, (conv_dim, embed_dim, k), fan_in)
        params[f"ec.conv{j}.b"] = uniform_init(rng, (conv_dim,), fan_in)
    channels = ec_output_dim(conv_dim)
    fan_in = channels * HIGHWAY_KERNEL
    for layer in range(1, n_highway + 1):
        for part in ("gate", "tr"):
            params[f"ec.hw{layer}.{part}.w"] = uniform_init(
                rng, (channels, channels, HIGHWAY_KERNEL), fan_in
            )
            params[f"ec.hw{layer}.{part}.b"] = uniform_init(rng, (channels,), fan_in)
    return params


def count_highway_layers(params: dict) -> int:
    n = 0
    while f"ec.hw{n + 1}.gate.w" in params:
        n += 1
    return n


def multi_kernel_conv(params: dict, vectors: np.ndarray):
    """vectors: (T, embed_dim) -> feature map (T, 4*conv_dim)."""
    if vectors.ndim != 2:
        raise DimMismatch(f"token matrix must be 2-D, got shape {vectors.shape}")
    outs = []
    caches = []
    for j in range(1, len(KERNEL_SIZES) + 1):
        y, cache = conv1d(vectors, params[f"ec.conv{j}.w"], params[f"ec.conv{j}.b"])
        outs.append(y)
        caches.append(cache)
    return np.concatenate(outs, axis=1), caches


def multi_kernel_conv_backward(params: dict, caches, dx: np.ndarray, grads: dict) -> None:
    conv_dim = params["ec.conv1.w"].shape[0]
    for j, cache in enumerate(caches, start=1):
        dy = dx[:, (j - 1) * conv_dim : j * conv_dim]
        conv1d_backward(cache, dy, grads[f"ec.conv{j}.w"], grads[f"ec.conv{j}.b"])


def highway_layer(params: dict, layer: int, x: np.ndarray):
    """v = u * Conv_tr(x) + (1 - u) * x with u = sigmoid(Conv_gate(x))."""
    pre_u, cache_g = conv1d(x, params[f"ec.hw{layer}.gate.w"], params[f"ec.hw{layer}.gate.b"])
    u = sigmoid(pre_u)
    c, cache_t = conv1d(x, params[f"ec.hw{layer}.tr.w"], params[f"ec.hw{layer}.tr.b"])
    v = u * c + (1.0 - u) * x
    return v, (x, u, c, cache_g, cache_t)


def highway_layer_backward(params: dict, layer: int, cache, dv: np.ndarray, grads: dict) -> np.ndarray:
    x, u, c, cache_g, cache_t = cache
    du = dv * (c - x)
    dc = dv * u
    dx = dv * (1.0 - u)
    dpre_u = du * u * (1.0 - u)
    dx += conv1d_backward(
        cache_g, dpre_u, grads[f"ec.hw{layer}.gate.w"], grads[f"ec.hw{layer}.gate.b"]
    )
    dx += conv1d_backward(
        cache_t, dc, grads[f"ec.hw{layer}.tr.w"], grads[f"ec.hw{layer}.tr.b"]
    )
    return dx


def encode_criterion(params: dict, vectors: np.ndarray):
    """Full encoder forward; returns (text_vec, cache), text_vec of
    length 4*conv_dim."""
    x, conv_caches = multi_kernel_conv(params, vectors)
    hw_caches = []
    for layer in range(1, count_highway_layers(params) + 1):
        x, cache = highway_layer(params, layer, x)
        hw_caches.append(cache)
    pool_idx = np.argmax(x, axis=0)
    text_vec = x[pool_idx, np.arange(x.shape[1])]
    return text_vec, (conv_caches, hw_caches, pool_idx, x.shape)


def encode_criterion_backward(params: dict, cache, dtext: np.ndarray, grads: dict) -> None:
    conv_caches, hw_caches, pool_idx, v_shape = cache
    dv = np.zeros(v_shape)
    dv[pool_idx, np.arange(v_shape[1])] = dtext
    for layer in range(len(hw_caches), 0, -1):
        dv = highway_layer_backward(params, layer, hw_caches[layer - 1], dv, grads)
    multi_kernel_conv_backward(params, conv_caches, dv, grads)
