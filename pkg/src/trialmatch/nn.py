"""Small neural-network primitives with explicit backward passes.

Everything operates on float64 numpy arrays. Parameters live in flat
{name: array} dicts; each forward helper returns (output, cache) and the
matching backward consumes (cache, upstream gradient) and accumulates into
a gradient dict keyed like the parameters. No autograd framework is used:
the network is small, and hand-derived gradients keep the dependency
surface minimal and the finite-difference contract checkable.
"""

from __future__ import annotations

import numpy as np

from .errors import DimMismatch


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    ez = np.exp(shifted)
    return ez / ez.sum()


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    return probs * (dprobs - float(np.dot(dprobs, probs)))


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# --- 1-D convolution over (time, channels) with same padding ---

def conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x: (T, C_in); w: (C_out, C_in, k) with k odd; b: (C_out,).

    Returns (y, cache) where y has shape (T, C_out). Stride 1, symmetric
    zero padding so the time length is preserved.
    """
    t_len, c_in = x.shape
    c_out, w_cin, k = w.shape
    if w_cin != c_in:
        raise DimMismatch(f"conv input channels {c_in} != filter channels {w_cin}")
    if k % 2 == 0:
        raise ValueError("kernel size must be odd for symmetric same padding")
    pad = (k - 1) // 2
    xpad = np.zeros((t_len + 2 * pad, c_in))
    xpad[pad : pad + t_len] = x
    # cols[t] = xpad[t : t+k] flattened as (offset, channel)
    windows = np.lib.stride_tricks.sliding_window_view(xpad, (k, c_in))
    cols = windows.reshape(t_len, k * c_in)
    w2 = w.transpose(0, 2, 1).reshape(c_out, k * c_in)
    y = cols @ w2.T + b
    cache = (cols, w2, x.shape, k, pad)
    return y, cache


def conv1d_backward(cache, dy: np.ndarray, dw_out: np.ndarray, db_out: np.ndarray) -> np.ndarray:
    """Accumulates filter/bias gradients in place; returns dx."""
    cols, w2, x_shape, k, pad = cache
    t_len, c_in = x_shape
    c_out = w2.shape[0]
    db_out += dy.sum(axis=0)
    dw2 = dy.T @ cols
    dw_out += dw2.reshape(c_out, k, c_in).transpose(0, 2, 1)
    dcols = dy @ w2
    dxpad = np.zeros((t_len + 2 * pad, c_in))
    for dt in range(k):
        dxpad[dt : dt + t_len] += dcols[:, dt * c_in : (dt + 1) * c_in]
    return dxpad[pad : pad + t_len]


# --- affine layer on vectors ---

def affine(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    if w.shape[1] != x.shape[0]:
        raise DimMismatch(f"affine input {x.shape[0]} != weight cols {w.shape[1]}")
    return w @ x + b, x


def affine_backward(cache_x, w, dy, dw_out, db_out):
    dw_out += np.outer(dy, cache_x)
    db_out += dy
    return w.T @ dy


# --- one-hidden-layer tanh MLP ---

def init_mlp(rng: np.random.Generator, prefix: str, in_dim: int, hidden: int, out_dim: int) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.w1": uniform_init(rng, (hidden, in_dim), in_dim),
        f"{prefix}.b1": uniform_init(rng, (hidden,), in_dim),
        f"{prefix}.w2": uniform_init(rng, (out_dim, hidden), hidden),
        f"{prefix}.b2": uniform_init(rng, (out_dim,), hidden),
    }


def mlp(params: dict, prefix: str, x: np.ndarray):
    pre1, _ = affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"])
    h = np.tanh(pre1)
    y, _ = affine(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])
    return y, (x, h)


def mlp_backward(params: dict, prefix: str, cache, dy: np.ndarray, grads: dict) -> np.ndarray:
    x, h = cache
    dh = affine_backward(h, params[f"{prefix}.w2"], dy,
                         grads[f"{prefix}.w2"], grads[f"{prefix}.b2"])
    dpre1 = dh * (1.0 - h * h)
    return affine_backward(x, params[f"{prefix}.w1"], dpre1,
                           grads[f"{prefix}.w1"], grads[f"{prefix}.b1"])


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def accumulate(into: dict[str, np.ndarray], grads: dict[str, np.ndarray], scale: float = 1.0) -> None:
    for k, g in grads.items():
        into[k] += scale * g
