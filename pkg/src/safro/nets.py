"""Small dense-network primitives with hand-written gradients.

Used by the policy encoder and the satisfaction reward model. Weights are
initialized uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
"""

from __future__ import annotations

import numpy as np

Layers = list[tuple[np.ndarray, np.ndarray]]


def init_linear(gen: np.random.Generator, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / np.sqrt(fan_in)
    w = gen.uniform(-bound, bound, size=(fan_in, fan_out))
    b = gen.uniform(-bound, bound, size=fan_out)
    return w, b


def init_mlp(gen: np.random.Generator, dims: list[int]) -> Layers:
    return [init_linear(gen, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def mlp_forward(layers: Layers, x: np.ndarray, relu_last: bool = False):
    """Forward pass with ReLU between layers.

    The final layer is linear unless relu_last is set (used when the output
    is a hidden representation rather than a regression head). Accepts a
    single sample (1-D) or a batch (2-D). Returns (output, cache).
    """
    pre = []
    acts = [x]
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if (i < last or relu_last) else z
        acts.append(h)
    return h, (pre, acts)


def mlp_backward(layers: Layers, cache, dout: np.ndarray, relu_last: bool = False):
    """Gradients of a scalar loss given d(loss)/d(output).

    Returns (per-layer (dW, db) list, d(loss)/d(input)).
    """
    pre, acts = cache
    grads: Layers = []
    dh = dout
    last = len(layers) - 1
    for i in reversed(range(len(layers))):
        w, _ = layers[i]
        if i < last or relu_last:
            dz = dh * (pre[i] > 0)
        else:
            dz = dh
        a = acts[i]
        if dz.ndim == 1:
            dw = np.outer(a, dz)
            db = dz.copy()
        else:
            dw = a.T @ dz
            db = dz.sum(axis=0)
        grads.append((dw, db))
        dh = dz @ w.T
    grads.reverse()
    return grads, dh


def zeros_like_layers(layers: Layers) -> Layers:
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]


def add_layer_grads(acc: Layers, grads: Layers, scale: float = 1.0) -> None:
    for (aw, ab), (gw, gb) in zip(acc, grads):
        aw += scale * gw
        ab += scale * gb
