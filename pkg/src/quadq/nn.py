"""Minimal dense network core: two-hidden-layer MLPs with exact reverse-mode
gradients, an Adam optimizer and parameter flattening for checkpoints.

Everything is plain numpy; inputs may be single vectors ``(n,)`` or batches
``(B, n)``.  The parameter list order (W1, b1, W2, b2, W3, b3, row-major
within each matrix) is part of the checkpoint contract.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

_OUT_ACTS = ("identity", "tanh", "softplus", "sigmoid")


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass
class Mlp:
    """Fully connected net with exactly two tanh hidden layers."""

    sizes: Tuple[int, int, int, int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    out_act: str = "identity"

    def __post_init__(self) -> None:
        if len(self.sizes) != 4:
            raise ValueError("Mlp requires exactly two hidden layers (4 layer sizes)")
        if self.out_act not in _OUT_ACTS:
            raise ValueError(f"unknown output activation {self.out_act!r}")

    @property
    def params(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, out_act: str = "identity") -> Mlp:
    """Glorot-uniform weights, zero biases."""
    sizes = tuple(int(s) for s in sizes)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return Mlp(sizes, weights, biases, out_act)


def _apply_out_act(z: np.ndarray, out_act: str) -> np.ndarray:
    if out_act == "identity":
        return z
    if out_act == "tanh":
        return np.tanh(z)
    if out_act == "softplus":
        return softplus(z)
    return 1.0 / (1.0 + np.exp(-z))


def forward(net: Mlp, x: np.ndarray):
    """Run the net; returns (output, tape) where the tape feeds ``backward``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != net.sizes[0]:
        raise ValueError(f"input has {xb.shape[1]} features, net expects {net.sizes[0]}")
    h1 = np.tanh(xb @ net.weights[0] + net.biases[0])
    h2 = np.tanh(h1 @ net.weights[1] + net.biases[1])
    z3 = h2 @ net.weights[2] + net.biases[2]
    y = _apply_out_act(z3, net.out_act)
    tape = (xb, h1, h2, z3, y, single)
    return (y[0] if single else y), tape


def backward(net: Mlp, tape, output_gradient: np.ndarray):
    """Exact gradients of sum(output * output_gradient).

    Returns (param_grads, input_grad) with param_grads in the documented
    (W1, b1, W2, b2, W3, b3) order.
    """
    xb, h1, h2, z3, y, single = tape
    gy = np.asarray(output_gradient, dtype=float)
    if single:
        gy = gy[None, :]
    if gy.shape != y.shape:
        raise ValueError(f"output gradient shape {gy.shape} does not match output {y.shape}")

    if net.out_act == "identity":
        dz3 = gy
    elif net.out_act == "tanh":
        dz3 = gy * (1.0 - y * y)
    elif net.out_act == "softplus":
        dz3 = gy / (1.0 + np.exp(-z3))
    else:  # sigmoid
        dz3 = gy * y * (1.0 - y)

    dW3 = h2.T @ dz3
    db3 = dz3.sum(axis=0)
    dh2 = dz3 @ net.weights[2].T
    dz2 = dh2 * (1.0 - h2 * h2)
    dW2 = h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dh1 = dz2 @ net.weights[1].T
    dz1 = dh1 * (1.0 - h1 * h1)
    dW1 = xb.T @ dz1
    db1 = dz1.sum(axis=0)
    dx = dz1 @ net.weights[0].T
    grads = [dW1, db1, dW2, db2, dW3, db3]
    return grads, (dx[0] if single else dx)


def flatten_params(net: Mlp) -> np.ndarray:
    """Layer-major, row-major concatenation of all parameters."""
    return np.concatenate([p.ravel() for p in net.params])


def set_flat_params(net: Mlp, flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=float)
    offset = 0
    for p in net.params:
        n = p.size
        p[...] = flat[offset:offset + n].reshape(p.shape)
        offset += n
    if offset != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, net needs {offset}")


def clone_mlp(net: Mlp) -> Mlp:
    return Mlp(net.sizes, [w.copy() for w in net.weights], [b.copy() for b in net.biases], net.out_act)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_init(params: Sequence[np.ndarray], lr: float) -> AdamState:
    return AdamState(
        lr=lr,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("parameter/gradient/state lengths disagree")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state
