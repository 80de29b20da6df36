"""Small dense networks in float64 with hand-written backprop and Adam.

Networks operate on batches: inputs are ``(n, in_dim)`` arrays (a 1-D input is
treated as a batch of one and the output is squeezed back).  Parameters are
exposed as a flat list ``[W1, b1, W2, b2, ...]`` and gradients come back in the
same order, which is the contract the optimizer relies on.

Checkpoint format (JSON, ``format: reinsim-params``, ``version: 1``)::

    {"format": "reinsim-params", "version": 1, "meta": {...},
     "arrays": {"<name>": {"shape": [..], "data": [...]}, ...}}

Floats are written with ``repr`` precision, so a round trip is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity", "softplus")
CHECKPOINT_FORMAT = "reinsim-params"
CHECKPOINT_VERSION = 1


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    if name == "softplus":
        return np.logaddexp(0.0, z)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - h * h
    if name == "relu":
        return (z > 0).astype(float)
    if name == "identity":
        return np.ones_like(z)
    if name == "softplus":
        return 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic, overflow-safe
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseNet:
    sizes: tuple[int, ...]
    activations: tuple[str, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        self.sizes = tuple(int(s) for s in self.sizes)
        self.activations = tuple(self.activations)
        n_layers = len(self.sizes) - 1
        if n_layers < 1 or len(self.activations) != n_layers:
            raise ValueError("need one activation per layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} parameter shapes do not chain")

    @classmethod
    def init(
        cls,
        sizes: Sequence[int],
        activations: Sequence[str] | str,
        rng: np.random.Generator,
        out_scale: float = 1.0,
    ) -> "DenseNet":
        """Uniform fan-in init ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``; last layer scaled by ``out_scale``."""
        sizes = tuple(int(s) for s in sizes)
        if isinstance(activations, str):
            activations = (activations,) * (len(sizes) - 2) + ("identity",)
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            bound = 1.0 / np.sqrt(sizes[i])
            scale = out_scale if i == len(sizes) - 2 else 1.0
            weights.append(rng.uniform(-bound, bound, size=(sizes[i], sizes[i + 1])) * scale)
            biases.append(np.zeros(sizes[i + 1]))
        return cls(sizes, tuple(activations), weights, biases)

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i][...] = params[2 * i]
            self.biases[i][...] = params[2 * i + 1]

    def copy(self) -> "DenseNet":
        return DenseNet(self.sizes, self.activations, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]

    def to_dict(self) -> dict[str, Any]:
        return {"sizes": list(self.sizes), "activations": list(self.activations)}


@dataclass
class Cache:
    """Forward-pass record needed by :func:`backward`."""

    sizes: tuple[int, ...]
    inputs: list[np.ndarray]  # input of each layer
    pre: list[np.ndarray]  # affine output of each layer
    post: list[np.ndarray]  # activation output of each layer
    squeeze: bool


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise ValueError(f"expected input width {net.in_dim}, got shape {x.shape}")
    inputs, pre, post = [], [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(h)
        z = h @ w + b
        h = _act(act, z)
        pre.append(z)
        post.append(h)
    return (h[0] if squeeze else h), Cache(net.sizes, inputs, pre, post, squeeze)


def backward(net: DenseNet, cache: Cache, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode pass.  Returns ``(param_grads, input_grad)`` for loss gradient ``grad_out``."""
    if cache.sizes != net.sizes:
        raise ValueError("cache does not belong to this network")
    g = np.asarray(grad_out, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.post[-1].shape:
        raise ValueError(f"output gradient shape {g.shape} != output shape {cache.post[-1].shape}")
    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        g = g * _act_grad(net.activations[i], cache.pre[i], cache.post[i])
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return grads, (g[0] if cache.squeeze else g)


@dataclass
class Adam:
    """Adam optimizer state; ``step`` updates the parameter arrays in place."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    max_grad_norm: float | None = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> Sequence[np.ndarray]:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise ValueError("gradient shapes do not match parameters")
        if self.max_grad_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.max_grad_norm:
                grads = [g * (self.max_grad_norm / norm) for g in grads]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def optim_step(state: Adam, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> Sequence[np.ndarray]:
    return state.step(params, grads)


def net_arrays(prefix: str, net: DenseNet) -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.W{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def net_from_arrays(prefix: str, spec: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> DenseNet:
    n = len(spec["sizes"]) - 1
    return DenseNet(
        tuple(spec["sizes"]),
        tuple(spec["activations"]),
        [np.array(arrays[f"{prefix}.W{i}"], dtype=float) for i in range(n)],
        [np.array(arrays[f"{prefix}.b{i}"], dtype=float) for i in range(n)],
    )


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta),
        "arrays": {
            name: {"shape": list(np.shape(a)), "data": [float(x) for x in np.ravel(a)]} for name, a in arrays.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arrays = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["arrays"].items()}
    return arrays, doc["meta"]
