"""Dense-network compute core: forward passes and exact reverse-mode gradients.

Networks are stacks of affine layers with ReLU or linear activations. All
parameters of a network live in one flat 64-bit vector; the layout maps each
layer's weight block (stored row-major as in_dim x out_dim) and bias block to
a contiguous slice. Treating every scalar parameter uniformly is what lets
the variational machinery attach one (mean, scale) pair per entry.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "linear"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class NetSpec:
    layers: Tuple[LayerSpec, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        for a, b in zip(layers[:-1], layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @classmethod
    def dense(cls, in_dim: int, widths, activation: str = "relu",
              final_activation: str = None) -> "NetSpec":
        """Stack of equal-activation layers; the last may differ."""
        widths = list(widths)
        layers = []
        prev = in_dim
        for i, w in enumerate(widths):
            act = activation if i < len(widths) - 1 else (final_activation or activation)
            layers.append(LayerSpec(prev, w, act))
            prev = w
        return cls(tuple(layers))

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


def param_count(spec: NetSpec) -> int:
    return sum(l.in_dim * l.out_dim + l.out_dim for l in spec.layers)


def param_views(spec: NetSpec, params: np.ndarray):
    """Per-layer (W, b) views into the flat vector; W has shape (in, out)."""
    params = np.asarray(params)
    if params.shape != (param_count(spec),):
        raise ValueError(
            f"expected {param_count(spec)} parameters, got {params.shape}"
        )
    views = []
    off = 0
    for l in spec.layers:
        nw = l.in_dim * l.out_dim
        W = params[off:off + nw].reshape(l.in_dim, l.out_dim)
        b = params[off + nw:off + nw + l.out_dim]
        views.append((W, b))
        off += nw + l.out_dim
    return views


@dataclass
class ForwardCache:
    x: np.ndarray                  # network input, promoted to 2-D
    pre: List[np.ndarray]          # per-layer pre-activations
    post: List[np.ndarray]         # per-layer activated outputs
    was_vector: bool


def forward(spec: NetSpec, params: np.ndarray, x: np.ndarray,
            need_cache: bool = True):
    """Evaluate the network on `x` (a vector or a batch of row vectors).

    Returns (output, cache); the cache holds the intermediates `backward`
    needs and is None when `need_cache` is false.
    """
    x = np.asarray(x, dtype=np.float64)
    was_vector = x.ndim == 1
    X = x[None, :] if was_vector else x
    if X.shape[1] != spec.in_dim:
        raise ValueError(f"input dim {X.shape[1]} != spec in_dim {spec.in_dim}")
    pre, post = [], []
    A = X
    for (W, b), layer in zip(param_views(spec, params), spec.layers):
        Z = A @ W + b
        A = np.maximum(Z, 0.0) if layer.activation == "relu" else Z
        if need_cache:
            pre.append(Z)
            post.append(A)
    out = A[0] if was_vector else A
    cache = ForwardCache(x=X, pre=pre, post=post, was_vector=was_vector) if need_cache else None
    return out, cache


def backward(spec: NetSpec, params: np.ndarray, cache: ForwardCache,
             grad_out: np.ndarray):
    """Exact reverse-mode gradients from a matching forward cache.

    Returns (grad_params, grad_x). The ReLU subgradient at exactly zero is
    taken as zero. Gradients over a batch are summed across rows.
    """
    if len(cache.pre) != len(spec.layers):
        raise ValueError("cache does not match spec")
    G = np.asarray(grad_out, dtype=np.float64)
    if cache.was_vector:
        G = G[None, :]
    if G.shape != cache.pre[-1].shape:
        raise ValueError("upstream gradient shape mismatch")
    grad = np.zeros(param_count(spec))
    views = param_views(spec, params)
    gviews = param_views(spec, grad)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        if layer.activation == "relu":
            G = G * (cache.pre[i] > 0)
        A_prev = cache.post[i - 1] if i > 0 else cache.x
        gW, gb = gviews[i]
        gW += A_prev.T @ G
        gb += G.sum(axis=0)
        G = G @ views[i][0].T
    grad_x = G[0] if cache.was_vector else G
    return grad, grad_x
