"""Minimal dense-network engine: MLP forward/backward, Adam, parameter accounting.

Everything is float64 and pure numpy.  Forward passes are pure functions of
(parameters, input); caches returned by ``forward`` carry exactly what the
matching ``backward`` needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "linear")


class DimensionError(ValueError):
    """Input or parameter shapes are inconsistent."""


class NonFiniteError(FloatingPointError):
    """A non-finite value appeared where the contract forbids it."""


def _apply_activation(a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(a, 0.0)
    if activation == "linear":
        return a
    raise ValueError(f"unknown activation {activation!r}")


def _activation_grad(a: np.ndarray, activation: str) -> np.ndarray:
    # derivative w.r.t. pre-activation, evaluated at pre-activation a
    if activation == "relu":
        return (a > 0.0).astype(a.dtype)
    if activation == "linear":
        return np.ones_like(a)
    raise ValueError(f"unknown activation {activation!r}")


@dataclass
class DenseLayer:
    """One affine layer with weights (out_dim, in_dim), bias (out_dim,)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError("weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} != output dim {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def glorot_uniform(in_dim: int, out_dim: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


@dataclass
class Mlp:
    """An ordered stack of DenseLayer with chained dimensions."""

    layers: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(
                    f"layer chain broken: {prev.out_dim} -> {nxt.in_dim}"
                )

    @classmethod
    def create(
        cls,
        sizes: list[int],
        rng: np.random.Generator,
        hidden_activation: str = "relu",
        final_activation: str = "linear",
    ) -> "Mlp":
        """Build an MLP with the given neuron counts, e.g. (16, 64, 96, 256)."""
        layers = []
        for k, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            act = final_activation if k == len(sizes) - 2 else hidden_activation
            layers.append(
                DenseLayer(glorot_uniform(n_in, n_out, rng), np.zeros(n_out), act)
            )
        return cls(layers)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Evaluate the network on x of shape (..., in_dim).

        Returns (y, cache); cache retains the input and per-layer
        pre-activations for an exact backward pass.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise DimensionError(
                f"input dim {x.shape[-1]} != first layer in_dim {self.in_dim}"
            )
        cache = [x]
        h = x
        for layer in self.layers:
            a = h @ layer.weights.T + layer.bias
            cache.append(a)
            h = _apply_activation(a, layer.activation)
        return h, cache

    def backward(
        self, cache: list, dy: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Backpropagate dy (same shape as the forward output).

        Returns (dx, grads) with grads ordered like ``params()``.
        """
        if len(cache) != len(self.layers) + 1:
            raise DimensionError("cache does not match this network")
        dy = np.asarray(dy, dtype=np.float64)
        if dy.shape != cache[-1].shape:
            raise DimensionError("dy shape does not match forward output")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))
        d = dy
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            a = cache[k + 1]
            da = d * _activation_grad(a, layer.activation)
            h_prev = cache[k]
            if k > 0:
                h_prev = _apply_activation(h_prev, self.layers[k - 1].activation)
            flat_da = da.reshape(-1, layer.out_dim)
            flat_h = h_prev.reshape(-1, layer.in_dim)
            grads[2 * k] = flat_da.T @ flat_h
            grads[2 * k + 1] = flat_da.sum(axis=0)
            d = da @ layer.weights
        return d, grads


def param_count(mlp: Mlp, extra_linear_blocks: list[tuple[int, int]] | None = None) -> int:
    """Total trainable scalars of the MLP plus standalone (in, out) linear
    blocks, each with a bias."""
    total = sum(p.size for p in mlp.params())
    for n_in, n_out in extra_linear_blocks or []:
        total += n_in * n_out + n_out
    return total


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for a list of parameter arrays."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], **kwargs) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            **kwargs,
        )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> None:
    """Apply one in-place Adam update.  Refuses non-finite gradients."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError("params/grads/state length mismatch")
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in tensor {k}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)
