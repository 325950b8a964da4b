"""Graph kernel network: kernel-weighted graph convolutions over a fully
connected cloud, with either rotation-invariant (inner-product) or raw
concatenated edge features, and a global-average readout.

Shapes: clouds enter as Q of shape (B, n, 11); the forward output is (B,).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .clouds import C_COLS, N_FEATURES, U_COLS, X_COLS, canonical_order
from .nnet import DimensionError, Mlp, NonFiniteError, glorot_uniform, param_count

EDGE_DIM_RI = 16
EDGE_DIM_RAW = 22


@dataclass
class GknConfig:
    m: int = 16
    depth: int = 2
    edge_mode: str = "rotation_invariant"  # or "raw_concat"
    kernel_sizes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.edge_mode not in ("rotation_invariant", "raw_concat"):
            raise ValueError(f"unknown edge_mode {self.edge_mode!r}")
        if not self.kernel_sizes:
            self.kernel_sizes = (self.edge_dim, 64, 96, self.m**2)
        self.kernel_sizes = tuple(self.kernel_sizes)
        if self.kernel_sizes[0] != self.edge_dim:
            raise DimensionError(
                f"kernel input {self.kernel_sizes[0]} != edge dim {self.edge_dim}"
            )
        if self.kernel_sizes[-1] != self.m**2:
            raise DimensionError(
                f"kernel output {self.kernel_sizes[-1]} != m^2 = {self.m ** 2}"
            )

    @property
    def edge_dim(self) -> int:
        return EDGE_DIM_RI if self.edge_mode == "rotation_invariant" else EDGE_DIM_RAW


@dataclass
class GknParams:
    """Blocks: Z (7 -> m), W (m x m, shared across layers), kernel MLP,
    F (m -> 1); all with biases."""

    Z_w: np.ndarray
    Z_b: np.ndarray
    W_w: np.ndarray
    W_b: np.ndarray
    kernel: Mlp
    F_w: np.ndarray
    F_b: np.ndarray

    @classmethod
    def create(cls, config: GknConfig, rng: np.random.Generator) -> "GknParams":
        m = config.m
        return cls(
            Z_w=glorot_uniform(7, m, rng),
            Z_b=np.zeros(m),
            W_w=glorot_uniform(m, m, rng),
            W_b=np.zeros(m),
            kernel=Mlp.create(list(config.kernel_sizes), rng),
            F_w=glorot_uniform(m, 1, rng),
            F_b=np.zeros(1),
        )

    def as_list(self) -> list[np.ndarray]:
        return [self.Z_w, self.Z_b, self.W_w, self.W_b, *self.kernel.params(), self.F_w, self.F_b]

    def n_params(self) -> int:
        return sum(p.size for p in self.as_list())


def edge_features_raw(q_i: np.ndarray, q_j: np.ndarray) -> np.ndarray:
    """[x'_i, x'_j, u_i, u_j, c_i, c_j], 22 entries."""
    return np.concatenate(
        [q_i[..., X_COLS], q_j[..., X_COLS], q_i[..., U_COLS], q_j[..., U_COLS],
         q_i[..., C_COLS], q_j[..., C_COLS]],
        axis=-1,
    )


def edge_features_ri(q_i: np.ndarray, q_j: np.ndarray) -> np.ndarray:
    """[x'_i . x'_j, u_i . u_j, c_i, c_j], 16 entries; rotation invariant."""
    xx = np.sum(q_i[..., X_COLS] * q_j[..., X_COLS], axis=-1, keepdims=True)
    uu = np.sum(q_i[..., U_COLS] * q_j[..., U_COLS], axis=-1, keepdims=True)
    return np.concatenate([xx, uu, q_i[..., C_COLS], q_j[..., C_COLS]], axis=-1)


def edge_tensor(Q: np.ndarray, edge_mode: str) -> np.ndarray:
    """All-pairs edge features for clouds Q (B, n, 11) -> (B, n, n, d)."""
    B, n, _ = Q.shape
    qi = np.broadcast_to(Q[:, :, None, :], (B, n, n, N_FEATURES))
    qj = np.broadcast_to(Q[:, None, :, :], (B, n, n, N_FEATURES))
    fn = edge_features_ri if edge_mode == "rotation_invariant" else edge_features_raw
    return fn(qi, qj)


def gkn_forward(
    params: GknParams, config: GknConfig, Q: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Graph convolutions:

        z^0_i     = Z c_i + b_Z
        z^{l+1}_i = relu(W z^l_i + b_W + (1/n) sum_j K(e_ij) z^l_j)
        tau_hat   = F . mean_i z^depth_i + b_F

    Self-edges (j = i) are included in the sum.  Returns (tau_hat (B,), cache).
    """
    Q = np.asarray(Q, dtype=np.float64)
    single = Q.ndim == 2
    if single:
        Q = Q[None]
    Q = canonical_order(Q)  # bitwise permutation invariance
    B, n, _ = Q.shape
    m = config.m
    E = edge_tensor(Q, config.edge_mode)
    K_flat, k_cache = params.kernel.forward(E.reshape(B * n * n, config.edge_dim))
    if not np.all(np.isfinite(K_flat)):
        raise NonFiniteError("non-finite kernel output")
    K = K_flat.reshape(B, n, n, m, m)
    C = Q[..., C_COLS]
    z = C @ params.Z_w.T + params.Z_b
    zs = [z]
    pre_acts = []
    for layer in range(config.depth):
        msg = np.einsum("bijkl,bjl->bik", K, z, optimize=True) / n
        a = z @ params.W_w.T + params.W_b + msg
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite pre-activation at graph layer {layer}")
        pre_acts.append(a)
        z = np.maximum(a, 0.0)
        zs.append(z)
    pooled = z.mean(axis=1)
    tau = pooled @ params.F_w.T + params.F_b
    tau = tau[:, 0]
    cache = {
        "Q": Q,
        "K": K,
        "k_cache": k_cache,
        "zs": zs,
        "pre_acts": pre_acts,
        "pooled": pooled,
        "n": n,
    }
    if single:
        tau = tau[0]
    return tau, cache


def gkn_backward(
    params: GknParams, config: GknConfig, cache: dict, dtau: np.ndarray
) -> list[np.ndarray]:
    """Exact gradients of sum(dtau * tau_hat) w.r.t. all parameter blocks,
    ordered like GknParams.as_list()."""
    dtau = np.atleast_1d(np.asarray(dtau, dtype=np.float64))
    K = cache["K"]
    zs = cache["zs"]
    pre_acts = cache["pre_acts"]
    n = cache["n"]
    B = K.shape[0]
    m = config.m
    if len(zs) != config.depth + 1:
        raise DimensionError("cache does not match this config")

    dF_w = (dtau[:, None] * cache["pooled"]).sum(axis=0)[None, :]
    dF_b = np.array([dtau.sum()])
    dz = (dtau[:, None] @ params.F_w)[:, None, :] / n
    dz = np.broadcast_to(dz, (B, n, m)).copy()

    dW_w = np.zeros_like(params.W_w)
    dW_b = np.zeros_like(params.W_b)
    dK = np.zeros_like(K)
    for layer in range(config.depth - 1, -1, -1):
        a = pre_acts[layer]
        z_prev = zs[layer]
        da = dz * (a > 0.0)
        dW_w += np.einsum("bik,bil->kl", da, z_prev, optimize=True)
        dW_b += da.sum(axis=(0, 1))
        dK += np.einsum("bik,bjl->bijkl", da, z_prev, optimize=True) / n
        dz = da @ params.W_w + np.einsum("bijkl,bik->bjl", K, da, optimize=True) / n
    dZ_w = np.einsum("bik,bil->kl", dz, cache["Q"][..., C_COLS], optimize=True)
    dZ_b = dz.sum(axis=(0, 1))
    _, k_grads = params.kernel.backward(
        cache["k_cache"], dK.reshape(B * n * n, m * m)
    )
    return [dZ_w, dZ_b, dW_w, dW_b, *k_grads, dF_w, dF_b]


def gkn_param_count(config: GknConfig | None = None) -> int:
    """Composite trainable-parameter count for a config (default RI: 32577)."""
    config = config or GknConfig()
    rng = np.random.default_rng(0)
    kernel = Mlp.create(list(config.kernel_sizes), rng)
    m = config.m
    return param_count(kernel, [(7, m), (m, m), (m, 1)])


def preprocess_payload_bytes(n: int, n_samples: int, edge_dim: int) -> int:
    """Exact bytes of a materialized per-sample edge-feature store."""
    return n_samples * n * n * edge_dim * 8


class MemoryBudgetError(MemoryError):
    """Edge-store materialization would exceed the configured cap."""


def gkn_preprocess(
    Q: np.ndarray, config: GknConfig, max_bytes: int | None = None
) -> np.ndarray:
    """Materialize the (S, n, n, d) edge tensor once for reuse across epochs."""
    S, n, _ = Q.shape
    payload = preprocess_payload_bytes(n, S, config.edge_dim)
    if max_bytes is not None and payload > max_bytes:
        raise MemoryBudgetError(
            f"edge store needs {payload} bytes > cap {max_bytes}; reduce the stencil size"
        )
    return edge_tensor(Q, config.edge_mode)


def save_gkn(
    path, params: GknParams, config: GknConfig, extra_meta: dict | None = None
) -> None:
    meta = {
        "m": config.m,
        "depth": config.depth,
        "edge_mode": config.edge_mode,
        "kernel_sizes": list(config.kernel_sizes),
        **(extra_meta or {}),
    }
    checkpoint.save_checkpoint(path, "gkn", meta, params.as_list())


def load_gkn(path) -> tuple[GknParams, GknConfig, dict]:
    kind, meta, arrays = checkpoint.load_checkpoint(path)
    if kind != "gkn":
        raise checkpoint.CheckpointError(f"expected a gkn checkpoint, got {kind!r}")
    config = GknConfig(
        m=meta["m"],
        depth=meta["depth"],
        edge_mode=meta["edge_mode"],
        kernel_sizes=tuple(meta["kernel_sizes"]),
    )
    rng = np.random.default_rng(0)
    params = GknParams.create(config, rng)
    template = params.as_list()
    if len(arrays) != len(template):
        raise checkpoint.CheckpointError("checkpoint block count mismatch")
    for tgt, src in zip(template, arrays):
        if tgt.shape != src.shape:
            raise checkpoint.CheckpointError(
                f"block shape mismatch: {tgt.shape} vs {src.shape}"
            )
        tgt[...] = src
    return params, config, meta
