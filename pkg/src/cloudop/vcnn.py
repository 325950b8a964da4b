"""Vector-cloud neural network: scalar-feature embedding, factored invariant
projection features (single block or the split spatial/velocity/scalar
blocks), and the fitting network.

The n x n pairwise Gram matrix Q Q^T is never materialized; projections go
through the m x k intermediates (1/n) G^T Q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .clouds import C_COLS, U_COLS, X_COLS, canonical_order
from .nnet import DimensionError, Mlp, NonFiniteError

EMBEDDING_SIZES = (7, 32, 64, 64)
FITTING_HIDDEN = 128


@dataclass
class VcnnConfig:
    m: int = 64
    m_star: int = 4
    variant: str = "single_d"  # or "split_d"
    embedding_sizes: tuple[int, ...] = EMBEDDING_SIZES

    def __post_init__(self):
        if self.variant not in ("single_d", "split_d"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.m_star > self.m:
            raise DimensionError("m_star must not exceed m")
        if self.embedding_sizes[-1] != self.m:
            raise DimensionError("embedding output must equal m")

    @property
    def fitting_input(self) -> int:
        if self.variant == "single_d":
            return self.m * self.m_star
        return 2 * self.m * self.m_star + 7 * self.m

    @property
    def fitting_sizes(self) -> tuple[int, ...]:
        return (self.fitting_input, FITTING_HIDDEN, 1)


@dataclass
class VcnnParams:
    embedding: Mlp  # relu on every layer, including the last
    fitting: Mlp  # relu hidden, linear last

    @classmethod
    def create(cls, config: VcnnConfig, rng: np.random.Generator) -> "VcnnParams":
        return cls(
            embedding=Mlp.create(
                list(config.embedding_sizes), rng, final_activation="relu"
            ),
            fitting=Mlp.create(list(config.fitting_sizes), rng),
        )

    def as_list(self) -> list[np.ndarray]:
        return self.embedding.params() + self.fitting.params()

    def n_params(self) -> int:
        return sum(p.size for p in self.as_list())


def embed(params: VcnnParams, C: np.ndarray) -> np.ndarray:
    """Row-wise embedding of the scalar block C (..., n, 7) -> G (..., n, m)."""
    G, _ = params.embedding.forward(C)
    return G


def invariant_features(G: np.ndarray, Q: np.ndarray, m_star: int) -> np.ndarray:
    """D = P P_star^T with P = (1/n) G^T Q; equals (1/n^2) G^T Q Q^T G_star."""
    n = Q.shape[-2]
    P = np.swapaxes(G, -1, -2) @ Q / n
    P_star = np.swapaxes(G[..., :m_star], -1, -2) @ Q / n
    return P @ np.swapaxes(P_star, -1, -2)


def invariant_features_split(
    G: np.ndarray, X: np.ndarray, U: np.ndarray, C: np.ndarray, m_star: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """D1 = (1/n^2) G^T X X^T G_star, D2 likewise for U, D3 = (1/n) G^T C."""
    n = X.shape[-2]
    Gt = np.swapaxes(G, -1, -2)
    Gst = np.swapaxes(G[..., :m_star], -1, -2)
    A1, A1s = Gt @ X / n, Gst @ X / n
    A2, A2s = Gt @ U / n, Gst @ U / n
    D1 = A1 @ np.swapaxes(A1s, -1, -2)
    D2 = A2 @ np.swapaxes(A2s, -1, -2)
    D3 = Gt @ C / n
    return D1, D2, D3


def vcnn_forward(
    params: VcnnParams, config: VcnnConfig, Q: np.ndarray
) -> tuple[np.ndarray, dict]:
    """tau_hat = fitting(flatten(D)) (row-major flattening, fixed order).

    Returns (tau_hat (B,), cache) for clouds Q of shape (B, n, 11) or (n, 11).
    """
    Q = np.asarray(Q, dtype=np.float64)
    single = Q.ndim == 2
    if single:
        Q = Q[None]
    Q = canonical_order(Q)  # bitwise permutation invariance
    B, n, _ = Q.shape
    C = Q[..., C_COLS]
    G, e_cache = params.embedding.forward(C)
    ms = config.m_star
    if config.variant == "single_d":
        P = np.swapaxes(G, -1, -2) @ Q / n
        Ps = np.swapaxes(G[..., :ms], -1, -2) @ Q / n
        D = P @ np.swapaxes(Ps, -1, -2)
        flat = D.reshape(B, -1)
        cache_extra = {"P": P, "Ps": Ps}
    else:
        X, U = Q[..., X_COLS], Q[..., U_COLS]
        Gt = np.swapaxes(G, -1, -2)
        Gst = np.swapaxes(G[..., :ms], -1, -2)
        A1, A1s = Gt @ X / n, Gst @ X / n
        A2, A2s = Gt @ U / n, Gst @ U / n
        D1 = A1 @ np.swapaxes(A1s, -1, -2)
        D2 = A2 @ np.swapaxes(A2s, -1, -2)
        D3 = Gt @ C / n
        flat = np.concatenate(
            [D1.reshape(B, -1), D2.reshape(B, -1), D3.reshape(B, -1)], axis=1
        )
        cache_extra = {"A1": A1, "A1s": A1s, "A2": A2, "A2s": A2s}
    if not np.all(np.isfinite(flat)):
        raise NonFiniteError("non-finite invariant features")
    tau, f_cache = params.fitting.forward(flat)
    tau = tau[:, 0]
    cache = {
        "Q": Q,
        "G": G,
        "e_cache": e_cache,
        "f_cache": f_cache,
        "n": n,
        **cache_extra,
    }
    if single:
        tau = tau[0]
    return tau, cache


def vcnn_backward(
    params: VcnnParams, config: VcnnConfig, cache: dict, dtau: np.ndarray
) -> list[np.ndarray]:
    """Exact gradients of sum(dtau * tau_hat) over embedding + fitting
    parameters, ordered like VcnnParams.as_list()."""
    dtau = np.atleast_1d(np.asarray(dtau, dtype=np.float64))
    Q = cache["Q"]
    G = cache["G"]
    n = cache["n"]
    B = Q.shape[0]
    ms = config.m_star
    dflat, f_grads = params.fitting.backward(cache["f_cache"], dtau[:, None])
    if config.variant == "single_d":
        m = config.m
        dD = dflat.reshape(B, m, ms)
        P, Ps = cache["P"], cache["Ps"]
        dP = dD @ Ps
        dPs = np.swapaxes(dD, -1, -2) @ P
        dG = Q @ np.swapaxes(dP, -1, -2) / n
        dGs = Q @ np.swapaxes(dPs, -1, -2) / n
        dG[..., :ms] += dGs
    else:
        m = config.m
        X, U, C = Q[..., X_COLS], Q[..., U_COLS], Q[..., C_COLS]
        k1 = m * ms
        dD1 = dflat[:, :k1].reshape(B, m, ms)
        dD2 = dflat[:, k1 : 2 * k1].reshape(B, m, ms)
        dD3 = dflat[:, 2 * k1 :].reshape(B, m, 7)
        A1, A1s, A2, A2s = cache["A1"], cache["A1s"], cache["A2"], cache["A2s"]
        dA1 = dD1 @ A1s
        dA1s = np.swapaxes(dD1, -1, -2) @ A1
        dA2 = dD2 @ A2s
        dA2s = np.swapaxes(dD2, -1, -2) @ A2
        dG = X @ np.swapaxes(dA1, -1, -2) / n + U @ np.swapaxes(dA2, -1, -2) / n
        dG += C @ np.swapaxes(dD3, -1, -2) / n
        dG[..., :ms] += X @ np.swapaxes(dA1s, -1, -2) / n + U @ np.swapaxes(dA2s, -1, -2) / n
    _, e_grads = params.embedding.backward(cache["e_cache"], dG)
    return e_grads + f_grads


def save_vcnn(
    path, params: VcnnParams, config: VcnnConfig, extra_meta: dict | None = None
) -> None:
    meta = {
        "m": config.m,
        "m_star": config.m_star,
        "variant": config.variant,
        "embedding_sizes": list(config.embedding_sizes),
        "fitting_sizes": list(config.fitting_sizes),
        **(extra_meta or {}),
    }
    checkpoint.save_checkpoint(path, "vcnn", meta, params.as_list())


def load_vcnn(path) -> tuple[VcnnParams, VcnnConfig, dict]:
    kind, meta, arrays = checkpoint.load_checkpoint(path)
    if kind != "vcnn":
        raise checkpoint.CheckpointError(f"expected a vcnn checkpoint, got {kind!r}")
    config = VcnnConfig(
        m=meta["m"],
        m_star=meta["m_star"],
        variant=meta["variant"],
        embedding_sizes=tuple(meta["embedding_sizes"]),
    )
    if list(config.fitting_sizes) != meta["fitting_sizes"]:
        raise checkpoint.CheckpointError(
            f"fitting sizes {meta['fitting_sizes']} inconsistent with variant "
            f"{config.variant!r} (expected {list(config.fitting_sizes)})"
        )
    rng = np.random.default_rng(0)
    params = VcnnParams.create(config, rng)
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
