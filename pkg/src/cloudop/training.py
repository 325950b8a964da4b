"""Dataset normalization, mini-batch Adam training, the normalized field
error metric, and invariance audits of trained models.

The evaluation metric is always computed on raw labels:

    error = sqrt(sum |tau_hat - tau|^2) / sqrt(sum |tau|^2)
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .clouds import C_COLS, Dataset, U_COLS, X_COLS, rotate_cloud
from .gkn import (
    GknConfig,
    GknParams,
    gkn_backward,
    gkn_forward,
    load_gkn,
    save_gkn,
)
from .nnet import AdamState, adam_step
from .vcnn import (
    VcnnConfig,
    VcnnParams,
    load_vcnn,
    save_vcnn,
    vcnn_backward,
    vcnn_forward,
)

MODEL_KINDS = ("gkn_ri", "gkn_raw", "vcnn", "vcnn_split")
STD_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the last finite parameter snapshot."""

    def __init__(self, message: str, last_good: list[np.ndarray]):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    lr_halve_every: int = 80
    seed: int = 0
    model_kind: str = "vcnn"
    early_stop_loss: float = 0.0  # stop once train loss falls below (0: never)

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")


@dataclass
class Normalizer:
    """Column statistics over a training set.

    Scalar columns get per-column mean/std; the x' and u vector blocks are
    divided by one rotation-invariant scale each (rms vector magnitude), so
    normalization commutes with frame rotation.
    """

    c_mean: np.ndarray  # (7,)
    c_std: np.ndarray  # (7,)
    x_scale: float
    u_scale: float
    label_mean: float
    label_std: float


def fit_normalizer(dataset: Dataset) -> Normalizer:
    if dataset.n_samples == 0:
        raise ValueError("cannot fit a normalizer on an empty dataset")
    flat = dataset.Q.reshape(-1, dataset.Q.shape[-1])
    c = flat[:, C_COLS]
    c_mean = c.mean(axis=0)
    c_std = c.std(axis=0)
    if np.any(c_std < STD_FLOOR):
        warnings.warn("constant scalar column; std floored", stacklevel=2)
    c_std = np.maximum(c_std, STD_FLOOR)
    x_scale = max(float(np.sqrt(np.mean(np.sum(flat[:, X_COLS] ** 2, axis=1)))), STD_FLOOR)
    u_scale = max(float(np.sqrt(np.mean(np.sum(flat[:, U_COLS] ** 2, axis=1)))), STD_FLOOR)
    label_std = max(float(dataset.labels.std()), STD_FLOOR)
    return Normalizer(
        c_mean=c_mean,
        c_std=c_std,
        x_scale=x_scale,
        u_scale=u_scale,
        label_mean=float(dataset.labels.mean()),
        label_std=label_std,
    )


def apply_normalizer(dataset: Dataset, norm: Normalizer) -> Dataset:
    """Feature normalization only; the label column is untouched."""
    Q = dataset.Q.copy()
    Q[..., X_COLS] /= norm.x_scale
    Q[..., U_COLS] /= norm.u_scale
    Q[..., C_COLS] = (Q[..., C_COLS] - norm.c_mean) / norm.c_std
    meta = dict(dataset.meta)
    meta["normalized"] = True
    return Dataset(Q, dataset.labels.copy(), dataset.centers.copy(), meta)


class Model:
    """Uniform forward/backward facade over the two operators."""

    def __init__(self, kind: str, params=None, seed: int = 0):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        rng = np.random.default_rng(seed)
        if kind in ("gkn_ri", "gkn_raw"):
            mode = "rotation_invariant" if kind == "gkn_ri" else "raw_concat"
            self.config = GknConfig(edge_mode=mode)
            self.params = params or GknParams.create(self.config, rng)
        else:
            variant = "single_d" if kind == "vcnn" else "split_d"
            self.config = VcnnConfig(variant=variant)
            self.params = params or VcnnParams.create(self.config, rng)

    def forward(self, Q: np.ndarray):
        if self.kind.startswith("gkn"):
            return gkn_forward(self.params, self.config, Q)
        return vcnn_forward(self.params, self.config, Q)

    def backward(self, cache, dtau: np.ndarray) -> list[np.ndarray]:
        if self.kind.startswith("gkn"):
            return gkn_backward(self.params, self.config, cache, dtau)
        return vcnn_backward(self.params, self.config, cache, dtau)

    def param_list(self) -> list[np.ndarray]:
        return self.params.as_list()

    def predict(self, Q: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Forward in batches, no caches kept."""
        out = np.empty(Q.shape[0])
        for lo in range(0, Q.shape[0], batch_size):
            tau, _ = self.forward(Q[lo : lo + batch_size])
            out[lo : lo + batch_size] = tau
        return out

    def save(self, path, norm: "Normalizer | None" = None) -> None:
        extra = {"model_kind": self.kind}
        if norm is not None:
            extra["normalizer"] = {
                "c_mean": norm.c_mean.tolist(),
                "c_std": norm.c_std.tolist(),
                "x_scale": norm.x_scale,
                "u_scale": norm.u_scale,
                "label_mean": norm.label_mean,
                "label_std": norm.label_std,
            }
        if self.kind.startswith("gkn"):
            save_gkn(path, self.params, self.config, extra)
        else:
            save_vcnn(path, self.params, self.config, extra)

    @classmethod
    def load(cls, path) -> tuple["Model", "Normalizer | None"]:
        from . import checkpoint

        kind, meta, _ = checkpoint.load_checkpoint(path)
        model_kind = meta["model_kind"]
        if kind == "gkn":
            params, config, meta = load_gkn(path)
        else:
            params, config, meta = load_vcnn(path)
        model = cls.__new__(cls)
        model.kind = model_kind
        model.config = config
        model.params = params
        norm = None
        if "normalizer" in meta:
            d = meta["normalizer"]
            norm = Normalizer(
                c_mean=np.array(d["c_mean"]),
                c_std=np.array(d["c_std"]),
                x_scale=d["x_scale"],
                u_scale=d["u_scale"],
                label_mean=d["label_mean"],
                label_std=d["label_std"],
            )
        return model, norm


@dataclass
class EvalReport:
    error_pct: float
    abs_errors: np.ndarray
    predictions: np.ndarray


def field_error(tau_hat: np.ndarray, tau: np.ndarray) -> float:
    denom = np.sqrt(np.sum(np.abs(tau) ** 2))
    if denom == 0:
        raise ZeroDivisionError("all-zero truth labels: error metric undefined")
    return float(np.sqrt(np.sum(np.abs(tau_hat - tau) ** 2)) / denom)


def evaluate(model: Model, dataset: Dataset, norm: Normalizer) -> EvalReport:
    pred_n = model.predict(dataset.Q)
    pred = pred_n * norm.label_std + norm.label_mean
    return EvalReport(
        error_pct=100.0 * field_error(pred, dataset.labels),
        abs_errors=np.abs(pred - dataset.labels),
        predictions=pred,
    )


def train(
    model: Model,
    dataset: Dataset,
    config: TrainConfig,
    norm: Normalizer,
    log_path=None,
) -> list[dict]:
    """Mini-batch Adam on MSE over standardized labels.

    Mutates model parameters in place and returns the per-epoch history
    (epoch, train_loss, train_error_pct, wall_seconds).  Deterministic for a
    fixed config and dataset.
    """
    y = (dataset.labels - norm.label_mean) / norm.label_std
    S = dataset.n_samples
    rng = np.random.default_rng(config.seed)
    params = model.param_list()
    state = AdamState.for_params(params, lr=config.lr)
    history: list[dict] = []
    last_good = [p.copy() for p in params]
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        state.lr = config.lr * 0.5 ** (epoch // config.lr_halve_every)
        order = rng.permutation(S)
        sq_sum = 0.0
        preds = np.empty(S)
        for lo in range(0, S, config.batch_size):
            sel = order[lo : lo + config.batch_size]
            tau, cache = model.forward(dataset.Q[sel])
            resid = tau - y[sel]
            preds[sel] = tau
            sq_sum += float(resid @ resid)
            grads = model.backward(cache, 2.0 * resid / sel.size)
            adam_step(params, grads, state)
        loss = sq_sum / S
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"loss became non-finite at epoch {epoch}", last_good
            )
        last_good = [p.copy() for p in params]
        pred_raw = preds * norm.label_std + norm.label_mean
        entry = {
            "epoch": epoch,
            "train_loss": loss,
            "train_error_pct": 100.0 * field_error(pred_raw, dataset.labels),
            "wall_seconds": time.perf_counter() - t0,
        }
        history.append(entry)
        if config.early_stop_loss > 0 and loss < config.early_stop_loss:
            break
    if log_path is not None:
        write_training_log(log_path, history)
    return history


def write_training_log(path, history: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,train_error_pct,wall_seconds\n")
        for h in history:
            fh.write(
                f"{h['epoch']},{h['train_loss']:.10e},"
                f"{h['train_error_pct']:.6f},{h['wall_seconds']:.3f}\n"
            )


def apply_transform(Q: np.ndarray, transform: tuple) -> np.ndarray:
    """Transform descriptors: ('rotation', beta), ('translation', (tx, ty)),
    ('permutation', seed).  Translation is a no-op on Q by construction
    (relative coordinates)."""
    kind = transform[0]
    if kind == "rotation":
        return rotate_cloud(Q, transform[1])
    if kind == "translation":
        return Q.copy()
    if kind == "permutation":
        rng = np.random.default_rng(transform[1])
        out = Q.copy()
        for k in range(out.shape[0]):
            out[k] = out[k][rng.permutation(out.shape[1])]
        return out
    raise ValueError(f"unknown transform {kind!r}")


def invariance_audit(
    model: Model, dataset: Dataset, transforms: list[tuple], batch_size: int = 16
) -> list[dict]:
    """Max relative output deviation per transform:

        max_i |tau(T Q_i) - tau(Q_i)| / (|tau(Q_i)| + 1e-12)
    """
    base = model.predict(dataset.Q, batch_size)
    results = []
    for transform in transforms:
        moved = model.predict(apply_transform(dataset.Q, transform), batch_size)
        dev = float(np.max(np.abs(moved - base) / (np.abs(base) + 1e-12)))
        results.append({"transform": transform, "max_deviation": dev})
    return results


def write_audit_report(path, results: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write("transform,max_deviation\n")
        for row in results:
            kind, arg = row["transform"][0], row["transform"][1]
            fh.write(f"{kind}:{arg},{row['max_deviation']:.6e}\n")
