"""Complexity study: preprocessing memory and per-epoch training time versus
stencil size, with fitted log-log slopes.

Two memory series are reported: exact payload bytes (deterministic,
platform-independent) and the OS-level high-water mark (informative only).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import psutil

from .clouds import N_FEATURES
from .gkn import EDGE_DIM_RAW, EDGE_DIM_RI, preprocess_payload_bytes
from .training import Model, Normalizer, TrainConfig, train
from .clouds import Dataset


@dataclass
class ScalingReport:
    stencil_sizes: list[int]
    payload_bytes: dict[str, list[int]] = field(default_factory=dict)
    rss_bytes: dict[str, list[int]] = field(default_factory=dict)
    epoch_seconds: dict[str, list[float]] = field(default_factory=dict)
    fitted_slopes: dict[str, float] = field(default_factory=dict)
    truncated: dict[str, bool] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("model,n,payload_bytes,rss_bytes,epoch_seconds\n")
            for model in self.payload_bytes:
                for k, n in enumerate(self.stencil_sizes):
                    if k >= len(self.payload_bytes[model]):
                        continue
                    rss = self.rss_bytes.get(model, [])
                    sec = self.epoch_seconds.get(model, [])
                    fh.write(
                        f"{model},{n},{self.payload_bytes[model][k]},"
                        f"{rss[k] if k < len(rss) else ''},"
                        f"{sec[k] if k < len(sec) else ''}\n"
                    )
            fh.write("# fitted slopes\n")
            for series, slope in sorted(self.fitted_slopes.items()):
                fh.write(f"# {series},{slope:.4f}\n")


def model_payload_bytes(model_kind: str, n: int, n_samples: int) -> int:
    """Exact preprocessed-tensor payload: GKN stores the n x n edge features,
    VCNN stores the clouds themselves."""
    if model_kind in ("gkn_ri", "gkn_raw"):
        d = EDGE_DIM_RI if model_kind == "gkn_ri" else EDGE_DIM_RAW
        return preprocess_payload_bytes(n, n_samples, d)
    return n_samples * n * N_FEATURES * 8


def measure_preprocess_memory(
    model_kind: str,
    n_values: list[int],
    samples_per_n: int,
    max_bytes: int | None = None,
) -> tuple[list[int], list[int], bool]:
    """Returns (payload series, process high-water series, truncated flag).

    The series is truncated (and flagged) at the first n whose payload would
    exceed the cap.
    """
    if len(set(n_values)) < 2:
        raise ValueError("need at least 2 distinct stencil sizes")
    payload, rss = [], []
    truncated = False
    proc = psutil.Process()
    for n in n_values:
        nbytes = model_payload_bytes(model_kind, n, samples_per_n)
        if max_bytes is not None and nbytes > max_bytes:
            truncated = True
            break
        payload.append(nbytes)
        rss.append(proc.memory_info().rss)
    return payload, rss, truncated


def synthetic_dataset(n: int, n_samples: int, seed: int = 0) -> Dataset:
    """Random clouds with the production feature layout, for timing runs."""
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((n_samples, n, N_FEATURES))
    labels = rng.standard_normal(n_samples)
    centers = np.zeros((n_samples, 2))
    return Dataset(Q, labels, centers, meta={"n": n, "seed": seed, "synthetic": True})


def measure_epoch_time(
    model_kind: str,
    n_values: list[int],
    samples_per_n: int = 48,
    repetitions: int = 3,
    batch_size: int = 16,
    seed: int = 0,
) -> tuple[list[float], list[bool]]:
    """Median wall seconds per training epoch for each n, warm-up epoch
    excluded.  The second return flags sizes whose spread exceeded 20% of the
    median (measurement noise, not failure)."""
    if repetitions < 3:
        raise ValueError("need at least 3 repetitions")
    medians, noisy = [], []
    norm = Normalizer(
        c_mean=np.zeros(7), c_std=np.ones(7), x_scale=1.0, u_scale=1.0,
        label_mean=0.0, label_std=1.0,
    )
    for n in n_values:
        dataset = synthetic_dataset(n, samples_per_n, seed)
        model = Model(model_kind, seed=seed)
        config = TrainConfig(
            epochs=1, batch_size=batch_size, seed=seed, model_kind=model_kind
        )
        train(model, dataset, config, norm)  # warm-up, excluded
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            train(model, dataset, config, norm)
            times.append(time.perf_counter() - t0)
        med = float(np.median(times))
        medians.append(med)
        noisy.append((max(times) - min(times)) > 0.2 * med)
    return medians, noisy


def fit_loglog_slope(x: list[float], y: list[float]) -> tuple[float, float]:
    """Least-squares line through (ln x, ln y); returns (slope, intercept)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2 or x.size != y.size:
        raise ValueError("need at least 2 matched points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit requires positive values")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def run_scaling_study(
    n_values: list[int] | None = None,
    samples_per_n: int = 48,
    repetitions: int = 3,
    max_bytes: int | None = None,
    model_kinds: tuple[str, ...] = ("gkn_ri", "vcnn"),
    measure_time: bool = True,
) -> ScalingReport:
    n_values = n_values or [25, 50, 100, 200]
    report = ScalingReport(stencil_sizes=list(n_values))
    for kind in model_kinds:
        payload, rss, truncated = measure_preprocess_memory(
            kind, n_values, samples_per_n, max_bytes
        )
        report.payload_bytes[kind] = payload
        report.rss_bytes[kind] = rss
        report.truncated[kind] = truncated
        ns = n_values[: len(payload)]
        report.fitted_slopes[f"{kind}_payload"], _ = fit_loglog_slope(ns, payload)
        if measure_time:
            seconds, _ = measure_epoch_time(
                kind, ns, samples_per_n, repetitions
            )
            report.epoch_seconds[kind] = seconds
            report.fitted_slopes[f"{kind}_time"], _ = fit_loglog_slope(ns, seconds)
    return report
