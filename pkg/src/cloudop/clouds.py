"""Training-sample construction: elliptical regions of influence, stencil
sampling, the n x 11 feature matrix Q, and dataset (de)serialization.

Feature layout per row of Q (column order is fixed and recorded in files):

    0:2  x_rel   relative position of the cell w.r.t. the cloud center
    2:4  u       velocity
    4:11 c       scalars: theta, s, b, u_mag, eta, r, r_prime
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flow import FlowField, StructuredGrid, cell_positions, rotation_matrix

FEATURE_COLUMNS = (
    "x_rel_1",
    "x_rel_2",
    "u_1",
    "u_2",
    "theta",
    "s",
    "b",
    "u_mag",
    "eta",
    "r",
    "r_prime",
)
N_FEATURES = 11
DEFAULT_STENCIL = 150
DEFAULT_EPS = 0.01

X_COLS = slice(0, 2)
U_COLS = slice(2, 4)
C_COLS = slice(4, 11)


class SamplingError(RuntimeError):
    """Cloud construction failed; message carries cell coordinates."""


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the byte offset."""


@dataclass
class RegionOfInfluence:
    """Ellipse with half-lengths l1 >= l2, major axis along the local velocity."""

    l1: float
    l2: float
    axis: np.ndarray  # unit vector
    center: np.ndarray


@dataclass
class VectorCloud:
    Q: np.ndarray  # (n, 11)
    tau_label: float
    center: np.ndarray
    ellipse: RegionOfInfluence | None = None


@dataclass
class Dataset:
    """Fixed-stencil sample collection with provenance metadata.

    Samples are stored stacked for efficiency: Q (S, n, 11), labels (S,),
    centers (S, 2).
    """

    Q: np.ndarray
    labels: np.ndarray
    centers: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.Q.shape[0]

    @property
    def stencil(self) -> int:
        return self.Q.shape[1]

    def sample(self, i: int) -> VectorCloud:
        return VectorCloud(self.Q[i], float(self.labels[i]), self.centers[i])


def influence_ellipse(
    u: np.ndarray, nu: float, zeta: float, eps: float, center=(0.0, 0.0)
) -> RegionOfInfluence:
    """Half-lengths of the region of influence:

        l1 = | 2 nu ln(eps) / (sqrt(|u|^2 + 4 nu zeta) - |u|) |
        l2 = | sqrt(nu / zeta) ln(eps) |
    """
    if nu <= 0 or zeta <= 0:
        raise ValueError("nu and zeta must be positive")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    u = np.asarray(u, dtype=np.float64)
    speed = float(np.hypot(u[0], u[1]))
    log_eps = np.log(eps)
    l1 = abs(2 * nu * log_eps / (np.sqrt(speed**2 + 4 * nu * zeta) - speed))
    l2 = abs(np.sqrt(nu / zeta) * log_eps)
    axis = u / speed if speed > 0 else np.array([1.0, 0.0])
    return RegionOfInfluence(l1, l2, axis, np.asarray(center, dtype=np.float64))


def _elliptic_metric(d: np.ndarray, ellipse: RegionOfInfluence) -> np.ndarray:
    """(d.axis / l1)^2 + (d.axis_perp / l2)^2, with degenerate axes mapping
    any nonzero offset to +inf and the zero offset to 0."""
    axis = ellipse.axis
    perp = np.array([-axis[1], axis[0]])
    along = d @ axis
    across = d @ perp
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(ellipse.l1 > 0, (along / max(ellipse.l1, 1e-300)) ** 2, np.where(along == 0, 0.0, np.inf))
        m = m + np.where(ellipse.l2 > 0, (across / max(ellipse.l2, 1e-300)) ** 2, np.where(across == 0, 0.0, np.inf))
    return m


def collect_candidates(
    grid: StructuredGrid,
    fld: FlowField,
    center_idx: tuple[int, int],
    ellipse: RegionOfInfluence,
) -> np.ndarray:
    """Indices (flattened, i * ny + j) of unmasked cells inside the ellipse.
    The center cell always qualifies."""
    ci, cj = center_idx
    if grid.obstacle_mask[ci, cj]:
        raise SamplingError(f"center cell {center_idx} is masked")
    pos = cell_positions(grid, fld.frame_rotation)
    d = (pos - pos[ci, cj]).reshape(-1, 2)
    inside = _elliptic_metric(d, ellipse) <= 1.0
    inside &= ~grid.obstacle_mask.ravel()
    inside[ci * grid.ny + cj] = True
    out = np.flatnonzero(inside)
    if out.size == 0:
        raise SamplingError(f"empty candidate set at cell {center_idx}")
    return out


def sample_stencil(
    candidates: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n draws: uniform without replacement when possible, with replacement
    when the candidate set is smaller than the stencil."""
    if n < 1:
        raise ValueError("stencil size must be >= 1")
    candidates = np.asarray(candidates)
    if candidates.size == 0:
        raise SamplingError("no candidates to sample from")
    replace = candidates.size < n
    return rng.choice(candidates, size=n, replace=replace)


def assemble_features(
    fld: FlowField,
    grid: StructuredGrid,
    center_idx: tuple[int, int],
    indices: np.ndarray,
    ellipse: RegionOfInfluence,
) -> VectorCloud:
    """Build the (n, 11) feature matrix for the sampled cells.

    Proximity scalars: r = exp(-|x_rel|^2 / l2^2) and r' = exp(-elliptic
    metric in the local velocity frame); both are frame-invariant.
    """
    ci, cj = center_idx
    pos = cell_positions(grid, fld.frame_rotation).reshape(-1, 2)
    center = pos[ci * grid.ny + cj]
    x_rel = pos[indices] - center
    ii, jj = np.unravel_index(indices, (grid.nx, grid.ny))
    u = fld.u[ii, jj]
    u_mag = np.hypot(u[:, 0], u[:, 1])
    metric = _elliptic_metric(x_rel, ellipse)
    r2 = np.einsum("ij,ij->i", x_rel, x_rel)
    l2sq = ellipse.l2**2 if ellipse.l2 > 0 else np.inf
    r = np.exp(-r2 / l2sq) if np.isfinite(l2sq) else np.where(r2 == 0, 1.0, 0.0)
    r_prime = np.exp(-np.where(np.isfinite(metric), metric, np.inf))
    Q = np.column_stack(
        [
            x_rel,
            u,
            fld.theta[ii, jj],
            fld.s[ii, jj],
            fld.b[ii, jj],
            u_mag,
            fld.eta[ii, jj],
            r,
            r_prime,
        ]
    )
    if not np.all(np.isfinite(Q)):
        raise SamplingError(f"non-finite feature values at cell {center_idx}")
    label = float(fld.tau[ci, cj]) if fld.tau is not None else float("nan")
    return VectorCloud(Q, label, center.copy(), ellipse)


def truncation_box(
    fields: list[FlowField], grids: list[StructuredGrid], pad_cells: int = 2
) -> tuple[int, int, int, int]:
    """Index bounding box (i0, i1, j0, j1), inclusive, of cells whose tau
    exceeds 1e-6 of the max over all fields, padded by pad_cells."""
    peak = max(float(np.max(f.tau)) for f in fields)
    threshold = 1e-6 * peak
    i0 = j0 = np.inf
    i1 = j1 = -np.inf
    for f, g in zip(fields, grids):
        keep = f.tau > threshold
        if not keep.any():
            continue
        ii, jj = np.nonzero(keep)
        i0, i1 = min(i0, ii.min()), max(i1, ii.max())
        j0, j1 = min(j0, jj.min()), max(j1, jj.max())
    if not np.isfinite(i0):
        raise SamplingError("tau is zero everywhere; no truncation box")
    g = grids[0]
    return (
        max(int(i0) - pad_cells, 0),
        min(int(i1) + pad_cells, g.nx - 1),
        max(int(j0) - pad_cells, 0),
        min(int(j1) + pad_cells, g.ny - 1),
    )


def build_dataset(
    fields: list[FlowField],
    grids: list[StructuredGrid],
    nu: float,
    zeta: float,
    n: int = DEFAULT_STENCIL,
    eps: float = DEFAULT_EPS,
    seed: int = 0,
    box: tuple[int, int, int, int] | None = None,
    max_samples_per_field: int | None = None,
) -> Dataset:
    """One labeled VectorCloud per fluid cell inside the truncation box.

    Each center owns an rng stream derived from (seed, field index, center
    index), so any evaluation order produces identical draws.
    """
    for f in fields:
        if f.tau is None:
            raise SamplingError("tau must be solved on every field")
    if box is None:
        box = truncation_box(fields, grids)
    i0, i1, j0, j1 = box
    Qs, labels, centers = [], [], []
    for f_idx, (fld, grid) in enumerate(zip(fields, grids)):
        ii, jj = np.meshgrid(
            np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij"
        )
        cells = np.column_stack([ii.ravel(), jj.ravel()])
        cells = cells[~grid.obstacle_mask[cells[:, 0], cells[:, 1]]]
        if max_samples_per_field is not None and len(cells) > max_samples_per_field:
            sel_rng = np.random.default_rng(np.random.SeedSequence((seed, f_idx, 0xC511)))
            cells = cells[
                sel_rng.choice(len(cells), size=max_samples_per_field, replace=False)
            ]
        for c_idx, (ci, cj) in enumerate(cells):
            ellipse = influence_ellipse(fld.u[ci, cj], nu, zeta, eps)
            cand = collect_candidates(grid, fld, (ci, cj), ellipse)
            rng = np.random.default_rng(np.random.SeedSequence((seed, f_idx, c_idx)))
            picks = sample_stencil(cand, n, rng)
            cloud = assemble_features(fld, grid, (ci, cj), picks, ellipse)
            Qs.append(cloud.Q)
            labels.append(cloud.tau_label)
            centers.append(cloud.center)
    meta = {
        "n": n,
        "eps": eps,
        "seed": seed,
        "nu": nu,
        "zeta": zeta,
        "box": tuple(int(v) for v in box),
        "frame_rotations": [float(f.frame_rotation) for f in fields],
        "flow_angles": [float(f.meta.get("alpha", np.nan)) for f in fields],
    }
    return Dataset(
        Q=np.array(Qs).reshape(len(Qs), n, N_FEATURES),
        labels=np.array(labels),
        centers=np.array(centers).reshape(len(centers), 2),
        meta=meta,
    )


def canonical_order(Q: np.ndarray) -> np.ndarray:
    """Sort cloud rows lexicographically (per sample for a batch).

    The operators are mathematically permutation invariant; fixing a
    canonical row order makes them *bitwise* invariant, since float
    summation order no longer depends on the input ordering.
    """
    Q = np.asarray(Q)
    if Q.ndim == 2:
        return Q[np.lexsort(Q.T[::-1])]
    out = np.empty_like(Q)
    for k in range(Q.shape[0]):
        out[k] = Q[k][np.lexsort(Q[k].T[::-1])]
    return out


def rotate_cloud(Q: np.ndarray, beta: float) -> np.ndarray:
    """Apply a frame rotation to the vector columns of Q (scalars untouched)."""
    R = rotation_matrix(-beta)
    out = Q.copy()
    out[..., X_COLS] = Q[..., X_COLS] @ R.T
    out[..., U_COLS] = Q[..., U_COLS] @ R.T
    return out


MAGIC = b"VCLD1"


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Binary, little-endian; see DatasetFormatError for the parse contract."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<IQ", dataset.stencil if dataset.n_samples else dataset.Q.shape[1], dataset.n_samples)
    for tag in FEATURE_COLUMNS:
        t = tag.encode("ascii")
        blob += struct.pack("<I", len(t)) + t
    blob += struct.pack("<q", int(dataset.meta.get("seed", 0)))
    rotations = dataset.meta.get("frame_rotations", [0.0])
    blob += struct.pack("<d", float(rotations[0]) if rotations else 0.0)
    for k in range(dataset.n_samples):
        blob += struct.pack("<2d", *dataset.centers[k])
        blob += struct.pack("<d", float(dataset.labels[k]))
        blob += np.ascontiguousarray(dataset.Q[k], dtype="<f8").tobytes()
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(Path(path))


def load_dataset(path: str | Path) -> Dataset:
    data = Path(path).read_bytes()
    off = 0

    def need(nbytes: int) -> bytes:
        nonlocal off
        if off + nbytes > len(data):
            raise DatasetFormatError(
                f"truncated dataset file: needed {nbytes} bytes at offset {off}"
            )
        chunk = data[off : off + nbytes]
        off += nbytes
        return chunk

    if need(len(MAGIC)) != MAGIC:
        raise DatasetFormatError("bad magic at offset 0; not a VCLD1 dataset")
    n, count = struct.unpack("<IQ", need(12))
    tags = []
    for _ in range(N_FEATURES):
        (tlen,) = struct.unpack("<I", need(4))
        tags.append(need(tlen).decode("ascii"))
    if tuple(tags) != FEATURE_COLUMNS:
        raise DatasetFormatError(f"unexpected feature columns {tags}")
    (seed,) = struct.unpack("<q", need(8))
    (frame_rotation,) = struct.unpack("<d", need(8))
    Q = np.empty((count, n, N_FEATURES))
    labels = np.empty(count)
    centers = np.empty((count, 2))
    for k in range(count):
        centers[k] = struct.unpack("<2d", need(16))
        (labels[k],) = struct.unpack("<d", need(8))
        Q[k] = np.frombuffer(need(8 * n * N_FEATURES), dtype="<f8").reshape(
            n, N_FEATURES
        )
    if off != len(data):
        raise DatasetFormatError(f"{len(data) - off} trailing bytes at offset {off}")
    return Dataset(
        Q, labels, centers, meta={"n": n, "seed": seed, "frame_rotations": [frame_rotation]}
    )


def export_dataset_csv(dataset: Dataset, path: str | Path) -> None:
    """Flat CSV mirror of the binary layout, one row per cloud point."""
    rows = []
    header = "sample,center_x,center_y,tau," + ",".join(FEATURE_COLUMNS)
    for k in range(dataset.n_samples):
        base = np.column_stack(
            [
                np.full(dataset.stencil, k),
                np.full(dataset.stencil, dataset.centers[k, 0]),
                np.full(dataset.stencil, dataset.centers[k, 1]),
                np.full(dataset.stencil, dataset.labels[k]),
                dataset.Q[k],
            ]
        )
        rows.append(base)
    out = np.vstack(rows) if rows else np.empty((0, 4 + N_FEATURES))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, out, delimiter=",", fmt="%.17g")
