"""Synthetic ground truth: analytic cylinder flow on a structured grid and a
finite-volume solve of the scalar transport equation

    u . grad(tau) - div(C_nu grad(tau)) = P - E,
    P = C_g * l_m * sqrt(max(tau, 0)) * s^2,   E = C_zeta * tau^2,

with first-order upwind convection, central diffusion and a Picard
(lagged-source) outer iteration.  Frame-rotation utilities express the same
physical field in a rotated observer frame.
"""

from __future__ import annotations

import ast
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

KAPPA = 0.41  # von Karman-style mixing-length slope


class DomainError(ValueError):
    """Geometry inconsistent with the grid."""


class ConvergenceError(RuntimeError):
    """Picard iteration did not reach tolerance; carries the residual history."""

    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


@dataclass
class StructuredGrid:
    """Uniform cell-centered grid; arrays are indexed [i, j] with i along x."""

    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)
    obstacle_mask: np.ndarray | None = None  # True inside the solid

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise DomainError("grid needs at least 3x3 cells")
        if self.dx <= 0 or self.dy <= 0:
            raise DomainError("cell sizes must be positive")
        if self.obstacle_mask is None:
            self.obstacle_mask = np.zeros((self.nx, self.ny), dtype=bool)
        self.obstacle_mask = np.asarray(self.obstacle_mask, dtype=bool)
        if self.obstacle_mask.shape != (self.nx, self.ny):
            raise DomainError("obstacle_mask shape must be (nx, ny)")

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")


@dataclass
class FlowField:
    """Velocity and derived per-cell quantities, expressed in some frame.

    ``frame_rotation`` is the angle of the current observer frame relative to
    the canonical frame; scalar channels never depend on it.
    """

    u: np.ndarray  # (nx, ny, 2)
    s: np.ndarray  # strain-rate magnitude, >= 0
    eta: np.ndarray  # wall distance, >= 0
    b: np.ndarray  # boundary-cell indicator in {0, 1}
    theta: np.ndarray  # cell area
    frame_rotation: float = 0.0
    tau: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class TransportConfig:
    C_nu: float = 0.02
    C_g: float = 1.0
    C_zeta: float = 9.0
    kappa: float = KAPPA
    l_max: float = 0.5  # mixing-length cap; defaults to the cylinder radius
    tol: float = 1e-8
    max_iters: int = 200
    tau_inflow: float = 0.0
    # Picard seed; tau = 0 is always a fixed point of the sqrt(tau) production,
    # so the iteration starts from a positive guess to reach the physical branch.
    tau_init: float = 1.0

    def __post_init__(self):
        if self.C_nu <= 0 or self.C_zeta <= 0 or self.tol <= 0:
            raise ValueError("C_nu, C_zeta and tol must be positive")

    def mixing_length(self, eta: np.ndarray) -> np.ndarray:
        return np.minimum(self.kappa * eta, self.l_max)


def rotation_matrix(beta: float) -> np.ndarray:
    c, s = np.cos(beta), np.sin(beta)
    return np.array([[c, -s], [s, c]])


def cylinder_velocity(
    x: np.ndarray, y: np.ndarray, u_inf: float, alpha: float, radius: float
) -> np.ndarray:
    """Analytic potential-flow velocity past a cylinder at the origin.

    Free stream has speed u_inf at angle alpha to the x-axis.  Complex
    velocity: u - i v = u_inf * (e^{-i alpha} - R^2 e^{i alpha} / z^2).
    """
    z = np.asarray(x, dtype=complex) + 1j * np.asarray(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = u_inf * (np.exp(-1j * alpha) - radius**2 * np.exp(1j * alpha) / z**2)
    w = np.where(np.abs(z) < 1e-300, 0.0, w)
    return np.stack([w.real, -w.imag], axis=-1)


def _first_fluid_ring(mask: np.ndarray) -> np.ndarray:
    """Fluid cells 8-adjacent to a masked cell."""
    ring = np.zeros_like(mask)
    padded = np.pad(mask, 1, constant_values=False)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            ring |= padded[1 + di : 1 + di + mask.shape[0], 1 + dj : 1 + dj + mask.shape[1]]
    return ring & ~mask


def potential_flow_cylinder(
    grid: StructuredGrid, u_inf: float, alpha: float, radius: float
) -> FlowField:
    """Potential flow past a cylinder centered at (0, 0); cells inside the
    cylinder are masked on the returned grid's obstacle_mask."""
    if radius <= 0:
        raise DomainError("radius must be positive")
    x0, y0 = grid.origin
    x1 = x0 + grid.nx * grid.dx
    y1 = y0 + grid.ny * grid.dy
    if not (x0 < -radius and x1 > radius and y0 < -radius and y1 > radius):
        raise DomainError("cylinder does not fit inside the grid domain")
    xc, yc = grid.cell_centers()
    rr = np.hypot(xc, yc)
    mask = rr <= radius
    grid.obstacle_mask = mask
    u = cylinder_velocity(xc, yc, u_inf, alpha, radius)
    u[mask] = 0.0
    eta = np.maximum(rr - radius, 0.0)
    b = _first_fluid_ring(mask).astype(np.float64)
    theta = np.full((grid.nx, grid.ny), grid.dx * grid.dy)
    fld = FlowField(
        u=u,
        s=np.zeros_like(eta),
        eta=eta,
        b=b,
        theta=theta,
        meta={"u_inf": u_inf, "alpha": alpha, "radius": radius},
    )
    fld.s = strain_magnitude(fld, grid)
    return fld


def _masked_gradient(f: np.ndarray, mask: np.ndarray, spacing: float, axis: int) -> np.ndarray:
    """Central differences, one-sided where a neighbor is masked or off-grid;
    zero where no fluid neighbor exists along the axis."""
    fluid = ~mask
    fp = np.roll(f, -1, axis=axis)
    fm = np.roll(f, 1, axis=axis)
    okp = np.roll(fluid, -1, axis=axis)
    okm = np.roll(fluid, 1, axis=axis)
    # roll wraps around; kill the wrapped entries
    edge_hi = [slice(None)] * f.ndim
    edge_hi[axis] = -1
    edge_lo = [slice(None)] * f.ndim
    edge_lo[axis] = 0
    okp[tuple(edge_hi)] = False
    okm[tuple(edge_lo)] = False
    grad = np.zeros_like(f)
    both = okp & okm
    only_p = okp & ~okm
    only_m = okm & ~okp
    grad[both] = (fp[both] - fm[both]) / (2 * spacing)
    grad[only_p] = (fp[only_p] - f[only_p]) / spacing
    grad[only_m] = (f[only_m] - fm[only_m]) / spacing
    grad[mask] = 0.0
    return grad


def strain_magnitude(fld: FlowField, grid: StructuredGrid) -> np.ndarray:
    """Frobenius norm of grad(u) + grad(u)^T per cell."""
    mask = grid.obstacle_mask
    dudx = _masked_gradient(fld.u[..., 0], mask, grid.dx, 0)
    dudy = _masked_gradient(fld.u[..., 0], mask, grid.dy, 1)
    dvdx = _masked_gradient(fld.u[..., 1], mask, grid.dx, 0)
    dvdy = _masked_gradient(fld.u[..., 1], mask, grid.dy, 1)
    s2 = (2 * dudx) ** 2 + (2 * dvdy) ** 2 + 2 * (dudy + dvdx) ** 2
    return np.sqrt(s2)


def solve_transport(
    fld: FlowField,
    grid: StructuredGrid,
    config: TransportConfig,
    extra_source: np.ndarray | None = None,
) -> np.ndarray:
    """Steady finite-volume solve for tau; returns (nx, ny), zero on masked
    cells.  Raises ConvergenceError when Picard stalls.

    extra_source, when given, is a per-cell volumetric source added to the
    production term (used by manufactured-solution checks).
    """
    nx, ny, dx, dy = grid.nx, grid.ny, grid.dx, grid.dy
    mask = grid.obstacle_mask
    fluid = ~mask
    idx = -np.ones((nx, ny), dtype=np.int64)
    idx[fluid] = np.arange(fluid.sum())
    n_unknown = fluid.sum()
    ux, uy = fld.u[..., 0], fld.u[..., 1]

    # Face velocities (arithmetic mean of adjacent cell centers).
    ufx = np.zeros((nx + 1, ny))  # x-faces, ufx[i] between cells i-1 and i
    ufx[1:nx] = 0.5 * (ux[:-1] + ux[1:])
    ufx[0] = ux[0]
    ufx[nx] = ux[-1]
    ufy = np.zeros((nx, ny + 1))
    ufy[:, 1:ny] = 0.5 * (uy[:, :-1] + uy[:, 1:])
    ufy[:, 0] = uy[:, 0]
    ufy[:, ny] = uy[:, -1]

    rows, cols, vals = [], [], []
    diag = np.zeros(n_unknown)
    rhs_bc = np.zeros(n_unknown)

    def add(i, j, di, dj, conv_flux, diff_coef, neumann_ok):
        """Couple fluid cell (i,j) to neighbor (i+di, j+dj).

        conv_flux: signed outgoing volumetric flux through the shared face.
        diff_coef: C_nu * A / dist for the face.
        neumann_ok: zero-gradient instead of Dirichlet when off-grid.
        """
        k = idx[i, j]
        ni, nj = i + di, j + dj
        inside = 0 <= ni < nx and 0 <= nj < ny
        neighbor_fluid = inside and fluid[ni, nj]
        if neighbor_fluid:
            kn = idx[ni, nj]
            # upwind convection
            if conv_flux >= 0:
                diag[k] += conv_flux
            else:
                rows.append(k)
                cols.append(kn)
                vals.append(conv_flux)
            diag[k] += diff_coef
            rows.append(k)
            cols.append(kn)
            vals.append(-diff_coef)
        elif inside:
            # obstacle face: tau = 0 wall at the face, half-cell distance
            if conv_flux >= 0:
                diag[k] += conv_flux
            diag[k] += 2 * diff_coef
        else:
            if neumann_ok:
                # outflow: convect with cell value, no diffusion
                diag[k] += conv_flux  # only applied when flux leaves the domain
            else:
                # Dirichlet value sits on the face, half-cell distance
                bc = config.tau_inflow
                if conv_flux >= 0:
                    diag[k] += conv_flux
                else:
                    rhs_bc[k] += -conv_flux * bc
                diag[k] += 2 * diff_coef
                rhs_bc[k] += 2 * diff_coef * bc

    for i in range(nx):
        for j in range(ny):
            if not fluid[i, j]:
                continue
            # west / east faces (area dy)
            add(i, j, -1, 0, -ufx[i, j] * dy, config.C_nu * dy / dx, False)
            add(i, j, 1, 0, ufx[i + 1, j] * dy, config.C_nu * dy / dx, i + 1 == nx)
            # south / north faces (area dx)
            add(i, j, 0, -1, -ufy[i, j] * dx, config.C_nu * dx / dy, False)
            add(i, j, 0, 1, ufy[i, j + 1] * dx, config.C_nu * dx / dy, False)

    rows.extend(range(n_unknown))
    cols.extend(range(n_unknown))
    vals.extend(diag)
    A_base = sp.csr_matrix(
        (np.array(vals), (np.array(rows), np.array(cols))), shape=(n_unknown, n_unknown)
    )

    l_m = config.mixing_length(fld.eta)[fluid]
    s2 = (fld.s[fluid]) ** 2
    cell_vol = dx * dy
    extra = extra_source[fluid] * cell_vol if extra_source is not None else 0.0

    tau = np.full(n_unknown, config.tau_init)
    residuals: list[float] = []
    for _ in range(config.max_iters):
        # lag the nonlinear sources: E linearized as (C_zeta * tau_old) * tau
        prod = config.C_g * l_m * np.sqrt(np.maximum(tau, 0.0)) * s2 * cell_vol + extra
        sink_diag = config.C_zeta * np.maximum(tau, 0.0) * cell_vol
        A = A_base + sp.diags(sink_diag)
        tau_new = spla.spsolve(A.tocsc(), rhs_bc + prod)
        tau_new = np.maximum(tau_new, 0.0)
        delta = float(np.max(np.abs(tau_new - tau))) if n_unknown else 0.0
        residuals.append(delta)
        tau = tau_new
        if delta < config.tol:
            out = np.zeros((nx, ny))
            out[fluid] = tau
            return out
    raise ConvergenceError(
        f"Picard iteration did not converge within {config.max_iters} iterations "
        f"(last delta {residuals[-1]:.3e})",
        residuals,
    )


def rotate_frame(fld: FlowField, grid: StructuredGrid, beta: float) -> FlowField:
    """Express the field in a frame rotated by beta: vectors rotate by -beta,
    scalar channels are untouched, frame_rotation accumulates."""
    R = rotation_matrix(-beta)
    return replace(
        fld,
        u=fld.u @ R.T,
        frame_rotation=fld.frame_rotation + beta,
        meta=dict(fld.meta),
    )


def cell_positions(grid: StructuredGrid, frame_rotation: float) -> np.ndarray:
    """Cell-center coordinates (nx, ny, 2) expressed in the rotated frame."""
    xc, yc = grid.cell_centers()
    pos = np.stack([xc, yc], axis=-1)
    if frame_rotation != 0.0:
        pos = pos @ rotation_matrix(-frame_rotation).T
    return pos


SNAPSHOT_COLUMNS = ("x", "y", "ux", "uy", "s", "eta", "b", "theta", "tau")


def save_snapshot(path: str | Path, fld: FlowField, grid: StructuredGrid) -> None:
    """CSV snapshot: '#'-prefixed header lines, then one row per cell."""
    pos = cell_positions(grid, fld.frame_rotation)
    tau = fld.tau if fld.tau is not None else np.zeros((grid.nx, grid.ny))
    buf = io.StringIO()
    buf.write(f"# nx={grid.nx} ny={grid.ny} dx={grid.dx!r} dy={grid.dy!r}\n")
    buf.write(f"# origin={grid.origin[0]!r},{grid.origin[1]!r}\n")
    buf.write(f"# frame_rotation={float(fld.frame_rotation)!r}\n")
    for key, value in sorted(fld.meta.items()):
        if hasattr(value, "item"):  # numpy scalar -> plain Python literal
            value = value.item()
        buf.write(f"# meta:{key}={value!r}\n")
    buf.write(",".join(SNAPSHOT_COLUMNS) + "\n")
    flat = np.column_stack(
        [
            pos[..., 0].ravel(),
            pos[..., 1].ravel(),
            fld.u[..., 0].ravel(),
            fld.u[..., 1].ravel(),
            fld.s.ravel(),
            fld.eta.ravel(),
            fld.b.ravel(),
            fld.theta.ravel(),
            tau.ravel(),
        ]
    )
    mask_col = grid.obstacle_mask.ravel().astype(np.float64)
    np.savetxt(buf, np.column_stack([flat, mask_col]), delimiter=",", fmt="%.17g")
    Path(path).write_text(buf.getvalue())


def load_snapshot(path: str | Path) -> tuple[FlowField, StructuredGrid]:
    lines = Path(path).read_text().splitlines()
    header: dict[str, str] = {}
    meta: dict[str, float] = {}
    body_start = 0
    for k, line in enumerate(lines):
        if line.startswith("#"):
            text = line[1:].strip()
            for part in text.split():
                if "=" in part:
                    key, _, value = part.partition("=")
                    if key.startswith("meta:"):
                        meta[key[5:]] = ast.literal_eval(value)
                    else:
                        header[key] = value
        else:
            body_start = k + 1  # skip the column-name row
            break
    nx, ny = int(header["nx"]), int(header["ny"])
    dx, dy = float(header["dx"]), float(header["dy"])
    ox, oy = (float(v) for v in header["origin"].split(","))
    frame_rotation = float(header["frame_rotation"])
    data = np.loadtxt(io.StringIO("\n".join(lines[body_start:])), delimiter=",")
    if data.shape[0] != nx * ny:
        raise ValueError(f"snapshot has {data.shape[0]} rows, expected {nx * ny}")
    mask = data[:, 9].reshape(nx, ny).astype(bool)
    grid = StructuredGrid(nx, ny, dx, dy, (ox, oy), mask)
    fld = FlowField(
        u=np.stack([data[:, 2].reshape(nx, ny), data[:, 3].reshape(nx, ny)], axis=-1),
        s=data[:, 4].reshape(nx, ny),
        eta=data[:, 5].reshape(nx, ny),
        b=data[:, 6].reshape(nx, ny),
        theta=data[:, 7].reshape(nx, ny),
        frame_rotation=frame_rotation,
        tau=data[:, 8].reshape(nx, ny),
        meta=meta,
    )
    return fld, grid
