"""Hydrodynamic fields of a wave field: density, current, velocity, phase,
and the quantum potential.

The guiding velocity is the ratio of probability current to density.  At
near-nodes the ratio is undefined; such cells are masked (never regularized)
and every consumer of the velocity field receives the mask alongside it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .configspace import Grid, PhysicsParams, WaveField, riemann_sum
from .propagator import FrameStore

__all__ = [
    "FlowFrame",
    "PolarFields",
    "density",
    "current",
    "velocity",
    "flow_frame",
    "polar_fields",
    "quantum_potential",
    "continuity_residual",
    "gradient",
    "laplacian",
    "divergence",
]

# Cells with rho below this fraction of the peak are treated as nodes.
NODE_EPS_FRACTION = 1e-12


def _axis_reshape(grid: Grid, axis: int, arr: np.ndarray) -> np.ndarray:
    shape = [1] * grid.dim
    shape[axis] = grid.npoints[axis]
    return arr.reshape(shape)


def gradient(values: np.ndarray, grid: Grid, axis: int, method: str = "spectral") -> np.ndarray:
    """d/dq_axis of a sampled field on the periodic box."""
    if method == "spectral":
        k = _axis_reshape(grid, axis, grid.wavenumbers(axis))
        out = np.fft.ifftn(1j * k * np.fft.fftn(values))
        return out if np.iscomplexobj(values) else out.real
    if method == "fd4":
        h = grid.spacing[axis]
        r = lambda s: np.roll(values, -s, axis=axis)
        return (-r(2) + 8 * r(1) - 8 * r(-1) + r(-2)) / (12.0 * h)
    raise ValueError(f"unknown derivative method {method!r}")


def laplacian(values: np.ndarray, grid: Grid, axis: int, method: str = "spectral") -> np.ndarray:
    """Second derivative along one axis."""
    if method == "spectral":
        k = _axis_reshape(grid, axis, grid.wavenumbers(axis))
        out = np.fft.ifftn(-(k**2) * np.fft.fftn(values))
        return out if np.iscomplexobj(values) else out.real
    if method == "fd4":
        h = grid.spacing[axis]
        r = lambda s: np.roll(values, -s, axis=axis)
        return (-r(2) + 16 * r(1) - 30 * values + 16 * r(-1) - r(-2)) / (12.0 * h**2)
    raise ValueError(f"unknown derivative method {method!r}")


def divergence(components: np.ndarray, grid: Grid, method: str = "spectral") -> np.ndarray:
    """Divergence of a (dim, *shape) vector field."""
    out = np.zeros(grid.shape)
    for ax in range(grid.dim):
        out += gradient(components[ax], grid, ax, method=method)
    return out


def density(psi: WaveField) -> np.ndarray:
    return np.abs(psi.amplitudes) ** 2


def current(psi: WaveField, params: PhysicsParams, method: str = "spectral") -> np.ndarray:
    """Probability current (hbar/m) Im(conj(psi) d psi), one component per axis."""
    grid = psi.grid
    masses = params.mass_for(grid)
    amp = psi.amplitudes
    comps = np.zeros((grid.dim,) + grid.shape)
    for ax in range(grid.dim):
        d = gradient(amp, grid, ax, method=method)
        comps[ax] = (params.hbar / masses[ax]) * np.imag(np.conj(amp) * d)
    return comps


def node_mask(rho: np.ndarray, eps_node: float | None = None) -> np.ndarray:
    eps = eps_node if eps_node is not None else NODE_EPS_FRACTION * float(rho.max())
    return rho < eps


def velocity(
    psi: WaveField,
    params: PhysicsParams,
    eps_node: float | None = None,
    method: str = "spectral",
) -> tuple[np.ndarray, np.ndarray]:
    """Guiding velocity j/rho with the node mask; masked cells carry 0."""
    rho = density(psi)
    mask = node_mask(rho, eps_node)
    j = current(psi, params, method=method)
    safe = np.where(mask, 1.0, rho)
    v = np.where(mask[None, ...], 0.0, j / safe[None, ...])
    return v, mask


@dataclass(frozen=True)
class FlowFrame:
    """Density, current, velocity, and node mask at one instant."""

    grid: Grid
    time: float
    rho: np.ndarray
    current: np.ndarray
    velocity: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.rho.min() < 0:
            raise ValueError("density must be nonnegative")
        off = ~self.mask
        resid = np.abs(self.current[:, off] - self.rho[off] * self.velocity[:, off])
        scale = max(float(np.abs(self.current).max()), 1e-300)
        if resid.size and float(resid.max()) > 1e-10 * scale:
            raise ValueError("current and rho*velocity disagree off-node beyond 1e-10")

    def to_csv(self, path) -> None:
        """Plot-ready columns: coordinates, rho, velocity, current, mask."""
        grid = self.grid
        meshes = grid.meshes()
        header = [f"q{ax}" for ax in range(grid.dim)]
        header += ["rho"]
        header += [f"v{ax}" for ax in range(grid.dim)]
        header += [f"j{ax}" for ax in range(grid.dim)]
        header += ["node_mask"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            flat_idx = np.ndindex(grid.shape)
            for ix in flat_idx:
                row = [meshes[ax][ix] for ax in range(grid.dim)]
                row.append(self.rho[ix])
                row += [self.velocity[(ax,) + ix] for ax in range(grid.dim)]
                row += [self.current[(ax,) + ix] for ax in range(grid.dim)]
                row.append(int(self.mask[ix]))
                writer.writerow(row)


def flow_frame(psi: WaveField, params: PhysicsParams, eps_node: float | None = None) -> FlowFrame:
    rho = density(psi)
    j = current(psi, params)
    mask = node_mask(rho, eps_node)
    safe = np.where(mask, 1.0, rho)
    v = np.where(mask[None, ...], 0.0, j / safe[None, ...])
    return FlowFrame(grid=psi.grid, time=psi.time, rho=rho, current=j, velocity=v, mask=mask)


@dataclass(frozen=True)
class PolarFields:
    """Amplitude R, unwrapped phase S, and where the unwrap is untrustworthy."""

    amplitude: np.ndarray
    phase: np.ndarray
    mask: np.ndarray
    mismatch: np.ndarray


def polar_fields(
    psi: WaveField,
    params: PhysicsParams,
    eps_node: float | None = None,
    tol: float = 1e-6,
) -> PolarFields:
    """Polar decomposition psi = R exp(iS) with a lattice phase unwrap.

    The unwrap is anchored at the first lattice point and extended along axis
    0 then axis 1.  Across nodal lines the phase jump is genuinely ambiguous;
    points where (hbar/m) grad S fails to reproduce the guiding velocity are
    reported in `mismatch` rather than papered over.
    """
    grid = psi.grid
    rho = density(psi)
    mask = node_mask(rho, eps_node)
    raw = np.angle(psi.amplitudes)
    if grid.dim == 1:
        phase = np.unwrap(raw)
    else:
        first_col = np.unwrap(raw[:, 0])
        rows = np.unwrap(raw, axis=1)
        phase = rows + (first_col - raw[:, 0])[:, None]
    v, _ = velocity(psi, params, eps_node=eps_node)
    masses = params.mass_for(grid)
    mismatch = np.zeros(grid.shape, dtype=bool)
    vscale = max(float(np.abs(v).max()), 1.0)
    for ax in range(grid.dim):
        vs = (params.hbar / masses[ax]) * gradient(phase, grid, ax, method="fd4")
        bad = np.abs(vs - v[ax]) > tol * vscale
        mismatch |= bad & ~mask
    return PolarFields(amplitude=np.sqrt(rho), phase=phase, mask=mask, mismatch=mismatch)


def _dilate(mask: np.ndarray, cells: int = 2) -> np.ndarray:
    out = mask.copy()
    for ax in range(mask.ndim):
        for s in range(1, cells + 1):
            out |= np.roll(mask, s, axis=ax) | np.roll(mask, -s, axis=ax)
    return out


def quantum_potential(
    psi: WaveField,
    params: PhysicsParams,
    eps_node: float | None = None,
    method: str = "auto",
) -> tuple[np.ndarray, np.ndarray]:
    """Quantum potential -(hbar^2/2m) (d^2 sqrt(rho)) / sqrt(rho), masked at nodes.

    method 'auto' differentiates spectrally and swaps in the 4th-order
    finite-difference stencil for points adjacent to the node mask, where
    spectral ringing from the masked region would otherwise leak in.
    """
    grid = psi.grid
    masses = params.mass_for(grid)
    rho = density(psi)
    mask = node_mask(rho, eps_node)
    r = np.sqrt(rho)
    safe = np.where(mask, 1.0, r)
    q = np.zeros(grid.shape)
    near_mask = _dilate(mask) & ~mask if method == "auto" else None
    for ax in range(grid.dim):
        base = "spectral" if method in ("auto", "spectral") else "fd4"
        d2 = laplacian(r, grid, ax, method=base)
        if method == "auto" and near_mask.any():
            d2_fd = laplacian(r, grid, ax, method="fd4")
            d2 = np.where(near_mask, d2_fd, d2)
        q += -(params.hbar**2 / (2.0 * masses[ax])) * d2 / safe
    return np.where(mask, 0.0, q), mask


def continuity_residual(store: FrameStore, index: int, eps_node: float | None = None) -> tuple[np.ndarray, float]:
    """Residual of d rho/dt + div j at an interior frame, and its L2 norm.

    The time derivative is the centered difference of the neighboring stored
    frames, so the residual converges at 2nd order in the frame spacing.
    """
    if not 0 < index < len(store) - 1:
        raise ValueError(f"continuity residual needs an interior frame, got {index} of {len(store)}")
    grid = store.grid
    t_prev, t_next = store.times[index - 1], store.times[index + 1]
    rho_prev = density(store.field_at(index - 1))
    rho_next = density(store.field_at(index + 1))
    drho_dt = (rho_next - rho_prev) / (t_next - t_prev)
    j = current(store.field_at(index), store.params)
    resid = drho_dt + divergence(j, grid)
    l2 = math.sqrt(riemann_sum(resid**2, grid))
    return resid, l2
