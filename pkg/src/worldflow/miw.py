"""Finite ensembles of worlds and their Newtonian-form dynamics.

A finite family of K worlds sampled from the initial density, each carrying
velocity j/rho at its start point, recovers the continuum picture as K
grows: empirical densities converge to rho, outcome frequencies converge to
world probabilities at the Monte Carlo rate, and the second-order equation
of motion m qdd = -grad(V + Q) retraces the first-order guiding trajectories.
The quantum force here comes from the smooth continuum density; an
interparticle force law reconstructing Q from the ensemble itself is out of
scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._interp import interp_scalar, interp_vector, stencil_any
from .configspace import Grid, riemann_sum
from .hydrodynamics import _dilate, gradient, quantum_potential, velocity
from .measure import Region
from .propagator import FrameStore

__all__ = [
    "WorldEnsemble",
    "sample_worlds",
    "newtonian_trajectories",
    "build_force_field",
    "empirical_density",
    "miw_outcome_frequencies",
    "quantization_check",
    "QuantizationResult",
    "silverman_bandwidth",
]

STATUS_COMPLETED = "completed"
STATUS_ABORTED = "aborted-near-node"


@dataclass
class WorldEnsemble:
    """K worlds with positions and velocities at shared sample times."""

    grid: Grid
    times: np.ndarray
    positions: np.ndarray  # (n_times, K, dim)
    velocities: np.ndarray  # (n_times, K, dim)
    statuses: list[str]
    seed: int | None = None

    @property
    def n_worlds(self) -> int:
        return self.positions.shape[1]

    def positions_at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no ensemble sample at time {t}; nearest is {self.times[k]}")
        return self.positions[k]

    def dump_ndjson(self, path) -> None:
        import json

        with open(path, "w") as fh:
            header = {
                "record": "header",
                "schema_version": 1,
                "n_worlds": self.n_worlds,
                "seed": self.seed,
                "times": self.times.tolist(),
            }
            fh.write(json.dumps(header) + "\n")
            for i in range(self.n_worlds):
                row = {
                    "record": "world",
                    "world_id": i,
                    "status": self.statuses[i],
                    "positions": [
                        [None if math.isnan(x) else x for x in p]
                        for p in self.positions[:, i, :].tolist()
                    ],
                }
                fh.write(json.dumps(row) + "\n")


def sample_worlds(rho0: np.ndarray, grid: Grid, k: int, seed: int) -> np.ndarray:
    """Draw K world configurations from a density on the grid, reproducibly.

    1D uses the inverse of the piecewise-linear cumulative mass; 2D uses
    rejection against the multilinearly interpolated density.
    """
    if k < 2:
        raise ValueError(f"an ensemble needs K >= 2 worlds, got {k}")
    rho = np.asarray(rho0, dtype=float)
    if rho.min() < 0:
        raise ValueError("density must be nonnegative")
    total = riemann_sum(rho, grid)
    if total <= 0:
        raise ValueError("cannot sample from a density with zero total mass")
    rng = np.random.default_rng(seed)
    if grid.dim == 1:
        masses = rho * grid.cell_volume / total
        edges_cdf = np.concatenate([[0.0], np.cumsum(masses)])
        edges_cdf[-1] = 1.0
        lo, hi = grid.extents[0]
        edges = np.linspace(lo, hi, grid.npoints[0] + 1)
        u = rng.random(k)
        return np.interp(u, edges_cdf, edges)[:, None]
    rho_max = float(rho.max())
    out = np.empty((k, 2))
    filled = 0
    los = np.array([e[0] for e in grid.extents])
    his = np.array([e[1] for e in grid.extents])
    while filled < k:
        batch = max(4 * (k - filled), 1024)
        pts = los + (his - los) * rng.random((batch, 2))
        accept = rng.random(batch) * rho_max <= interp_scalar(grid, rho, pts)
        take = pts[accept][: k - filled]
        out[filled : filled + len(take)] = take
        filled += len(take)
    return out


class _ForceField:
    """Per-frame classical-plus-quantum force, interpolated like a velocity."""

    def __init__(self, store: FrameStore, eps_node: float | None = None):
        grid = store.grid
        self.grid = grid
        self.times = np.asarray(store.times)
        v_ext = store.params.potential.evaluate(grid)
        self.force = []
        self.mask = []
        for f in store:
            q, mask = quantum_potential(f, store.params, eps_node=eps_node)
            total = v_ext + q
            comps = np.zeros((grid.dim,) + grid.shape)
            for ax in range(grid.dim):
                # local stencil: Q is zeroed inside the mask, and a spectral
                # derivative would ring globally off that jump
                comps[ax] = -gradient(total, grid, ax, method="fd4")
                comps[ax][mask] = 0.0
            self.force.append(comps)
            # the fd4 stencil reaches 2 cells into the zeroed zone; flag that
            # ring as unusable rather than hand out contaminated forces
            self.mask.append(_dilate(mask, cells=2))

    def sample(self, positions: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        times = self.times
        if len(times) == 1:
            k0 = k1 = 0
            w = 0.0
        else:
            k1 = int(np.searchsorted(times, t, side="right"))
            k1 = min(max(k1, 1), len(times) - 1)
            k0 = k1 - 1
            w = float((t - times[k0]) / (times[k1] - times[k0]))
            w = min(max(w, 0.0), 1.0)
        f0 = interp_vector(self.grid, self.force[k0], positions)
        bad = stencil_any(self.grid, self.mask[k0], positions)
        if k1 != k0 and w > 0.0:
            f1 = interp_vector(self.grid, self.force[k1], positions)
            bad |= stencil_any(self.grid, self.mask[k1], positions)
            return (1.0 - w) * f0 + w * f1, bad
        return f0, bad


def build_force_field(store: FrameStore, eps_node: float | None = None) -> _ForceField:
    """Precompute the -grad(V + Q) tables once for reuse across many runs."""
    return _ForceField(store, eps_node=eps_node)


def newtonian_trajectories(
    store: FrameStore,
    q0: np.ndarray,
    dt_traj: float,
    eps_node: float | None = None,
    seed: int | None = None,
    force_field: _ForceField | None = None,
) -> WorldEnsemble:
    """Velocity-Verlet integration of m qdd = -grad(V + Q) for each world.

    Initial velocities are the guiding field j/rho at the start points, which
    is what makes the second-order form retrace the first-order flow.  Pass a
    prebuilt force_field to amortize the per-frame force tables across many
    independent runs on the same store.
    """
    if dt_traj <= 0:
        raise ValueError(f"dt_traj must be positive, got {dt_traj}")
    grid = store.grid
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    if not bool(np.all(grid.contains(q0))):
        raise ValueError("start points must lie inside the grid extents")
    masses = np.asarray(store.params.mass_for(grid))

    v_field, v_mask = velocity(store.field_at(0), store.params, eps_node=eps_node)
    bad0 = stencil_any(grid, v_mask, q0)
    if bad0.any():
        raise ValueError(f"{int(bad0.sum())} start point(s) touch masked near-node cells")
    vel0 = interp_vector(grid, v_field, q0)

    force = force_field if force_field is not None else _ForceField(store, eps_node=eps_node)
    times = list(store.times)
    n_t = len(times)
    k = len(q0)
    positions = np.full((n_t, k, grid.dim), np.nan)
    velocities = np.full((n_t, k, grid.dim), np.nan)
    positions[0] = q0
    velocities[0] = vel0
    statuses = [STATUS_COMPLETED] * k
    cur_q = q0.copy()
    cur_v = vel0.copy()
    active = np.ones(k, dtype=bool)
    f_cur, _ = force.sample(cur_q, times[0])
    for seg in range(1, n_t):
        span = times[seg] - times[seg - 1]
        n_sub = max(1, round(span / dt_traj))
        h = span / n_sub
        for s in range(n_sub):
            t = times[seg - 1] + s * h
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            q = cur_q[idx]
            v = cur_v[idx]
            f0 = f_cur[idx]
            q_new = q + h * v + 0.5 * h**2 * f0 / masses
            f1, bad = force.sample(q_new, t + h)
            v_new = v + 0.5 * h * (f0 + f1) / masses
            good = ~bad
            cur_q[idx[good]] = q_new[good]
            cur_v[idx[good]] = v_new[good]
            f_cur[idx[good]] = f1[good]
            if bad.any():
                for i in idx[bad]:
                    statuses[i] = STATUS_ABORTED
                active[idx[bad]] = False
        inside = grid.contains(cur_q[active]) if active.any() else np.array([], dtype=bool)
        if active.any() and not bool(np.all(inside)):
            left = np.flatnonzero(active)[~inside]
            raise ValueError(
                f"world {left[0]} left the grid extents near t={times[seg]}; "
                "enlarge the box or shorten the run"
            )
        positions[seg, active] = cur_q[active]
        velocities[seg, active] = cur_v[active]
    return WorldEnsemble(
        grid=grid,
        times=np.asarray(times),
        positions=positions,
        velocities=velocities,
        statuses=statuses,
        seed=seed,
    )


def silverman_bandwidth(samples: np.ndarray, axis_count: int) -> np.ndarray:
    """Per-axis rule-of-thumb kernel width for a (K, dim) sample set."""
    k = samples.shape[0]
    out = np.empty(axis_count)
    for ax in range(axis_count):
        x = samples[:, ax]
        sd = float(np.std(x))
        q75, q25 = np.percentile(x, [75, 25])
        spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
        if spread <= 0:
            spread = max(sd, 1e-12)
        out[ax] = 0.9 * spread * k ** (-1.0 / (4 + axis_count))
    return out


def empirical_density(
    samples: np.ndarray,
    grid: Grid,
    bandwidth: float | np.ndarray | None = None,
) -> np.ndarray:
    """Gaussian kernel density of world positions, normalized on the grid."""
    pts = np.atleast_2d(np.asarray(samples, dtype=float))
    k, dim = pts.shape
    if dim != grid.dim:
        raise ValueError(f"samples have {dim} coordinates for a {grid.dim}D grid")
    if bandwidth is None:
        h = silverman_bandwidth(pts, dim)
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (dim,)).copy()
    if np.any(h <= 0):
        raise ValueError(f"bandwidth must be positive, got {h}")
    axes = [grid.axis_coords(ax) for ax in range(dim)]
    out = np.zeros(grid.shape)
    chunk = max(1, int(2e6 // max(np.prod(grid.shape), 1)))
    for start in range(0, k, chunk):
        block = pts[start : start + chunk]
        if dim == 1:
            z = (axes[0][None, :] - block[:, 0:1]) / h[0]
            out += np.sum(np.exp(-0.5 * z**2), axis=0) / (h[0] * math.sqrt(2 * math.pi))
        else:
            zx = (axes[0][None, :] - block[:, 0:1]) / h[0]
            zy = (axes[1][None, :] - block[:, 1:2]) / h[1]
            gx = np.exp(-0.5 * zx**2) / (h[0] * math.sqrt(2 * math.pi))
            gy = np.exp(-0.5 * zy**2) / (h[1] * math.sqrt(2 * math.pi))
            out += np.einsum("ki,kj->ij", gx, gy)
    out /= k
    mass = riemann_sum(out, grid)
    if mass <= 0:
        raise ValueError("empirical density has zero mass on the grid")
    return out / mass


def miw_outcome_frequencies(
    positions: np.ndarray, regions: dict[str, Region]
) -> dict[str, float]:
    """Fraction of worlds inside each region (exact point membership)."""
    pts = np.atleast_2d(np.asarray(positions, dtype=float))
    k = len(pts)
    return {name: float(np.sum(region.contains_points(pts))) / k for name, region in regions.items()}


@dataclass(frozen=True)
class QuantizationResult:
    """Circulation of momentum around a closed loop in action-quantum units."""

    circulation: float
    n: int
    residual: float
    loop_points: np.ndarray


def quantization_check(
    psi_field,
    params,
    loop: dict | np.ndarray,
    eps_node: float | None = None,
) -> QuantizationResult:
    """Integrate m v . dl around a closed loop and compare to n * 2 pi hbar.

    The loop is a circle mapping {center, radius, samples, winds} or an explicit
    closed polyline (M, dim).  Velocities are sampled at segment midpoints;
    touching a masked near-node cell is an error (choose a loop away from
    the node core).
    """
    grid = psi_field.grid
    v, mask = velocity(psi_field, params, eps_node=eps_node)
    masses = np.asarray(params.mass_for(grid))
    if isinstance(loop, dict):
        if grid.dim != 2:
            raise ValueError("circle loops require a 2D grid")
        center = np.asarray(loop.get("center", (0.0, 0.0)), dtype=float)
        radius = float(loop["radius"])
        samples = int(loop.get("samples", 720))
        winds = int(loop.get("winds", 1))
        theta = np.linspace(0.0, 2 * np.pi * winds, samples * winds, endpoint=False)
        pts = center[None, :] + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        pts = np.atleast_2d(np.asarray(loop, dtype=float))
        if len(pts) < 3:
            raise ValueError("a polyline loop needs at least 3 points")
    nxt = np.roll(pts, -1, axis=0)
    mids = 0.5 * (pts + nxt)
    dl = nxt - pts
    if stencil_any(grid, mask, mids).any():
        raise ValueError("loop passes through masked near-node cells; move it off the node core")
    v_mid = interp_vector(grid, v, mids)
    circ = float(np.sum(v_mid * dl * masses[None, :]))
    quantum = 2.0 * np.pi * params.hbar
    ratio = circ / quantum
    n = int(round(ratio))
    return QuantizationResult(
        circulation=circ, n=n, residual=abs(ratio - n), loop_points=pts
    )
