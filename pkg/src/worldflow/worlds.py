"""World trajectories: integral curves of the guiding velocity field.

A trajectory bundle transports a finite family of configurations along the
flow of one FrameStore.  Velocities are sampled multilinearly in space and
linearly in time between stored frames; integration is classic RK4.  A path
that would enter a masked near-node cell is aborted and reported, never
silently pushed through.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._interp import deposit, interp_scalar, interp_vector, stencil_any
from .configspace import Grid, riemann_sum
from .hydrodynamics import NODE_EPS_FRACTION, _dilate, node_mask, velocity
from .propagator import FrameStore

__all__ = [
    "Trajectory",
    "TrajectoryBundle",
    "VelocityField",
    "integrate_trajectory",
    "integrate_bundle",
    "trajectory_function",
    "check_no_crossing",
    "CrossingReport",
    "pushforward_density",
    "l1_distance",
    "seed_linspace",
    "seed_support_lattice",
]

STATUS_COMPLETED = "completed"
STATUS_ABORTED = "aborted-near-node"


class VelocityField:
    """Per-frame guiding velocities of a FrameStore, ready for interpolation."""

    def __init__(self, store: FrameStore, eps_node: float | None = None):
        self.grid = store.grid
        self.times = np.asarray(store.times)
        self.vel = []
        self.mask = []
        for f in store:
            v, m = velocity(f, store.params, eps_node=eps_node)
            self.vel.append(v)
            self.mask.append(m)

    def sample(self, positions: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Velocity at each position and a flag for masked-stencil contact."""
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
        v0 = interp_vector(self.grid, self.vel[k0], positions)
        bad = stencil_any(self.grid, self.mask[k0], positions)
        if k1 != k0 and w > 0.0:
            v1 = interp_vector(self.grid, self.vel[k1], positions)
            bad |= stencil_any(self.grid, self.mask[k1], positions)
            return (1.0 - w) * v0 + w * v1, bad
        return v0, bad


@dataclass(frozen=True)
class Trajectory:
    """Sampled integral curve; positions are NaN after an abort."""

    times: np.ndarray
    positions: np.ndarray
    status: str

    @property
    def n_valid(self) -> int:
        return int(np.sum(~np.isnan(self.positions[:, 0])))


@dataclass
class TrajectoryBundle:
    """Bundle of trajectories sharing sample times; axis order (time, world, coord)."""

    grid: Grid
    times: np.ndarray
    positions: np.ndarray
    statuses: list[str]
    seeding: str = "explicit"

    @property
    def n_worlds(self) -> int:
        return self.positions.shape[1]

    @property
    def initial(self) -> np.ndarray:
        return self.positions[0]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(times=self.times, positions=self.positions[:, i, :], status=self.statuses[i])

    def positions_at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no bundle sample at time {t}; nearest is {self.times[k]}")
        return self.positions[k]

    def dump_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            header = {
                "record": "header",
                "schema_version": 1,
                "n_worlds": self.n_worlds,
                "seeding": self.seeding,
                "times": self.times.tolist(),
            }
            fh.write(json.dumps(header) + "\n")
            for i in range(self.n_worlds):
                pos = self.positions[:, i, :]
                row = {
                    "record": "trajectory",
                    "world_id": i,
                    "status": self.statuses[i],
                    "positions": [[None if math.isnan(x) else x for x in p] for p in pos.tolist()],
                }
                fh.write(json.dumps(row) + "\n")

    def dump_csv(self, path) -> None:
        """Tidy rows: time, world_id, one column per coordinate."""
        dim = self.positions.shape[2]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "world_id"] + [f"q{ax}" for ax in range(dim)] + ["status"])
            for k, t in enumerate(self.times):
                for i in range(self.n_worlds):
                    p = self.positions[k, i]
                    if np.isnan(p[0]):
                        continue
                    writer.writerow([t, i] + list(p) + [self.statuses[i]])


def _rk4_segment(flow, positions, active, t_start, t_end, dt_traj):
    """Advance active rows from t_start to t_end; returns newly-aborted mask."""
    span = t_end - t_start
    n_sub = max(1, round(span / dt_traj))
    h = span / n_sub
    aborted = np.zeros(len(positions), dtype=bool)
    for s in range(n_sub):
        t = t_start + s * h
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        q = positions[idx]
        k1, b1 = flow.sample(q, t)
        k2, b2 = flow.sample(q + 0.5 * h * k1, t + 0.5 * h)
        k3, b3 = flow.sample(q + 0.5 * h * k2, t + 0.5 * h)
        k4, b4 = flow.sample(q + h * k3, t + h)
        bad = b1 | b2 | b3 | b4
        step = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        good = ~bad
        positions[idx[good]] = q[good] + step[good]
        if bad.any():
            aborted[idx[bad]] = True
            active[idx[bad]] = False
    return aborted


def integrate_bundle(
    store: FrameStore,
    q0: np.ndarray,
    dt_traj: float,
    t0: float | None = None,
    t1: float | None = None,
    eps_node: float | None = None,
    seeding: str = "explicit",
    threads: int = 1,
) -> TrajectoryBundle:
    """Integrate every start point along the guiding flow of the store.

    Positions are recorded at the stored frame times in [t0, t1].  Start
    points on a masked cell are rejected; a path leaving the box is an error
    (the scenario domain was too small for its own dynamics).
    """
    if dt_traj <= 0:
        raise ValueError(f"dt_traj must be positive, got {dt_traj}")
    grid = store.grid
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    if q0.shape[1] != grid.dim:
        raise ValueError(f"start points have {q0.shape[1]} coordinates for a {grid.dim}D grid")
    if not bool(np.all(grid.contains(q0))):
        raise ValueError("start points must lie inside the grid extents")

    flow = VelocityField(store, eps_node=eps_node)
    t0 = store.t0 if t0 is None else float(t0)
    t1 = store.t1 if t1 is None else float(t1)
    sample_times = [t for t in store.times if t0 - 1e-12 <= t <= t1 + 1e-12]
    if not sample_times or abs(sample_times[0] - t0) > 1e-9:
        raise ValueError(f"t0 {t0} is not a stored frame time")

    _, bad0 = flow.sample(q0, t0)
    if bad0.any():
        raise ValueError(
            f"{int(bad0.sum())} start point(s) touch masked near-node cells; "
            "move them or lower eps_node"
        )

    if threads > 1 and len(q0) > 1:
        chunks = np.array_split(np.arange(len(q0)), threads)
        results = [None] * len(chunks)
        def run(ci):
            part = integrate_bundle(
                store, q0[chunks[ci]], dt_traj, t0=t0, t1=t1,
                eps_node=eps_node, seeding=seeding, threads=1,
            )
            results[ci] = part
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(len(chunks))))
        times = results[0].times
        positions = np.concatenate([r.positions for r in results], axis=1)
        statuses = [s for r in results for s in r.statuses]
        return TrajectoryBundle(grid=grid, times=times, positions=positions,
                                statuses=statuses, seeding=seeding)

    n_t = len(sample_times)
    k = len(q0)
    positions = np.full((n_t, k, grid.dim), np.nan)
    positions[0] = q0
    cur = q0.copy()
    active = np.ones(k, dtype=bool)
    statuses = [STATUS_COMPLETED] * k
    for seg in range(1, n_t):
        aborted = _rk4_segment(flow, cur, active, sample_times[seg - 1], sample_times[seg], dt_traj)
        for i in np.flatnonzero(aborted):
            statuses[i] = STATUS_ABORTED
        inside = grid.contains(cur[active]) if active.any() else np.array([], dtype=bool)
        if active.any() and not bool(np.all(inside)):
            left = np.flatnonzero(active)[~inside]
            raise ValueError(
                f"trajectory {left[0]} left the grid extents near t={sample_times[seg]}; "
                "enlarge the box or shorten the run"
            )
        positions[seg, active] = cur[active]
    return TrajectoryBundle(
        grid=grid,
        times=np.asarray(sample_times),
        positions=positions,
        statuses=statuses,
        seeding=seeding,
    )


def integrate_trajectory(
    store: FrameStore,
    q0,
    dt_traj: float,
    t0: float | None = None,
    t1: float | None = None,
    eps_node: float | None = None,
) -> Trajectory:
    bundle = integrate_bundle(store, np.atleast_2d(q0), dt_traj, t0=t0, t1=t1, eps_node=eps_node)
    return bundle.trajectory(0)


def trajectory_function(
    store: FrameStore,
    lattice: np.ndarray,
    dt_traj: float,
    eps_node: float | None = None,
    threads: int = 1,
) -> TrajectoryBundle:
    """The flow map sampled on a start lattice; identity at the first frame."""
    return integrate_bundle(
        store, lattice, dt_traj, eps_node=eps_node, seeding="lattice", threads=threads
    )


@dataclass(frozen=True)
class CrossingReport:
    """Detected order/collision violations; empty means non-crossing held."""

    violations: list
    n_times: int
    n_worlds: int

    @property
    def count(self) -> int:
        return len(self.violations)


def check_no_crossing(bundle: TrajectoryBundle, collision_radius: float | None = None) -> CrossingReport:
    """Verify the bundle never self-intersects at equal times.

    1D: the initial spatial order must be preserved at every sample time.
    2D: every pairwise distance must stay above the collision radius.
    Violations are collected and reported, not raised: a failed check is a
    result about the flow, not a crash.
    """
    dim = bundle.positions.shape[2]
    violations = []
    if dim == 1:
        order = np.argsort(bundle.initial[:, 0], kind="stable")
        for k, t in enumerate(bundle.times):
            x = bundle.positions[k, order, 0]
            ok = ~np.isnan(x)
            xs = x[ok]
            ids = order[ok]
            bad = np.flatnonzero(np.diff(xs) <= 0)
            for b in bad:
                violations.append((float(t), int(ids[b]), int(ids[b + 1])))
    else:
        radius = collision_radius if collision_radius is not None else 1e-9 * min(bundle.grid.lengths)
        for k, t in enumerate(bundle.times):
            p = bundle.positions[k]
            ok = ~np.isnan(p[:, 0])
            pts = p[ok]
            ids = np.flatnonzero(ok)
            if len(pts) < 2:
                continue
            diff = pts[:, None, :] - pts[None, :, :]
            dist = np.sqrt(np.sum(diff**2, axis=2))
            iu = np.triu_indices(len(pts), k=1)
            close = np.flatnonzero(dist[iu] < radius)
            for c in close:
                violations.append((float(t), int(ids[iu[0][c]]), int(ids[iu[1][c]])))
    return CrossingReport(violations=violations, n_times=len(bundle.times), n_worlds=bundle.n_worlds)


def seed_linspace(a: float, b: float, n: int) -> np.ndarray:
    """n start points spanning [a, b] inclusively (1D)."""
    return np.linspace(a, b, n)[:, None]


def seed_support_lattice(
    rho0: np.ndarray,
    grid: Grid,
    eps_node: float | None = None,
    margin_factor: float = 10.0,
    oversample: int = 1,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Start lattice over the non-node support: points, density values, and
    the per-seed volume.

    Only points margin_factor above the node floor are seeded, with one cell
    of clearance from the mask: boundary seeds ride along the moving mask
    contour, and they need room against the stale per-frame stencil as it
    sweeps outward.  The discarded mass sits at the node floor, so the
    pushforward loses nothing measurable.

    oversample refines the seed lattice below the grid spacing.  A transport
    that stretches the seed lattice beyond one target cell leaves comb
    artifacts in the deposit; seeding finer than the worst stretch factor
    keeps the deposited density smooth.
    """
    if oversample < 1:
        raise ValueError(f"oversample must be >= 1, got {oversample}")
    mask = node_mask(rho0, eps_node)
    eps = NODE_EPS_FRACTION if eps_node is None else eps_node
    floor = margin_factor * eps * float(np.max(rho0))
    clearance = _dilate(mask, cells=1)
    if oversample == 1:
        keep = (rho0 >= floor) & ~clearance
        meshes = grid.meshes()
        pts = np.stack([m[keep] for m in meshes], axis=1)
        return pts, rho0[keep], grid.cell_volume
    axes = [
        lo + np.arange(n * oversample) * ((hi - lo) / (n * oversample))
        for (lo, hi), n in zip(grid.extents, grid.npoints)
    ]
    meshes = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in meshes], axis=1)
    vals = interp_scalar(grid, rho0, pts)
    keep = (vals >= floor) & ~stencil_any(grid, clearance, pts)
    return pts[keep], vals[keep], grid.cell_volume / oversample**grid.dim


def pushforward_density(
    bundle: TrajectoryBundle,
    rho0_values: np.ndarray,
    seed_volume: float,
    t: float,
    grid: Grid | None = None,
) -> np.ndarray:
    """Transport the initial density along the bundle and deposit it at time t.

    Each seed carries the substantial weight rho0 * seed cell volume; the
    deposit uses the multilinear kernel and is divided by the target cell
    volume, so total substantial amount is conserved exactly.
    """
    grid = bundle.grid if grid is None else grid
    pos = bundle.positions_at(t)
    ok = ~np.isnan(pos[:, 0])
    if not bool(np.all(ok)):
        raise ValueError(
            f"{int((~ok).sum())} trajectories aborted before t={t}; "
            "pushforward needs the full bundle alive"
        )
    weights = np.asarray(rho0_values, dtype=float) * seed_volume
    return deposit(grid, pos, weights) / grid.cell_volume


def l1_distance(rho_a: np.ndarray, rho_b: np.ndarray, grid: Grid) -> float:
    """Integrated absolute difference of two densities on one grid."""
    return riemann_sum(np.abs(rho_a - rho_b), grid)
