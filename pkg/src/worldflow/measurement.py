"""Impulsive pointer measurements of a coarse position observable.

The observable partitions the system axis into bands, each with an
eigenvalue.  Coupling the band label to the momentum of a pointer coordinate
for a short window displaces a ready pointer packet by (coupling * eigenvalue
* window) per band, entangling outcome with pointer position.  Outcome
statistics are then plain substantial measures over pointer regions, and a
branch evolved on its own tracks the trajectories of the full field wherever
that branch dominates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._interp import interp_scalar
from .configspace import Grid, WaveField, make_grid, make_state, norm
from .hydrodynamics import density
from .measure import Region, world_probability
from .propagator import FrameStore, evolve
from .worlds import integrate_trajectory

__all__ = [
    "MeasurementSetup",
    "BranchReport",
    "CollapseReport",
    "ready_pointer",
    "system_grid",
    "born_probability",
    "impulsive_measure",
    "branch_decompose",
    "outcome_probability_via_worlds",
    "subjective_collapse_compare",
]

# Pointer overlap above this is flagged as an unreliable readout.
OVERLAP_FLAG_LEVEL = 1e-2


@dataclass(frozen=True)
class MeasurementSetup:
    """Geometry and coupling of one pointer measurement.

    outcomes: tuple of (eigenvalue, (lo, hi)) bands; the bands must be
    disjoint and cover the whole system axis.  The guard
    coupling * window * (smallest eigenvalue gap) >= separation_factor * pointer_sigma
    keeps the shifted pointers quasi-orthogonal; constructing a deliberately
    overlapping setup (negative controls) requires enforce_separation=False.
    """

    grid: Grid
    outcomes: tuple[tuple[float, tuple[float, float]], ...]
    pointer_sigma: float
    coupling: float
    window: float
    system_axis: int = 0
    pointer_axis: int = 1
    separation_factor: float = 8.0
    enforce_separation: bool = True

    def __post_init__(self):
        if self.grid.dim != 2:
            raise ValueError("measurement needs a 2D grid: system axis + pointer axis")
        if {self.system_axis, self.pointer_axis} != {0, 1}:
            raise ValueError("system_axis and pointer_axis must be 0 and 1 in some order")
        if self.pointer_sigma <= 0:
            raise ValueError("pointer_sigma must be positive")
        if self.window <= 0:
            raise ValueError("window must be positive")
        outcomes = tuple((float(a), (float(lo), float(hi))) for a, (lo, hi) in self.outcomes)
        if len(outcomes) < 2:
            raise ValueError("a measurement needs at least two outcomes")
        values = [a for a, _ in outcomes]
        if len(set(values)) != len(values):
            raise ValueError(f"eigenvalues must be distinct, got {values}")
        bands = sorted((band for _, band in outcomes))
        slo, shi = self.grid.extents[self.system_axis]
        if abs(bands[0][0] - slo) > 1e-9 or abs(bands[-1][1] - shi) > 1e-9:
            raise ValueError("outcome bands must cover the whole system axis")
        for (_, hi_prev), (lo_next, _) in zip(bands, bands[1:]):
            if abs(hi_prev - lo_next) > 1e-9:
                raise ValueError("outcome bands must be disjoint and adjacent (no gaps)")
        object.__setattr__(self, "outcomes", outcomes)

        if self.enforce_separation:
            gap = self.min_eigenvalue_gap()
            needed = self.separation_factor * self.pointer_sigma
            if self.coupling * self.window * gap < needed - 1e-12:
                raise ValueError(
                    f"pointer displacement gap {self.coupling * self.window * gap:.6g} is below "
                    f"separation_factor * pointer_sigma = {needed:.6g}; increase the coupling "
                    "or pass enforce_separation=False for a deliberate overlap study"
                )
        plo, phi = self.grid.extents[self.pointer_axis]
        for c in self.pointer_centers().values():
            if c - 4 * self.pointer_sigma < plo or c + 4 * self.pointer_sigma > phi:
                raise ValueError(
                    f"shifted pointer at {c:.6g} leaves the pointer axis with less than a "
                    "4-sigma margin; widen the pointer axis"
                )

    def min_eigenvalue_gap(self) -> float:
        values = sorted(a for a, _ in self.outcomes)
        return min(b - a for a, b in zip(values, values[1:]))

    def pointer_centers(self) -> dict[float, float]:
        return {a: self.coupling * a * self.window for a, _ in self.outcomes}

    def pointer_regions(self) -> dict[float, tuple[float, float]]:
        """Readout interval per outcome: half the smallest center gap each way."""
        centers = self.pointer_centers()
        cs = sorted(centers.values())
        if len(cs) > 1:
            w = 0.5 * min(b - a for a, b in zip(cs, cs[1:]))
        else:
            w = 0.5 * self.separation_factor * self.pointer_sigma
        plo, phi = self.grid.extents[self.pointer_axis]
        return {a: (max(c - w, plo), min(c + w, phi)) for a, c in centers.items()}

    def band_mask(self, value: float) -> np.ndarray:
        """System-band indicator on the 2D grid for one eigenvalue."""
        for a, (lo, hi) in self.outcomes:
            if a == value:
                coords = self.grid.axis_coords(self.system_axis)
                band = (coords >= lo) & (coords < hi)
                return _along_axis(band, self.grid, self.system_axis)
        raise KeyError(f"no outcome with eigenvalue {value}")

    def eigenvalue_field(self) -> np.ndarray:
        """A(x): the eigenvalue at each system cell, broadcast to the 2D grid."""
        coords = self.grid.axis_coords(self.system_axis)
        a_of_x = np.zeros_like(coords)
        for a, (lo, hi) in self.outcomes:
            a_of_x = np.where((coords >= lo) & (coords < hi), a, a_of_x)
        return _along_axis(a_of_x, self.grid, self.system_axis)

    def outcome_region(self, value: float) -> Region:
        """Full system axis times the pointer readout interval of one outcome."""
        zlo, zhi = self.pointer_regions()[value]
        box = [None, None]
        box[self.system_axis] = self.grid.extents[self.system_axis]
        box[self.pointer_axis] = (zlo, zhi)
        return Region(boxes=(tuple(box),), name=f"outcome_{value:g}")


def _along_axis(values_1d: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    shape = [1, 1]
    shape[axis] = grid.npoints[axis]
    return np.broadcast_to(values_1d.reshape(shape), grid.shape).copy()


def system_grid(setup: MeasurementSetup) -> Grid:
    """The 1D grid of the system axis alone."""
    ax = setup.system_axis
    return make_grid([setup.grid.extents[ax]], [setup.grid.npoints[ax]])


def ready_pointer(setup: MeasurementSetup, center: float = 0.0) -> np.ndarray:
    """Ready pointer amplitude over the pointer axis (unit-norm Gaussian)."""
    pax = setup.pointer_axis
    pgrid = make_grid([setup.grid.extents[pax]], [setup.grid.npoints[pax]])
    eta = make_state(
        pgrid, {"kind": "gaussian", "center": center, "sigma": setup.pointer_sigma}
    )
    return eta.amplitudes


def born_probability(psi_sys: WaveField, setup: MeasurementSetup, value: float) -> float:
    """Band mass of the system state for one eigenvalue, relative to its norm."""
    if psi_sys.grid.dim != 1:
        raise ValueError("born_probability expects the 1D system state")
    for a, (lo, hi) in setup.outcomes:
        if a == value:
            coords = psi_sys.grid.axis_coords(0)
            band = (coords >= lo) & (coords < hi)
            num = float(np.sum(np.abs(psi_sys.amplitudes[band]) ** 2))
            den = float(np.sum(np.abs(psi_sys.amplitudes) ** 2))
            if den <= 0:
                raise ValueError("born_probability of a zero state is undefined")
            return num / den
    raise KeyError(f"no outcome with eigenvalue {value}")


def _product_state(psi_sys: WaveField, setup: MeasurementSetup, pointer_amp: np.ndarray) -> np.ndarray:
    sys_amp = psi_sys.amplitudes
    if setup.system_axis == 0:
        return np.outer(sys_amp, pointer_amp)
    return np.outer(pointer_amp, sys_amp)


def impulsive_measure(
    psi_sys: WaveField,
    setup: MeasurementSetup,
    route: str = "analytic",
    n_substeps: int = 16,
) -> WaveField:
    """Entangle the system with the ready pointer over the coupling window.

    analytic route: assemble the post-measurement field directly as the sum
    of band-projected system parts times analytically shifted pointers.
    dynamical route: start from the product state and apply the coupling
    generator in the mixed (system position, pointer wavenumber)
    representation in n_substeps slices; the unperturbed Hamiltonian is
    frozen for the window.  Both routes must agree to interpolation accuracy.
    """
    sgrid = system_grid(setup)
    if psi_sys.grid != sgrid:
        raise ValueError("system state grid does not match the setup's system axis")
    if route == "analytic":
        amp2d = np.zeros(setup.grid.shape, dtype=np.complex128)
        pax = setup.pointer_axis
        pgrid = make_grid([setup.grid.extents[pax]], [setup.grid.npoints[pax]])
        for a, (lo, hi) in setup.outcomes:
            coords = sgrid.axis_coords(0)
            band = (coords >= lo) & (coords < hi)
            shifted = make_state(
                pgrid,
                {
                    "kind": "gaussian",
                    "center": setup.coupling * a * setup.window,
                    "sigma": setup.pointer_sigma,
                },
            ).amplitudes
            amp2d += _product_state(
                psi_sys.with_amplitudes(np.where(band, psi_sys.amplitudes, 0.0)), setup, shifted
            )
        return WaveField(setup.grid, psi_sys.time + setup.window, amp2d)
    if route == "dynamical":
        if n_substeps < 1:
            raise ValueError("n_substeps must be >= 1")
        eta = ready_pointer(setup)
        amp = _product_state(psi_sys, setup, eta)
        a_field = setup.eigenvalue_field()
        pax = setup.pointer_axis
        kz = setup.grid.wavenumbers(pax)
        shape = [1, 1]
        shape[pax] = len(kz)
        kz_b = kz.reshape(shape)
        tau = setup.window / n_substeps
        # displacing by +coupling*a*tau per slice multiplies the pointer
        # spectrum by exp(-i k_z * shift)
        phase = np.exp(-1j * kz_b * (setup.coupling * tau) * a_field)
        for _ in range(n_substeps):
            amp = np.fft.ifft(phase * np.fft.fft(amp, axis=pax), axis=pax)
        return WaveField(setup.grid, psi_sys.time + setup.window, amp)
    raise ValueError(f"unknown route {route!r}; use 'analytic' or 'dynamical'")


@dataclass(frozen=True)
class BranchReport:
    """Per-outcome decomposition of a post-measurement field."""

    values: tuple[float, ...]
    weights: dict[float, float]
    coverage: dict[float, float]
    pointer_regions: dict[float, tuple[float, float]]
    branch_overlap: float
    pointer_overlap: float
    flagged: bool

    def weight_sum(self) -> float:
        return sum(self.weights.values())


def branch_decompose(psi2d: WaveField, setup: MeasurementSetup) -> BranchReport:
    """Split the post-measurement field into outcome branches and score them.

    A branch is the field restricted to one outcome band of the system axis.
    Weights are branch norm fractions; coverage asks how much of each branch's
    substantial amount sits inside its pointer readout interval; the pointer
    overlap (magnitude overlap of normalized pointer marginals) is the
    quasi-orthogonality diagnostic and trips the reliability flag.
    """
    if psi2d.grid != setup.grid:
        raise ValueError("field grid does not match the setup grid")
    grid = setup.grid
    total = norm(psi2d) ** 2
    if total <= 0:
        raise ValueError("cannot decompose a zero field")
    regions = setup.pointer_regions()
    pax = setup.pointer_axis
    zcoords = grid.axis_coords(pax)

    values, weights, coverage = [], {}, {}
    branch_amps = {}
    marginals = {}
    for a, _ in setup.outcomes:
        values.append(a)
        band = setup.band_mask(a)
        amp = np.where(band, psi2d.amplitudes, 0.0)
        branch_amps[a] = amp
        w = float(np.sum(np.abs(amp) ** 2) * grid.cell_volume)
        weights[a] = w / total
        zlo, zhi = regions[a]
        zmask = _along_axis((zcoords >= zlo) & (zcoords < zhi), grid, pax)
        inside = float(np.sum(np.abs(np.where(zmask, amp, 0.0)) ** 2) * grid.cell_volume)
        coverage[a] = inside / w if w > 0 else 0.0
        marg = np.sqrt(np.sum(np.abs(amp) ** 2, axis=setup.system_axis) * grid.spacing[setup.system_axis])
        mnorm = math.sqrt(float(np.sum(marg**2) * grid.spacing[pax]))
        marginals[a] = marg / mnorm if mnorm > 0 else marg

    branch_overlap = 0.0
    pointer_overlap = 0.0
    dz = grid.spacing[pax]
    for i, a in enumerate(values):
        for b in values[i + 1 :]:
            na = math.sqrt(float(np.sum(np.abs(branch_amps[a]) ** 2)) * grid.cell_volume)
            nb = math.sqrt(float(np.sum(np.abs(branch_amps[b]) ** 2)) * grid.cell_volume)
            if na > 0 and nb > 0:
                ov = abs(np.sum(np.conj(branch_amps[a]) * branch_amps[b]) * grid.cell_volume)
                branch_overlap = max(branch_overlap, ov / (na * nb))
            pov = float(np.sum(marginals[a] * marginals[b]) * dz)
            pointer_overlap = max(pointer_overlap, pov)

    return BranchReport(
        values=tuple(values),
        weights=weights,
        coverage=coverage,
        pointer_regions=regions,
        branch_overlap=branch_overlap,
        pointer_overlap=pointer_overlap,
        flagged=pointer_overlap > OVERLAP_FLAG_LEVEL,
    )


def outcome_probability_via_worlds(
    psi2d: WaveField, setup: MeasurementSetup
) -> tuple[dict[float, float], float]:
    """Outcome probabilities as world fractions in pointer-readout regions.

    Returns the per-outcome probabilities and the residual fraction whose
    pointer coordinate lies in none of the readout regions.
    """
    rho = density(psi2d)
    grid = setup.grid
    probs = {}
    for a, _ in setup.outcomes:
        probs[a] = world_probability(rho, grid, setup.outcome_region(a))
    residual = 1.0 - sum(probs.values())
    return probs, residual


@dataclass(frozen=True)
class CollapseReport:
    """Trajectory agreement between the full field and one collapsed branch."""

    outcome: float
    q_bar: tuple[float, ...]
    dominance_ratio: float
    horizon: float
    times: np.ndarray
    distances: np.ndarray
    max_distance: float
    max_distance_spacings: float


def subjective_collapse_compare(
    store_full: FrameStore,
    setup: MeasurementSetup,
    outcome: float,
    q_bar,
    horizon: float,
    dt_traj: float,
    enforce_dominance: bool = True,
) -> CollapseReport:
    """Integrate one world under the full field and under its collapsed branch.

    The collapsed field is the outcome band restriction of the first stored
    frame (left unnormalized: guiding velocities are scale-free), re-evolved
    with the store's own step.  For a dominated start point the two
    trajectories must coincide to a small fraction of a grid spacing; with
    overlapping branches they drift apart, which is the point of the control.
    """
    grid = store_full.grid
    if grid != setup.grid:
        raise ValueError("store grid does not match the setup grid")
    q_bar = np.asarray(q_bar, dtype=float)

    psi0 = store_full.field_at(0)
    band = setup.band_mask(outcome)
    amp_here = _amp_at(psi0, grid, q_bar)
    other = 0.0
    for a, _ in setup.outcomes:
        if a != outcome:
            masked = np.where(setup.band_mask(a), psi0.amplitudes, 0.0)
            other = max(other, _amp_at(psi0.with_amplitudes(masked), grid, q_bar))
    own = _amp_at(psi0.with_amplitudes(np.where(band, psi0.amplitudes, 0.0)), grid, q_bar)
    ratio = other / own if own > 0 else math.inf
    if enforce_dominance and not ratio < 1e-6:
        raise ValueError(
            f"start point lacks branch dominance: |other|/|own| = {ratio:.3e} >= 1e-6"
        )

    t0 = store_full.t0
    t1 = min(t0 + horizon, store_full.t1)
    if t1 < t0 + horizon - 1e-9:
        raise ValueError(
            f"store spans only {store_full.t1 - t0:.6g} time units, horizon needs {horizon}"
        )
    if len(store_full) < 2:
        raise ValueError("collapse comparison needs a store with at least two frames")
    dt_frame = store_full.times[1] - store_full.times[0]
    stride = max(1, round(dt_frame / store_full.dt_step))
    n_frames = round((t1 - t0) / dt_frame)
    collapsed0 = WaveField(grid, t0, np.where(band, psi0.amplitudes, 0.0))
    store_branch = evolve(
        collapsed0,
        store_full.params,
        store_full.dt_step,
        n_steps=n_frames * stride,
        frame_stride=stride,
    )

    traj_full = integrate_trajectory(store_full, q_bar, dt_traj, t0=t0, t1=t1)
    traj_branch = integrate_trajectory(store_branch, q_bar, dt_traj, t0=t0, t1=t1)
    n = min(len(traj_full.times), len(traj_branch.times))
    diffs = traj_full.positions[:n] - traj_branch.positions[:n]
    dist = np.sqrt(np.sum(diffs**2, axis=1))
    valid = ~np.isnan(dist)
    max_d = float(np.max(dist[valid])) if valid.any() else math.nan
    return CollapseReport(
        outcome=outcome,
        q_bar=tuple(q_bar),
        dominance_ratio=ratio,
        horizon=horizon,
        times=traj_full.times[:n],
        distances=dist,
        max_distance=max_d,
        max_distance_spacings=max_d / min(grid.spacing),
    )


def _amp_at(psi: WaveField, grid: Grid, point: np.ndarray) -> float:
    val = interp_scalar(grid, np.abs(psi.amplitudes), np.atleast_2d(point))
    return float(val[0])
