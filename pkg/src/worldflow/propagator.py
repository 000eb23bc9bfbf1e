"""Spectral split-operator propagation of wave fields on periodic grids.

One step advances by dt via the symmetric (Strang) splitting: half potential
phase in position space, full kinetic phase in wavenumber space, half
potential phase again.  Both factors are pure phases, so every step is
unitary up to floating-point roundoff; any measurable norm drift indicates a
misconfigured run and is rejected rather than renormalized away.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .configspace import Grid, PhysicsParams, Potential, WaveField, inner_product, norm

__all__ = ["FrameStore", "evolve", "expected_energy", "apply_hamiltonian"]

# Relative norm drift allowed across the frames of one store.
NORM_DRIFT_TOL = 1e-8


@dataclass
class FrameStore:
    """Time-ordered sequence of wave-field frames from a single run.

    All frames share one grid and one parameter set; times are strictly
    increasing.  dt_step records the integration step used to produce the
    frames so downstream analyses can re-evolve consistently.
    """

    grid: Grid
    params: PhysicsParams
    dt_step: float
    times: list[float] = field(default_factory=list)
    frames: list[np.ndarray] = field(default_factory=list)

    def append(self, wavefield: WaveField) -> None:
        if wavefield.grid != self.grid:
            raise ValueError("frame grid does not match the store grid")
        if self.times and wavefield.time <= self.times[-1]:
            raise ValueError(
                f"frame times must be strictly increasing; got {wavefield.time} "
                f"after {self.times[-1]}"
            )
        amp = wavefield.amplitudes
        if not np.all(np.isfinite(amp)):
            raise RuntimeError("non-finite amplitudes: overflow in the potential or step size")
        n = norm(wavefield)
        if self.frames:
            n0 = math.sqrt(float(np.sum(np.abs(self.frames[0]) ** 2)) * self.grid.cell_volume)
            if abs(n - n0) > NORM_DRIFT_TOL * max(n0, 1e-300):
                raise RuntimeError(
                    f"norm drift {abs(n - n0) / n0:.3e} exceeds {NORM_DRIFT_TOL}; "
                    "reduce dt_step"
                )
        self.times.append(float(wavefield.time))
        self.frames.append(amp)

    def __len__(self) -> int:
        return len(self.frames)

    def field_at(self, index: int) -> WaveField:
        return WaveField(self.grid, self.times[index], self.frames[index])

    def __iter__(self) -> Iterator[WaveField]:
        for i in range(len(self)):
            yield self.field_at(i)

    @property
    def t0(self) -> float:
        return self.times[0]

    @property
    def t1(self) -> float:
        return self.times[-1]

    def norm_drift(self) -> float:
        """Max relative deviation of frame norms from the initial frame."""
        norms = [math.sqrt(float(np.sum(np.abs(f) ** 2)) * self.grid.cell_volume) for f in self.frames]
        n0 = norms[0]
        return max(abs(n - n0) / n0 for n in norms)

    def bracket(self, t: float) -> tuple[int, int, float]:
        """Frame indices (k0, k1) around t and the linear weight of k1."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"time {t} outside stored span [{times[0]}, {times[-1]}]")
        if len(times) == 1:
            return 0, 0, 0.0
        k1 = int(np.searchsorted(times, t, side="right"))
        k1 = min(max(k1, 1), len(times) - 1)
        k0 = k1 - 1
        w = (t - times[k0]) / (times[k1] - times[k0])
        return k0, k1, float(min(max(w, 0.0), 1.0))

    def extend(self, other: "FrameStore") -> None:
        """Append a later segment (piecewise-constant potential switching)."""
        if other.grid != self.grid:
            raise ValueError("cannot extend with frames on a different grid")
        start = 1 if other.times and self.times and math.isclose(other.times[0], self.times[-1]) else 0
        for i in range(start, len(other)):
            self.append(other.field_at(i))

    # --- serialization -----------------------------------------------------

    def dump_ndjson(self, path) -> None:
        """One JSON record per line: a header, then each frame."""
        with open(path, "w") as fh:
            header = {
                "record": "header",
                "schema_version": 1,
                "extents": [list(e) for e in self.grid.extents],
                "npoints": list(self.grid.npoints),
                "hbar": self.params.hbar,
                "masses": list(self.params.masses),
                "potential_kind": self.params.potential.kind,
                "dt_step": self.dt_step,
            }
            fh.write(json.dumps(header) + "\n")
            for t, amp in zip(self.times, self.frames):
                row = {
                    "record": "frame",
                    "time": t,
                    "re": np.real(amp).ravel().tolist(),
                    "im": np.imag(amp).ravel().tolist(),
                }
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def load_ndjson(cls, path, params: PhysicsParams | None = None) -> "FrameStore":
        from .configspace import make_grid

        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("record") != "header":
                raise ValueError("frame dump must start with a header record")
            grid = make_grid(header["extents"], header["npoints"])
            if params is None:
                params = PhysicsParams(
                    hbar=header["hbar"],
                    masses=tuple(header["masses"]),
                    potential=Potential(kind=header.get("potential_kind", "free")),
                )
            store = cls(grid=grid, params=params, dt_step=header["dt_step"])
            for line in fh:
                row = json.loads(line)
                amp = (np.asarray(row["re"]) + 1j * np.asarray(row["im"])).reshape(grid.shape)
                store.append(WaveField(grid, row["time"], amp))
        return store


def _kinetic_phase_rate(grid: Grid, params: PhysicsParams) -> np.ndarray:
    """Sum over axes of hbar * k^2 / (2 m): the kinetic phase per unit time."""
    masses = params.mass_for(grid)
    rate = np.zeros(grid.shape)
    for ax in range(grid.dim):
        k = grid.wavenumbers(ax)
        shape = [1] * grid.dim
        shape[ax] = grid.npoints[ax]
        rate = rate + params.hbar * k.reshape(shape) ** 2 / (2.0 * masses[ax])
    return rate


def evolve(
    psi0: WaveField,
    params: PhysicsParams,
    dt_step: float,
    n_steps: int,
    frame_stride: int = 1,
) -> FrameStore:
    """Propagate psi0 for n_steps of dt_step, storing every frame_stride-th frame.

    dt_step may be negative (time reversal).  n_steps must be a multiple of
    frame_stride so the stored frames are uniformly spaced.
    """
    if dt_step == 0.0:
        raise ValueError("dt_step must be nonzero")
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    if frame_stride < 1:
        raise ValueError(f"frame_stride must be >= 1, got {frame_stride}")
    if n_steps % frame_stride != 0:
        raise ValueError(f"n_steps ({n_steps}) must be a multiple of frame_stride ({frame_stride})")
    grid = psi0.grid
    v = params.potential.evaluate(grid)
    half_v = np.exp(-0.5j * v * dt_step / params.hbar)
    kinetic = np.exp(-1j * _kinetic_phase_rate(grid, params) * dt_step)

    store = FrameStore(grid=grid, params=params, dt_step=dt_step)
    store.append(psi0)
    amp = psi0.amplitudes.copy()
    t = psi0.time
    for step in range(1, n_steps + 1):
        amp = half_v * amp
        amp = np.fft.ifftn(kinetic * np.fft.fftn(amp))
        amp = half_v * amp
        if step % frame_stride == 0:
            t = psi0.time + step * dt_step
            store.append(WaveField(grid, t, amp.copy()))
    return store


def apply_hamiltonian(psi: WaveField, params: PhysicsParams) -> WaveField:
    """H psi with the spectral kinetic term and the multiplicative potential."""
    grid = psi.grid
    masses = params.mass_for(grid)
    ksq = np.zeros(grid.shape)
    for ax in range(grid.dim):
        k = grid.wavenumbers(ax)
        shape = [1] * grid.dim
        shape[ax] = grid.npoints[ax]
        ksq = ksq + params.hbar**2 * k.reshape(shape) ** 2 / (2.0 * masses[ax])
    kinetic = np.fft.ifftn(ksq * np.fft.fftn(psi.amplitudes))
    v = params.potential.evaluate(grid)
    return psi.with_amplitudes(kinetic + v * psi.amplitudes)


def expected_energy(psi: WaveField, params: PhysicsParams) -> float:
    """<psi|H|psi> / <psi|psi>; the imaginary residual must be roundoff-level."""
    hpsi = apply_hamiltonian(psi, params)
    num = inner_product(psi, hpsi)
    den = inner_product(psi, psi).real
    if den <= 0:
        raise ValueError("expected_energy of a zero field is undefined")
    value = num / den
    if abs(value.imag) > 1e-10 * max(1.0, abs(value.real)):
        raise RuntimeError(f"energy imaginary residual {value.imag:.3e} exceeds 1e-10")
    return float(value.real)
