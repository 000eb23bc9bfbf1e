"""Configuration-space grids, physics parameters, and analytic state recipes.

The configuration space is a periodic box in 1 or 2 coordinates, discretized
on a uniform lattice whose points double as cell centers.  All fields in the
package live on these lattices; all integrals are Riemann sums weighted by
the cell volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "Grid",
    "PhysicsParams",
    "Potential",
    "WaveField",
    "make_grid",
    "make_state",
    "inner_product",
    "norm",
    "normalize",
    "riemann_sum",
]

# Margins this small relative to the box are treated as touching the boundary.
_EDGE_TOL = 1e-12


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice over a 1D or 2D box.

    extents: per-axis half-open interval [min, max); points sit at
    min + i*spacing, so the lattice is also the set of cell centers.
    npoints must be a power of two per axis (spectral kernels assume it).
    """

    extents: tuple[tuple[float, float], ...]
    npoints: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.npoints)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.npoints

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.extents, self.npoints))

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in self.extents)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_coords(self, axis: int) -> np.ndarray:
        lo, hi = self.extents[axis]
        n = self.npoints[axis]
        return lo + (hi - lo) / n * np.arange(n)

    def meshes(self) -> list[np.ndarray]:
        return list(np.meshgrid(*[self.axis_coords(i) for i in range(self.dim)], indexing="ij"))

    def wavenumbers(self, axis: int) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.npoints[axis], d=self.spacing[axis])

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of configurations inside the box (points shaped (..., dim))."""
        pts = np.asarray(points, dtype=float)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for ax, (lo, hi) in enumerate(self.extents):
            ok &= (pts[..., ax] >= lo) & (pts[..., ax] < hi)
        return ok


def make_grid(extents: Sequence[Sequence[float]], npoints: Sequence[int]) -> Grid:
    """Validate and build a Grid; dimensions 1 and 2 are supported."""
    ext = tuple((float(lo), float(hi)) for lo, hi in extents)
    npt = tuple(int(n) for n in npoints)
    if len(ext) != len(npt):
        raise ValueError(f"extents ({len(ext)} axes) and npoints ({len(npt)} axes) disagree")
    if not 1 <= len(ext) <= 2:
        raise ValueError(f"grid dimension must be 1 or 2, got {len(ext)}")
    for ax, ((lo, hi), n) in enumerate(zip(ext, npt)):
        if not hi > lo:
            raise ValueError(f"axis {ax}: extent max {hi} must exceed min {lo}")
        if not _is_power_of_two(n) or n < 8:
            raise ValueError(
                f"axis {ax}: npoints must be a power of two >= 8, got {n}; "
                "pick the nearest power of two explicitly (no silent rounding)"
            )
    return Grid(extents=ext, npoints=npt)


@dataclass(frozen=True)
class Potential:
    """Multiplicative potential energy over the box.

    kinds: free | harmonic (omega, center) | barrier (height, width, center,
    axis).  The pointer-coupling term used during an impulsive measurement is
    not multiplicative in position and is handled by the measurement module;
    the marker kind 'measurement_coupling' therefore refuses evaluation here.
    """

    kind: str = "free"
    omega: float = 1.0
    center: tuple[float, ...] = (0.0,)
    height: float = 0.0
    width: float = 1.0
    axis: int = 0

    def evaluate(self, grid: Grid) -> np.ndarray:
        if self.kind == "free":
            return np.zeros(grid.shape)
        if self.kind == "harmonic":
            meshes = grid.meshes()
            center = _per_axis(self.center, grid.dim, "potential center")
            v = np.zeros(grid.shape)
            for ax in range(grid.dim):
                v += 0.5 * self.omega**2 * (meshes[ax] - center[ax]) ** 2
            return v
        if self.kind == "barrier":
            meshes = grid.meshes()
            center = _per_axis(self.center, grid.dim, "potential center")
            q = meshes[self.axis] - center[self.axis]
            return np.where(np.abs(q) <= 0.5 * self.width, self.height, 0.0)
        if self.kind == "measurement_coupling":
            raise ValueError(
                "measurement_coupling is not a multiplicative potential; "
                "use the measurement module's impulsive/dynamical routes"
            )
        raise ValueError(f"unknown potential kind {self.kind!r}")


def _per_axis(value, dim: int, what: str) -> tuple[float, ...]:
    if np.isscalar(value):
        return (float(value),) * dim
    vals = tuple(float(v) for v in np.atleast_1d(np.asarray(value, dtype=float)))
    if len(vals) == 1:
        return vals * dim
    if len(vals) != dim:
        raise ValueError(f"{what} has {len(vals)} entries for a {dim}D grid")
    return vals


@dataclass(frozen=True)
class PhysicsParams:
    """hbar, one mass per coordinate, and the external potential."""

    hbar: float = 1.0
    masses: tuple[float, ...] = (1.0,)
    potential: Potential = field(default_factory=Potential)

    def __post_init__(self):
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        masses = tuple(float(m) for m in self.masses)
        if not masses or any(m <= 0 for m in masses):
            raise ValueError(f"all masses must be positive, got {masses}")
        object.__setattr__(self, "masses", masses)

    def mass_for(self, grid: Grid) -> tuple[float, ...]:
        if len(self.masses) == grid.dim:
            return self.masses
        if len(self.masses) == 1:
            return self.masses * grid.dim
        raise ValueError(
            f"{len(self.masses)} masses declared for a {grid.dim}D grid"
        )


@dataclass(frozen=True)
class WaveField:
    """Complex amplitude field over a Grid at a single instant."""

    grid: Grid
    time: float
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=np.complex128)
        if amp.shape != self.grid.shape:
            raise ValueError(f"amplitude shape {amp.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "amplitudes", amp)

    def with_amplitudes(self, amplitudes: np.ndarray, time: float | None = None) -> "WaveField":
        return WaveField(self.grid, self.time if time is None else float(time), amplitudes)


def riemann_sum(values: np.ndarray, grid: Grid) -> float:
    """Integral of a real sampled field: cell-center sum times cell volume."""
    return float(np.sum(values) * grid.cell_volume)


def inner_product(a: WaveField, b: WaveField) -> complex:
    """<a|b> as a Riemann sum; conjugate-linear in the first argument."""
    if a.grid != b.grid:
        raise ValueError("inner product requires both fields on the same grid")
    return complex(np.vdot(a.amplitudes, b.amplitudes) * a.grid.cell_volume)


def norm(a: WaveField) -> float:
    return math.sqrt(max(inner_product(a, a).real, 0.0))


def normalize(a: WaveField) -> WaveField:
    """Rescale to unit norm; a numerically zero field cannot be normalized."""
    n = norm(a)
    if n < 1e-14:
        raise ValueError("cannot normalize a field with numerically zero norm")
    return a.with_amplitudes(a.amplitudes / n)


# --- analytic state recipes -------------------------------------------------

def make_state(
    grid: Grid,
    recipe: Mapping,
    *,
    hbar: float = 1.0,
    masses: Sequence[float] | None = None,
    time: float = 0.0,
) -> WaveField:
    """Evaluate an analytic state recipe at the grid points.

    Recipes are plain mappings (YAML-friendly):
      gaussian:   center, sigma, momentum (per axis); continuum-normalized
      superposition: parts = [{weight, state}, ...]; weights complex, result
                  left unnormalized for the caller
      harmonic_eigenstate: n, omega, center (1D); continuum-normalized
      plane_wave: momentum per axis, which must sit on the reciprocal lattice
                  2*pi*n/L of the periodic box; amplitude 1
      vortex:     charge ell, center, sigma (2D only); continuum-normalized

    Localized recipes must keep a 4-sigma margin from the box boundary.
    """
    kind = recipe.get("kind")
    if kind == "gaussian":
        return WaveField(grid, time, _gaussian(grid, recipe))
    if kind == "superposition":
        parts = recipe.get("parts")
        if not parts:
            raise ValueError("superposition recipe needs a non-empty 'parts' list")
        total = np.zeros(grid.shape, dtype=np.complex128)
        for part in parts:
            w = _as_complex(part.get("weight", 1.0))
            sub = make_state(grid, part["state"], hbar=hbar, masses=masses, time=time)
            total += w * sub.amplitudes
        return WaveField(grid, time, total)
    if kind == "harmonic_eigenstate":
        return WaveField(grid, time, _harmonic_eigenstate(grid, recipe, hbar, masses))
    if kind == "plane_wave":
        return WaveField(grid, time, _plane_wave(grid, recipe))
    if kind == "vortex":
        return WaveField(grid, time, _vortex(grid, recipe))
    raise ValueError(f"unknown state recipe kind {kind!r}")


def _as_complex(w) -> complex:
    if isinstance(w, (list, tuple)):
        re, im = w
        return complex(float(re), float(im))
    return complex(w)


def _require_margin(grid: Grid, center: Sequence[float], widths: Sequence[float], what: str):
    # Localized states must not graze the periodic boundary: 4-sigma margin.
    for ax, ((lo, hi), c, w) in enumerate(zip(grid.extents, center, widths)):
        if c - 4.0 * w < lo - _EDGE_TOL or c + 4.0 * w > hi + _EDGE_TOL:
            raise ValueError(
                f"{what}: axis {ax} needs center +/- 4 widths inside [{lo}, {hi}); "
                f"got center {c}, width {w}"
            )


def _gaussian(grid: Grid, recipe: Mapping) -> np.ndarray:
    center = _per_axis(recipe.get("center", 0.0), grid.dim, "gaussian center")
    sigma = _per_axis(recipe.get("sigma", 1.0), grid.dim, "gaussian sigma")
    momentum = _per_axis(recipe.get("momentum", 0.0), grid.dim, "gaussian momentum")
    if any(s <= 0 for s in sigma):
        raise ValueError(f"gaussian sigma must be positive, got {sigma}")
    _require_margin(grid, center, sigma, "gaussian")
    meshes = grid.meshes()
    amp = np.ones(grid.shape, dtype=np.complex128)
    for ax in range(grid.dim):
        q = meshes[ax] - center[ax]
        # sigma is the standard deviation of |psi|^2 along this axis
        amp *= (2.0 * np.pi * sigma[ax] ** 2) ** -0.25 * np.exp(
            -(q**2) / (4.0 * sigma[ax] ** 2) + 1j * momentum[ax] * q
        )
    return amp


def _harmonic_eigenstate(grid: Grid, recipe: Mapping, hbar: float, masses) -> np.ndarray:
    if grid.dim != 1:
        raise ValueError("harmonic_eigenstate recipe is 1D; build 2D states as products")
    n = int(recipe.get("n", 0))
    if n < 0:
        raise ValueError(f"eigenstate index must be >= 0, got {n}")
    omega = float(recipe.get("omega", 1.0))
    center = float(np.atleast_1d(recipe.get("center", 0.0))[0])
    mass = float(masses[0]) if masses else 1.0
    scale = math.sqrt(mass * omega / hbar)
    # rms radius of level n; used only for the boundary-margin guard
    rms = math.sqrt((n + 0.5) * hbar / (mass * omega))
    _require_margin(grid, (center,), (rms,), "harmonic_eigenstate")
    q = (grid.axis_coords(0) - center) * scale
    coeffs = np.zeros(n + 1)
    coeffs[n] = 1.0
    hermite = np.polynomial.hermite.hermval(q, coeffs)
    norm_const = (mass * omega / (np.pi * hbar)) ** 0.25 / math.sqrt(2.0**n * math.factorial(n))
    return (norm_const * hermite * np.exp(-0.5 * q**2)).astype(np.complex128)


def _plane_wave(grid: Grid, recipe: Mapping) -> np.ndarray:
    momentum = _per_axis(recipe.get("momentum", 0.0), grid.dim, "plane-wave momentum")
    for ax, k in enumerate(momentum):
        length = grid.lengths[ax]
        mode = k * length / (2.0 * np.pi)
        if abs(mode - round(mode)) > 1e-9 * max(1.0, abs(mode)):
            nearest = 2.0 * np.pi * round(mode) / length
            raise ValueError(
                f"plane-wave momentum {k} on axis {ax} is not a reciprocal-lattice "
                f"mode of the periodic box (nearest valid value {nearest:.12g})"
            )
    meshes = grid.meshes()
    phase = np.zeros(grid.shape)
    for ax in range(grid.dim):
        phase = phase + momentum[ax] * meshes[ax]
    return np.exp(1j * phase)


def _vortex(grid: Grid, recipe: Mapping) -> np.ndarray:
    if grid.dim != 2:
        raise ValueError("vortex recipe requires a 2D grid")
    ell = int(recipe.get("charge", 1))
    if ell < 1:
        raise ValueError(f"vortex charge must be >= 1, got {ell}")
    center = _per_axis(recipe.get("center", 0.0), 2, "vortex center")
    sigma = float(np.atleast_1d(recipe.get("sigma", 1.0))[0])
    if sigma <= 0:
        raise ValueError(f"vortex sigma must be positive, got {sigma}")
    _require_margin(grid, center, (sigma * math.sqrt(ell + 1),) * 2, "vortex")
    x, y = grid.meshes()
    zx = x - center[0]
    zy = y - center[1]
    r2 = zx**2 + zy**2
    # continuum normalization of (x+iy)^ell * exp(-r^2 / 4 sigma^2)
    norm_const = (np.pi * math.factorial(ell) * (2.0 * sigma**2) ** (ell + 1)) ** -0.5
    return norm_const * (zx + 1j * zy) ** ell * np.exp(-r2 / (4.0 * sigma**2))
