"""Substantial measures over configuration space.

A region's substantial amount is the integral of density over it; dividing
by the whole-box amount gives the fraction of worlds inside, which is what
probability statements reduce to here.  Flows through oriented surfaces give
the rate form, and pushforward measures carry a density through a mapping to
an observable's value space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._interp import interp_scalar
from .configspace import Grid, riemann_sum

__all__ = [
    "Region",
    "Surface",
    "full_region",
    "substantial_amount",
    "world_probability",
    "substantial_flow",
    "pushforward_measure",
    "induced_density",
]


@dataclass(frozen=True)
class Region:
    """Finite union of axis-aligned half-open boxes.

    boxes: tuple of boxes; each box is a per-axis (lo, hi) tuple.  Membership
    is the set union evaluated at cell centers, so overlapping boxes are
    counted once by construction.
    """

    boxes: tuple = ()
    name: str = ""

    def __post_init__(self):
        norm_boxes = []
        for box in self.boxes:
            intervals = tuple((float(lo), float(hi)) for lo, hi in box)
            for lo, hi in intervals:
                if not hi > lo:
                    raise ValueError(
                        f"region {self.name or '<unnamed>'}: interval [{lo}, {hi}) is empty"
                    )
            norm_boxes.append(intervals)
        object.__setattr__(self, "boxes", tuple(norm_boxes))

    @property
    def dim(self) -> int:
        return len(self.boxes[0]) if self.boxes else 0

    def membership(self, grid: Grid) -> np.ndarray:
        """Boolean mask over grid cells whose centers fall in the union."""
        mask = np.zeros(grid.shape, dtype=bool)
        meshes = grid.meshes()
        for box in self.boxes:
            if len(box) != grid.dim:
                raise ValueError(
                    f"region {self.name or '<unnamed>'} is {len(box)}D on a {grid.dim}D grid"
                )
            inside = np.ones(grid.shape, dtype=bool)
            for ax, (lo, hi) in enumerate(box):
                inside &= (meshes[ax] >= lo) & (meshes[ax] < hi)
            mask |= inside
        return mask

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        """Membership of explicit configurations (points shaped (K, dim))."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(pts), dtype=bool)
        for box in self.boxes:
            inside = np.ones(len(pts), dtype=bool)
            for ax, (lo, hi) in enumerate(box):
                inside &= (pts[:, ax] >= lo) & (pts[:, ax] < hi)
            out |= inside
        return out

    def validate_within(self, grid: Grid) -> None:
        for box in self.boxes:
            if len(box) != grid.dim:
                raise ValueError(
                    f"region {self.name or '<unnamed>'}: box has {len(box)} axes, grid has {grid.dim}"
                )
            for ax, (lo, hi) in enumerate(box):
                glo, ghi = grid.extents[ax]
                if lo < glo - 1e-12 or hi > ghi + 1e-12:
                    raise ValueError(
                        f"region {self.name or '<unnamed>'}: axis {ax} interval [{lo}, {hi}) "
                        f"leaves the grid extent [{glo}, {ghi})"
                    )


def full_region(grid: Grid, name: str = "all") -> Region:
    return Region(boxes=(tuple(grid.extents),), name=name)


@dataclass(frozen=True)
class Surface:
    """Oriented axis-aligned surface: the set q[axis] = level.

    orientation +1 counts flow toward increasing q[axis] as positive.  In 2D
    the surface is a segment; bounds restrict the transverse coordinate.
    """

    axis: int
    level: float
    orientation: int = 1
    bounds: tuple[float, float] | None = None
    name: str = ""

    def __post_init__(self):
        if self.orientation not in (-1, 1):
            raise ValueError(f"surface orientation must be +1 or -1, got {self.orientation}")


def substantial_amount(rho: np.ndarray, grid: Grid, region: Region) -> float:
    """Integral of density over the region (cell-center membership)."""
    if not region.boxes:
        return 0.0
    mask = region.membership(grid)
    return float(np.sum(rho[mask]) * grid.cell_volume)


def world_probability(rho: np.ndarray, grid: Grid, region: Region) -> float:
    """Fraction of the total substantial amount inside the region."""
    total = riemann_sum(rho, grid)
    if total <= 0:
        raise ValueError("world_probability needs a density with positive total amount")
    return substantial_amount(rho, grid, region) / total


def substantial_flow(current: np.ndarray, grid: Grid, surface: Surface) -> float:
    """Substantial amount crossing the surface per unit time, signed by orientation."""
    ax = surface.axis
    if not 0 <= ax < grid.dim:
        raise ValueError(f"surface axis {ax} invalid for a {grid.dim}D grid")
    lo, hi = grid.extents[ax]
    if not lo <= surface.level < hi:
        raise ValueError(f"surface level {surface.level} outside the axis extent [{lo}, {hi})")
    if grid.dim == 1:
        j = interp_scalar(grid, current[0], np.array([[surface.level]]))
        return float(surface.orientation * j[0])
    other = 1 - ax
    centers = grid.axis_coords(other)
    if surface.bounds is not None:
        blo, bhi = surface.bounds
        keep = (centers >= blo) & (centers < bhi)
    else:
        keep = np.ones_like(centers, dtype=bool)
    pts = np.zeros((int(keep.sum()), 2))
    pts[:, ax] = surface.level
    pts[:, other] = centers[keep]
    j = interp_scalar(grid, current[ax], pts)
    return float(surface.orientation * np.sum(j) * grid.spacing[other])


# --- pushforward to an observable's value space ------------------------------


def _check_monotone(f: Callable[[np.ndarray], np.ndarray], xs: np.ndarray, name: str) -> int:
    fx = np.asarray(f(xs), dtype=float)
    d = np.diff(fx)
    if np.all(d > 0):
        return +1
    if np.all(d < 0):
        return -1
    raise ValueError(f"{name}: map is not monotone on the lattice; provide a monotone map")


def pushforward_measure(
    rho_x: np.ndarray,
    domain: tuple[float, float],
    f: Callable[[np.ndarray], np.ndarray],
    targets: Sequence[tuple[float, float]],
    name: str = "pushforward",
) -> float:
    """Measure that a density on a 1D lattice assigns to f landing in targets.

    Riemann semantics: a lattice cell contributes its full mass when its
    center maps into the target union.  With the identity map this reduces
    exactly to the direct region measure on the same lattice.
    """
    rho = np.asarray(rho_x, dtype=float)
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise ValueError(f"{name}: empty domain [{lo}, {hi})")
    n = rho.shape[0]
    dx = (hi - lo) / n
    xs = lo + dx * (np.arange(n) + 0.5)
    _check_monotone(f, xs, name)
    fx = np.asarray(f(xs), dtype=float)
    keep = np.zeros(n, dtype=bool)
    for tlo, thi in targets:
        keep |= (fx >= tlo) & (fx < thi)
    return float(np.sum(rho[keep]) * dx)


def _invert_monotone(f, y: float, lo: float, hi: float, direction: int) -> float:
    a, b = lo, hi
    fa = float(f(np.array([a]))[0])
    fb = float(f(np.array([b]))[0])
    ylo, yhi = (fa, fb) if direction > 0 else (fb, fa)
    if y <= ylo:
        return a if direction > 0 else b
    if y >= yhi:
        return b if direction > 0 else a
    for _ in range(200):
        m = 0.5 * (a + b)
        fm = float(f(np.array([m]))[0])
        if (fm < y) == (direction > 0):
            a = m
        else:
            b = m
        if b - a < 1e-15 * max(1.0, abs(a) + abs(b)):
            break
    return 0.5 * (a + b)


def induced_density(
    rho_x: np.ndarray,
    domain: tuple[float, float],
    f: Callable[[np.ndarray], np.ndarray],
    y_points: np.ndarray,
    name: str = "pushforward",
) -> np.ndarray:
    """Density of the pushforward at given target values.

    rho_Y(y) = rho_X(x*) / |f'(x*)| with x* the monotone preimage of y; the
    derivative is a central difference of f around x*.
    """
    rho = np.asarray(rho_x, dtype=float)
    lo, hi = float(domain[0]), float(domain[1])
    n = rho.shape[0]
    dx = (hi - lo) / n
    xs = lo + dx * (np.arange(n) + 0.5)
    direction = _check_monotone(f, xs, name)
    out = np.zeros(len(y_points))
    eps = 1e-7 * max(1.0, hi - lo)
    for i, y in enumerate(np.asarray(y_points, dtype=float)):
        xstar = _invert_monotone(f, y, lo, hi, direction)
        a = max(xstar - eps, lo)
        b = min(xstar + eps, hi)
        fprime = (float(f(np.array([b]))[0]) - float(f(np.array([a]))[0])) / (b - a)
        if fprime == 0.0:
            raise ValueError(f"{name}: map has zero slope at preimage of y={y}")
        # clamp-to-edge sample of the lattice density at the preimage
        pos = np.clip((xstar - lo) / dx - 0.5, 0.0, n - 1.0)
        i0 = int(np.floor(pos))
        i1 = min(i0 + 1, n - 1)
        w = pos - i0
        rho_at = (1.0 - w) * rho[i0] + w * rho[i1]
        out[i] = rho_at / abs(fprime)
    return out
