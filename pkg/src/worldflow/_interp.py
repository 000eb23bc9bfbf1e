"""Multilinear interpolation and deposition on periodic grids.

Shared by the trajectory integrators, the ensemble machinery, and the loop
integrals.  Positions are arrays shaped (K, dim) in box coordinates; lattice
points are treated as nodes with periodic wraparound.
"""

from __future__ import annotations

import itertools

import numpy as np

from .configspace import Grid

__all__ = ["lattice_coords", "interp_scalar", "interp_vector", "stencil_any", "deposit"]


def lattice_coords(grid: Grid, positions: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Lower lattice index and fractional offset per axis (periodic)."""
    pts = np.atleast_2d(np.asarray(positions, dtype=float))
    idx, frac = [], []
    for ax in range(grid.dim):
        lo, _ = grid.extents[ax]
        h = grid.spacing[ax]
        s = (pts[:, ax] - lo) / h
        i = np.floor(s).astype(np.int64)
        frac.append(s - i)
        idx.append(np.mod(i, grid.npoints[ax]))
    return idx, frac


def _corner_weights(grid: Grid, idx, frac):
    for offsets in itertools.product((0, 1), repeat=grid.dim):
        w = None
        sel = []
        for ax, off in enumerate(offsets):
            wax = frac[ax] if off else 1.0 - frac[ax]
            w = wax if w is None else w * wax
            sel.append(np.mod(idx[ax] + off, grid.npoints[ax]))
        yield tuple(sel), w


def interp_scalar(grid: Grid, values: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Multilinear sample of one field at each position."""
    idx, frac = lattice_coords(grid, positions)
    out = np.zeros(idx[0].shape, dtype=values.dtype)
    for sel, w in _corner_weights(grid, idx, frac):
        out += w * values[sel]
    return out


def interp_vector(grid: Grid, components: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Multilinear sample of a (dim, *shape) vector field; returns (K, dim)."""
    idx, frac = lattice_coords(grid, positions)
    out = np.zeros((idx[0].shape[0], grid.dim))
    for sel, w in _corner_weights(grid, idx, frac):
        for ax in range(grid.dim):
            out[:, ax] += w * components[ax][sel]
    return out


def stencil_any(grid: Grid, mask: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """True where any lattice node of the interpolation stencil is masked."""
    idx, frac = lattice_coords(grid, positions)
    hit = np.zeros(idx[0].shape, dtype=bool)
    for sel, _ in _corner_weights(grid, idx, frac):
        hit |= mask[sel]
    return hit


def deposit(grid: Grid, positions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Scatter point weights onto the lattice with the multilinear kernel.

    The adjoint of interp_scalar: total deposited weight equals the summed
    input weights exactly, so mass is conserved by construction.
    """
    idx, frac = lattice_coords(grid, positions)
    out = np.zeros(grid.shape)
    for sel, w in _corner_weights(grid, idx, frac):
        np.add.at(out, sel, w * weights)
    return out
