"""Smooth surrogate of a target density for off-grid evaluation.

The nonlinear solver repeatedly evaluates the target density and its
first partials at displaced points that almost never land on grid nodes.
We build a bicubic interpolating spline through the samples (FITPACK via
scipy, smoothing 0, which yields the tensor-product interpolant with
not-a-knot end conditions) and evaluate value and partials analytically.

Grids with fewer than 4 nodes along an axis cannot support a cubic and
fall back to a (bi)linear interpolant; the surface records this in
``bilinear_fallback``.

Bicubic interpolation does not preserve positivity.  Callers that need a
strictly positive value (the solver does) floor the evaluation at a
small epsilon; the floor lives with the caller so the surface itself
reports honest spline values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from scipy.interpolate import RectBivariateSpline
import numpy as np

from .density import DensityField, GridSpec

#: Default floor applied by solver code to keep evaluations positive.
DEFAULT_VALUE_FLOOR = 1e-12


@dataclass(frozen=True)
class SplineSurface:
    """Twice-differentiable interpolant of a density's grid samples."""

    grid: GridSpec
    spline: RectBivariateSpline
    degree: tuple[int, int]
    bilinear_fallback: bool


def fit_spline(g: DensityField) -> SplineSurface:
    """Interpolating bicubic spline through the samples of ``g``."""
    grid = g.grid
    kx = min(3, grid.m - 1)
    ky = min(3, grid.n - 1)
    fallback = kx < 3 or ky < 3
    if fallback:
        kx = ky = 1
        warnings.warn(
            f"grid {grid.m}x{grid.n} too small for a bicubic spline; using bilinear",
            RuntimeWarning,
            stacklevel=2,
        )
    spline = RectBivariateSpline(grid.x1(), grid.x2(), g.values, kx=kx, ky=ky, s=0)
    return SplineSurface(grid, spline, (kx, ky), fallback)


def eval_with_partials(surface: SplineSurface, p1, p2):
    """Spline value and first partials at points (p1, p2).

    Points outside [0,1]^2 are clamped to the boundary before evaluation.
    Accepts scalars or arrays (broadcast together); returns arrays of the
    common shape (0-d inputs give scalars).

    Returns
    -------
    (value, d1, d2) : tuple of ndarray
    """
    p1 = np.clip(np.asarray(p1, dtype=float), 0.0, 1.0)
    p2 = np.clip(np.asarray(p2, dtype=float), 0.0, 1.0)
    p1, p2 = np.broadcast_arrays(p1, p2)
    val = surface.spline.ev(p1, p2)
    d1 = surface.spline.ev(p1, p2, dx=1)
    d2 = surface.spline.ev(p1, p2, dy=1)
    return val, d1, d2


def count_out_of_domain(p1, p2) -> int:
    """Number of points strictly outside [0,1]^2 (clamp diagnostics)."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    outside = (p1 < 0) | (p1 > 1) | (p2 < 0) | (p2 > 1)
    return int(np.count_nonzero(outside))
