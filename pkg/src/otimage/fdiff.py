"""Central finite differences with homogeneous Neumann boundary closure.

Interior nodes use the standard second-order central stencils.  On the
boundary, the ghost node outside the domain is eliminated with the
reflection identity implied by a zero normal derivative (the ghost value
equals its mirror image), which makes the normal first derivative
exactly zero and turns the second derivative on, e.g., the first row
into 2*(u[1,:] - u[0,:])/h^2.  Tangential first derivatives along an
edge remain ordinary central differences along that edge.  The mixed
second derivative is defined as zero on the whole boundary ring.
Corners apply the reflection in both axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import GridSpec
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class GradientField:
    dx1: np.ndarray
    dx2: np.ndarray


@dataclass(frozen=True)
class HessianField:
    dx1x1: np.ndarray
    dx2x2: np.ndarray
    dx1x2: np.ndarray


def _check(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape:
        raise InvalidArgumentError(f"field shape {u.shape} does not match grid {grid.shape}")
    return u


def gradient(u: np.ndarray, grid: GridSpec) -> GradientField:
    """First partials of a grid function; normal component zero on the boundary."""
    u = _check(u, grid)
    h, k = grid.h, grid.k
    d1 = np.zeros_like(u)
    d2 = np.zeros_like(u)
    d1[1:-1, :] = (u[2:, :] - u[:-2, :]) / (2 * h)
    d2[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * k)
    # boundary: the normal component vanishes by ghost reflection, the
    # tangential component is a central difference along the edge
    d1[0, :] = 0.0
    d1[-1, :] = 0.0
    d2[:, 0] = 0.0
    d2[:, -1] = 0.0
    return GradientField(d1, d2)


def hessian(u: np.ndarray, grid: GridSpec) -> HessianField:
    """Second partials of a grid function with Neumann ghost elimination."""
    u = _check(u, grid)
    h, k = grid.h, grid.k
    d11 = np.empty_like(u)
    d22 = np.empty_like(u)
    d12 = np.zeros_like(u)
    d11[1:-1, :] = (u[:-2, :] - 2 * u[1:-1, :] + u[2:, :]) / (h * h)
    d11[0, :] = 2 * (u[1, :] - u[0, :]) / (h * h)
    d11[-1, :] = 2 * (u[-2, :] - u[-1, :]) / (h * h)
    d22[:, 1:-1] = (u[:, :-2] - 2 * u[:, 1:-1] + u[:, 2:]) / (k * k)
    d22[:, 0] = 2 * (u[:, 1] - u[:, 0]) / (k * k)
    d22[:, -1] = 2 * (u[:, -2] - u[:, -1]) / (k * k)
    d12[1:-1, 1:-1] = (
        u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]
    ) / (4 * h * k)
    return HessianField(d11, d22, d12)
