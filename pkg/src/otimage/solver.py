"""Damped Newton iteration for the transport potential.

The optimal map between two positive unit-mass densities f and g on the
unit square has the form T(x) = x - grad(u) for a scalar potential u
solving the fully nonlinear equation

    det(I - H(u)) * g(x - grad(u)) = f(x)

with homogeneous Neumann conditions (no displacement through the
boundary).  Writing u -> u + ew and dropping terms beyond first order in
e gives, with H(u) = [[u_11, u_12], [u_12, u_22]],

    a = det(I - H(u)),  b = u_22 - 1,  c = u_11 - 1,  d = -2*u_12,

    G*(b*ew_11 + c*ew_22 + d*ew_12) - a*(G1*ew_1 + G2*ew_2) = f - a*G,

where G, G1, G2 are the target density and its partials evaluated at the
displaced points x - grad(u) (spline surrogate).  Each Newton step
discretizes this linear PDE with the central stencils of
:mod:`otimage.fdiff`, solves the bordered system, and updates
u <- u + damping * ew.  The iteration starts from u = 0 (the identity
map) and stops when the spread max(r) - min(r) of the residual
r = f - det(I - H(u)) * G falls below the tolerance.

The Neumann closure makes every row of the stencil matrix sum to zero,
so the correction is only determined up to a constant; the bordered
solve pins its mean to zero and u is kept mean-zero for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .density import DensityField, GridSpec
from .errors import InvalidArgumentError, NumericFailureError
from .fdiff import gradient, hessian
from .interp import (
    DEFAULT_VALUE_FLOOR,
    SplineSurface,
    count_out_of_domain,
    eval_with_partials,
    fit_spline,
)
from .linsolve import DIRECT_LIMIT, BorderedSystem, solve_bordered


@dataclass(frozen=True)
class PotentialField:
    """Scalar potential whose gradient displaces the source density."""

    grid: GridSpec
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.shape != self.grid.shape:
            raise InvalidArgumentError(
                f"potential shape {u.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(u)):
            raise InvalidArgumentError("potential contains non-finite values")
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class NewtonConfig:
    """Knobs of the damped Newton iteration."""

    damping: float = 1.0
    tol: float = 1e-8
    max_iters: int = 50
    value_floor: float = DEFAULT_VALUE_FLOOR
    clamp_points: bool = True
    det_retries: int = 5
    direct_limit: int = DIRECT_LIMIT

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise InvalidArgumentError(f"damping must be in (0, 1], got {self.damping}")
        if self.tol <= 0:
            raise InvalidArgumentError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class LinearizationCoefficients:
    """Pointwise coefficients of one linearized step."""

    alpha: np.ndarray       # det(I - H(u))
    beta: np.ndarray        # u_22 - 1, multiplies ew_11
    gamma_coef: np.ndarray  # u_11 - 1, multiplies ew_22
    delta_coef: np.ndarray  # -2*u_12, multiplies ew_12
    G: np.ndarray           # target density at displaced points (floored)
    G_y1: np.ndarray
    G_y2: np.ndarray
    clamped_points: int


@dataclass
class SolveDiagnostics:
    """Per-solve record of the Newton iteration."""

    iterations: int = 0
    residual_history: list = field(default_factory=list)   # spread per iterate
    residual_max_history: list = field(default_factory=list)
    clamped_point_counts: list = field(default_factory=list)
    row_sum_max_history: list = field(default_factory=list)
    step_sum_history: list = field(default_factory=list)   # sum of each correction
    step_scale_history: list = field(default_factory=list)  # damping actually applied
    det_floor_history: list = field(default_factory=list)   # min det after each update
    converged: bool = False


def coefficients(
    u: PotentialField,
    g_spline: SplineSurface,
    value_floor: float = DEFAULT_VALUE_FLOOR,
    clamp_points: bool = True,
) -> LinearizationCoefficients:
    """Evaluate the linearization coefficients at the current iterate."""
    grid = u.grid
    if g_spline.grid != grid:
        raise InvalidArgumentError("potential and target spline use different grids")
    grad = gradient(u.u, grid)
    hess = hessian(u.u, grid)
    alpha = 1.0 - hess.dx1x1 - hess.dx2x2 + hess.dx1x1 * hess.dx2x2 - hess.dx1x2 ** 2
    beta = hess.dx2x2 - 1.0
    gamma_coef = hess.dx1x1 - 1.0
    delta_coef = -2.0 * hess.dx1x2
    X1, X2 = grid.nodes()
    p1 = X1 - grad.dx1
    p2 = X2 - grad.dx2
    clamped = count_out_of_domain(p1, p2)
    if not clamp_points and clamped:
        raise NumericFailureError(
            f"{clamped} displaced points left the domain and clamping is disabled"
        )
    G, G_y1, G_y2 = eval_with_partials(g_spline, p1, p2)
    G = np.maximum(G, value_floor)
    for name, arr in (("alpha", alpha), ("G", G), ("G_y1", G_y1), ("G_y2", G_y2)):
        if not np.all(np.isfinite(arr)):
            raise NumericFailureError(f"non-finite {name} in linearization coefficients")
    return LinearizationCoefficients(
        alpha, beta, gamma_coef, delta_coef, G, G_y1, G_y2, clamped
    )


def residual(
    u: PotentialField,
    f: DensityField,
    g_spline: SplineSurface,
    value_floor: float = DEFAULT_VALUE_FLOOR,
) -> np.ndarray:
    """Pointwise equation residual f(x) - det(I - H(u)) * G."""
    coef = coefficients(u, g_spline, value_floor=value_floor)
    return f.values - coef.alpha * coef.G


@lru_cache(maxsize=32)
def _stencil_pattern(m: int, n: int):
    """Static (row, col) index pattern of the stencil matrix for an m-by-n grid.

    The pattern never changes between Newton iterations; only the values
    do, so they are filled per iteration in this fixed entry order:
    diagonal, x1 neighbours (interior rows then ghost rows), x2
    neighbours (interior columns then ghost columns), mixed corners.
    """
    idx = np.arange(m * n).reshape(m, n)
    rows, cols = [], []

    def pair(r, c):
        rows.append(r.ravel())
        cols.append(c.ravel())

    pair(idx, idx)                          # diagonal
    pair(idx[1:-1, :], idx[:-2, :])         # (i-1, j), 1 <= i <= m-2
    pair(idx[1:-1, :], idx[2:, :])          # (i+1, j)
    pair(idx[0, :], idx[1, :])              # ghost row i = 0
    pair(idx[-1, :], idx[-2, :])            # ghost row i = m-1
    pair(idx[:, 1:-1], idx[:, :-2])         # (i, j-1), 1 <= j <= n-2
    pair(idx[:, 1:-1], idx[:, 2:])          # (i, j+1)
    pair(idx[:, 0], idx[:, 1])              # ghost column j = 0
    pair(idx[:, -1], idx[:, -2])            # ghost column j = n-1
    pair(idx[1:-1, 1:-1], idx[2:, 2:])      # (i+1, j+1)
    pair(idx[1:-1, 1:-1], idx[:-2, :-2])    # (i-1, j-1)
    pair(idx[1:-1, 1:-1], idx[2:, :-2])     # (i+1, j-1)
    pair(idx[1:-1, 1:-1], idx[:-2, 2:])     # (i-1, j+1)

    return np.concatenate(rows), np.concatenate(cols)


def _stencil_values(coef: LinearizationCoefficients, grid: GridSpec) -> np.ndarray:
    """Entry values in the order laid down by :func:`_stencil_pattern`."""
    h, k = grid.h, grid.k
    G, a = coef.G, coef.alpha
    b, c, d = coef.beta, coef.gamma_coef, coef.delta_coef

    diag = -2.0 * G * (b / h**2 + c / k**2)
    x1_m = G * b / h**2 + a * coef.G_y1 / (2 * h)
    x1_p = G * b / h**2 - a * coef.G_y1 / (2 * h)
    x2_m = G * c / k**2 + a * coef.G_y2 / (2 * k)
    x2_p = G * c / k**2 - a * coef.G_y2 / (2 * k)
    ghost_x1 = 2.0 * G * b / h**2
    ghost_x2 = 2.0 * G * c / k**2
    mixed = G * d / (4 * h * k)

    return np.concatenate([
        diag.ravel(),
        x1_m[1:-1, :].ravel(),
        x1_p[1:-1, :].ravel(),
        ghost_x1[0, :].ravel(),
        ghost_x1[-1, :].ravel(),
        x2_m[:, 1:-1].ravel(),
        x2_p[:, 1:-1].ravel(),
        ghost_x2[:, 0].ravel(),
        ghost_x2[:, -1].ravel(),
        mixed[1:-1, 1:-1].ravel(),
        mixed[1:-1, 1:-1].ravel(),
        -mixed[1:-1, 1:-1].ravel(),
        -mixed[1:-1, 1:-1].ravel(),
    ])


def assemble(
    coef: LinearizationCoefficients, f: DensityField, grid: GridSpec
) -> BorderedSystem:
    """Sparse stencil matrix and right-hand side for one Newton step."""
    rows, cols = _stencil_pattern(grid.m, grid.n)
    vals = _stencil_values(coef, grid)
    n_unknowns = grid.m * grid.n
    core = sp.coo_matrix((vals, (rows, cols)), shape=(n_unknowns, n_unknowns)).tocsr()
    rhs = (f.values - coef.alpha * coef.G).ravel()
    return BorderedSystem(core, rhs)


def _determinant(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    hess = hessian(u, grid)
    return 1.0 - hess.dx1x1 - hess.dx2x2 + hess.dx1x1 * hess.dx2x2 - hess.dx1x2 ** 2


def newton_solve(
    f: DensityField,
    g: DensityField | SplineSurface,
    cfg: NewtonConfig = NewtonConfig(),
) -> tuple[PotentialField, SolveDiagnostics]:
    """Solve for the potential transporting density f onto density g.

    ``g`` may be passed pre-splined to amortize the fit across many
    solves against the same target.

    Returns the final iterate and diagnostics; ``converged`` is False if
    the iteration budget ran out (the best iterate is still returned).
    Raises NumericFailureError, tagged with the iteration index, if a
    linear solve fails or coefficients become non-finite.
    """
    grid = f.grid
    if isinstance(g, SplineSurface):
        g_spline = g
    else:
        if g.grid != grid:
            raise InvalidArgumentError("source and target densities use different grids")
        g_spline = fit_spline(g)
    if g_spline.grid != grid:
        raise InvalidArgumentError("target spline grid does not match source grid")

    diag = SolveDiagnostics()
    u = np.zeros(grid.shape)
    for it in range(1, cfg.max_iters + 1):
        diag.iterations = it
        try:
            coef = coefficients(
                PotentialField(grid, u), g_spline,
                value_floor=cfg.value_floor, clamp_points=cfg.clamp_points,
            )
        except NumericFailureError as exc:
            exc.iteration = it
            raise
        r = f.values - coef.alpha * coef.G
        spread = float(r.max() - r.min())
        diag.residual_history.append(spread)
        diag.residual_max_history.append(float(np.abs(r).max()))
        diag.clamped_point_counts.append(coef.clamped_points)
        if spread < cfg.tol:
            diag.converged = True
            break
        if it == cfg.max_iters:
            break

        system = assemble(coef, f, grid)
        diag.row_sum_max_history.append(
            float(np.abs(system.core @ np.ones(system.dimension)).max())
        )
        try:
            w_flat, _ = solve_bordered(system, direct_limit=cfg.direct_limit)
        except NumericFailureError as exc:
            exc.iteration = it
            raise
        diag.step_sum_history.append(float(w_flat.sum()))
        w = w_flat.reshape(grid.shape)

        # keep det(I - H(u)) positive: halve the step a few times if the
        # full update would cross zero, then accept the smallest step
        step = cfg.damping
        candidate = u + step * w
        for _ in range(cfg.det_retries):
            if _determinant(candidate, grid).min() > 0:
                break
            step *= 0.5
            candidate = u + step * w
        diag.step_scale_history.append(step)
        u = candidate - candidate.mean()
        diag.det_floor_history.append(float(_determinant(u, grid).min()))

    return PotentialField(grid, u), diag
