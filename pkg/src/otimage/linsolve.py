"""Solution of the rank-deficient Neumann systems via bordering.

The assembled stencil matrix A annihilates constants (every row sums to
zero), so A w = b alone is underdetermined by one dimension.  Rather
than pinning an arbitrary unknown we append the all-ones border

    [ A  e ] [ w ]   [ b ]
    [ e' 0 ] [ l ] = [ 0 ]

which simultaneously fixes the gauge (sum of w is zero) and absorbs any
small incompatibility of b through the multiplier l.

Sparse storage is scipy CSR/CSC.  Systems up to ``direct_limit`` unknowns
go through a sparse LU factorization; larger ones use ILU-preconditioned
LGMRES.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, NumericFailureError

#: Largest core dimension solved by direct factorization by default.
DIRECT_LIMIT = 20_000

#: Acceptable relative residual of the bordered solve.
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class BorderedSystem:
    """Core matrix plus implied all-ones border and right-hand side."""

    core: sp.spmatrix
    rhs: np.ndarray

    def __post_init__(self):
        n = self.core.shape[0]
        if self.core.shape != (n, n):
            raise InvalidArgumentError(f"core must be square, got {self.core.shape}")
        if self.rhs.shape != (n,):
            raise InvalidArgumentError(
                f"rhs length {self.rhs.shape} does not match core dimension {n}"
            )

    @property
    def dimension(self) -> int:
        return self.core.shape[0]

    def bordered_operator(self) -> sp.csc_matrix:
        """The explicit (N+1)x(N+1) bordered matrix."""
        n = self.dimension
        e = np.ones((n, 1))
        return sp.bmat([[self.core, e], [e.T, None]], format="csc")


def solve_bordered(system: BorderedSystem, direct_limit: int = DIRECT_LIMIT):
    """Solve the bordered system.

    Returns
    -------
    (w, lam) : (ndarray of length N, float)
        Correction vector with zero sum, and the border multiplier.

    Raises
    ------
    NumericFailureError
        If the factorization fails or the relative residual of the
        bordered operator exceeds ``RESIDUAL_TOL``.
    """
    n = system.dimension
    rhs_norm = float(np.linalg.norm(system.rhs))
    if rhs_norm == 0.0:
        return np.zeros(n), 0.0
    if not np.all(np.isfinite(system.rhs)):
        raise NumericFailureError("right-hand side contains non-finite values")

    mat = system.bordered_operator()
    full_rhs = np.concatenate([system.rhs, [0.0]])
    try:
        if n <= direct_limit:
            z = spla.spsolve(mat, full_rhs)
        else:
            z = _iterative_solve(mat, full_rhs)
    except NumericFailureError:
        raise
    except Exception as exc:  # scipy raises various concrete types
        raise NumericFailureError(f"bordered solve failed: {exc}") from exc

    if not np.all(np.isfinite(z)):
        raise NumericFailureError("bordered solve produced non-finite values")
    residual = float(np.linalg.norm(mat @ z - full_rhs)) / rhs_norm
    if residual > RESIDUAL_TOL:
        raise NumericFailureError(
            f"bordered solve residual {residual:.3e} exceeds {RESIDUAL_TOL}",
            residual=residual,
        )
    return z[:n], float(z[n])


def _iterative_solve(mat: sp.csc_matrix, rhs: np.ndarray) -> np.ndarray:
    ilu = spla.spilu(mat.tocsc(), drop_tol=1e-5, fill_factor=20)
    precond = spla.LinearOperator(mat.shape, ilu.solve)
    z, info = spla.lgmres(mat, rhs, M=precond, rtol=1e-12, atol=0.0, maxiter=2000)
    if info != 0:
        raise NumericFailureError(f"LGMRES did not converge (info={info})")
    return z
