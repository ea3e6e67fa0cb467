"""Baseline image dissimilarities: Euclidean, Pearson, tangent-space.

The tangent-space distance compensates for small parametric image
transformations.  For each enabled transformation we build its tangent
vector: the derivative of the transformed image with respect to the
parameter at parameter zero, estimated from smoothed spatial gradients.
The one-sided distance is then the norm of the residual after the best
linear combination of tangent vectors has been added to the first image:

    td(a, b) = min over alpha of | a + sum_l t_l(a) * alpha_l - b |

a linear least-squares problem in alpha.  Four transformations are
supported (both translations, rotation, isotropic scaling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError, UndefinedCorrelationError

ALL_TRANSFORMS = ("x1-translation", "x2-translation", "rotation", "scaling")


@dataclass(frozen=True)
class TangentConfig:
    transforms: tuple[str, ...] = ALL_TRANSFORMS

    def __post_init__(self):
        if not self.transforms:
            raise InvalidArgumentError("at least one transformation must be enabled")
        unknown = set(self.transforms) - set(ALL_TRANSFORMS)
        if unknown:
            raise InvalidArgumentError(f"unknown transformations: {sorted(unknown)}")


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return a[None, :]
    if a.ndim != 2:
        raise InvalidArgumentError(f"expected 1-D or 2-D image data, got ndim={a.ndim}")
    return a


def euclidean(a, b) -> float:
    """Plain L2 norm of the pixel difference."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def pearson_similarity(a, b) -> float:
    """Absolute Pearson correlation of the pixel populations, in [0, 1].

    Invariant to affine intensity changes of either image.  Raises for a
    zero-variance image, where the coefficient is undefined.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.shape} vs {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    na = np.linalg.norm(da)
    nb = np.linalg.norm(db)
    if na == 0.0 or nb == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant image")
    p = float(np.dot(da, db) / (na * nb))
    return min(abs(p), 1.0)


def _smoothed_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients after 3x3 binomial smoothing."""
    kernel = np.array([0.25, 0.5, 0.25])
    sm = ndimage.convolve1d(img, kernel, axis=0, mode="nearest")
    sm = ndimage.convolve1d(sm, kernel, axis=1, mode="nearest")
    g1, g2 = np.gradient(sm)
    return g1, g2


def tangent_vectors(img, cfg: TangentConfig = TangentConfig()) -> list[np.ndarray]:
    """Tangent vector (flattened derivative image) per enabled transformation."""
    img = _as_matrix(img)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise InvalidArgumentError("image must be at least 3x3 for tangent vectors")
    g1, g2 = _smoothed_gradients(img)
    m, n = img.shape
    # centered pixel coordinates, unit pixel spacing
    c1 = np.arange(m)[:, None] - (m - 1) / 2.0
    c2 = np.arange(n)[None, :] - (n - 1) / 2.0
    out = []
    for name in cfg.transforms:
        if name == "x1-translation":
            vec = g1
        elif name == "x2-translation":
            vec = g2
        elif name == "rotation":
            vec = c2 * g1 - c1 * g2
        elif name == "scaling":
            vec = c1 * g1 + c2 * g2
        out.append(vec.ravel())
    return out


def tangent_distance(a, b, cfg: TangentConfig = TangentConfig()) -> float:
    """One-sided tangent-space distance, never above the Euclidean distance."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    basis = np.column_stack(tangent_vectors(a, cfg))
    diff = (b - a).ravel()
    # minimum-norm least squares handles a rank-deficient basis
    alpha, *_ = np.linalg.lstsq(basis, diff, rcond=None)
    resid = a.ravel() + basis @ alpha - b.ravel()
    return float(np.linalg.norm(resid))
