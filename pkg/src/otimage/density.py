"""Grid-based density representation of grayscale images.

An m-by-n image is read as samples of a continuous mass density on the
unit square: pixel (i, j) sits on the grid node (i*h, j*k) with
h = 1/(m-1), k = 1/(n-1), so the image corners coincide with the corners
of [0, 1]^2.  Axis 0 of every array is the x1 direction, axis 1 is x2.

Preprocessing adds a positive offset to the raw intensities and rescales
so the composite trapezium-rule integral over the square equals one.
The offset keeps densities strictly positive, which the transport solver
requires; the trapezium rule is the single quadrature used everywhere in
the package so that normalization and distance quadrature agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

#: Library default offset for generic images.  The digit-classification
#: pipeline overrides this with 1.0 (intensities scaled to [0, 1] first).
DEFAULT_OFFSET = 1e-3

#: Normalization must hold to this absolute tolerance.
INTEGRAL_TOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [0,1]^2 with m rows (x1) and n columns (x2)."""

    m: int
    n: int

    def __post_init__(self):
        if self.m < 3 or self.n < 3:
            raise InvalidArgumentError(
                f"grid must be at least 3x3 for central differences, got {self.m}x{self.n}"
            )

    @property
    def h(self) -> float:
        """Node spacing in x1."""
        return 1.0 / (self.m - 1)

    @property
    def k(self) -> float:
        """Node spacing in x2."""
        return 1.0 / (self.n - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    def x1(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m)

    def x2(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of node coordinates, 'ij' indexing (X1, X2)."""
        return np.meshgrid(self.x1(), self.x2(), indexing="ij")


@dataclass(frozen=True)
class RawImage:
    """Unprocessed nonnegative intensity matrix (any scale, e.g. 0-255)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2:
            raise InvalidArgumentError(f"image must be 2-D, got ndim={px.ndim}")
        if not np.all(np.isfinite(px)):
            raise InvalidArgumentError("image contains non-finite values")
        if np.any(px < 0):
            raise InvalidArgumentError("image contains negative intensities")
        if not np.any(px > 0):
            raise InvalidArgumentError("image is identically zero")
        object.__setattr__(self, "pixels", px)

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DensityField:
    """Strictly positive grid function integrating to one on [0,1]^2."""

    grid: GridSpec
    values: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise InvalidArgumentError(
                f"values shape {vals.shape} does not match grid {self.grid.shape}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.validate:
            if not np.all(vals > 0):
                raise InvalidArgumentError("density values must be strictly positive")
            integral = trapezium_integral(vals, self.grid)
            if abs(integral - 1.0) > INTEGRAL_TOL:
                raise InvalidArgumentError(
                    f"density integral is {integral!r}, expected 1 within {INTEGRAL_TOL}"
                )


def trapezium_weights(grid: GridSpec) -> np.ndarray:
    """Composite 2-D trapezium weights: 1/4 corners, 1/2 edges, 1 interior."""
    wx = np.ones(grid.m)
    wx[0] = wx[-1] = 0.5
    wy = np.ones(grid.n)
    wy[0] = wy[-1] = 0.5
    return np.outer(wx, wy)


def trapezium_integral(values, grid: GridSpec | None = None) -> float:
    """Composite trapezium-rule integral of a grid function over [0,1]^2.

    ``values`` may be a DensityField (grid taken from it) or an array with
    an explicit ``grid``.
    """
    if isinstance(values, DensityField):
        grid = values.grid
        values = values.values
    if grid is None:
        raise InvalidArgumentError("grid required when integrating a bare array")
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise InvalidArgumentError(
            f"values shape {values.shape} does not match grid {grid.shape}"
        )
    return grid.h * grid.k * float(np.sum(trapezium_weights(grid) * values))


def density_from_image(img: RawImage, offset: float = DEFAULT_OFFSET) -> DensityField:
    """Turn a raw image into a strictly positive unit-mass density.

    Adds ``offset`` to every pixel (same intensity scale as the image) and
    rescales so the trapezium integral over the unit square is exactly one.
    """
    if not np.isfinite(offset) or offset <= 0:
        raise InvalidArgumentError(f"offset must be positive, got {offset!r}")
    grid = GridSpec(img.rows, img.cols)
    shifted = img.pixels + offset
    total = trapezium_integral(shifted, grid)
    return DensityField(grid, shifted / total)
