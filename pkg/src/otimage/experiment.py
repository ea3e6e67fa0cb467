"""k-NN classification with pluggable distances and the scaling benchmark.

The experiment follows the incremental protocol: for every training
partition and every schedule size s, each test image is classified
against the first s examples per digit of that partition, and accuracies
are aggregated across partitions (mean and standard deviation per s).
Distances between all (test, train) pairs of a partition are computed
once at the largest schedule size and reused for every smaller s, since
the subsets are nested.

Per the study protocol, every image is first scaled by the intensity
scale and normalized to unit trapezium integral before the plain metric
methods see it; the transport methods build their own normalized
representations (offset density or discrete measure).

Expensive distances (the PDE and LP transport routes) fan out over a
process pool, one task per training image so the per-train-image setup
(spline fit, measure extraction) is paid once per column.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import ExperimentSpec, LabeledImage, Partition, build_partitions
from .density import GridSpec, RawImage, density_from_image, trapezium_integral
from .errors import InvalidArgumentError, NumericFailureError
from .interp import fit_spline
from .kantorovich import cost_matrix, kantorovich_distance, measure_from_image, solve_lp
from .metrics import TangentConfig, euclidean, pearson_similarity, tangent_distance, tangent_vectors
from .solver import NewtonConfig, newton_solve
from .transport import wasserstein_distance

METHODS = ("wasserstein-pde", "kantorovich-lp", "euclidean", "pearson", "tangent")


@dataclass(frozen=True)
class DistanceFunction:
    """Image dissimilarity under one method tag, on protocol-prepared inputs."""

    method: str
    offset: float = 1.0
    intensity_scale: float = 255.0
    newton: NewtonConfig = NewtonConfig()
    tangent: TangentConfig = TangentConfig()
    lp_cost: str = "half-squared"
    pde_cost: str = "quadratic"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"method {self.method!r} not one of {METHODS}")

    def prepare(self, pixels: np.ndarray):
        """Method-specific representation of one image."""
        scaled = np.asarray(pixels, dtype=float) / self.intensity_scale
        if self.method == "wasserstein-pde":
            return density_from_image(RawImage(scaled), self.offset)
        if self.method == "kantorovich-lp":
            return measure_from_image(RawImage(scaled))
        grid = GridSpec(*scaled.shape)
        return scaled / trapezium_integral(scaled, grid)

    def pair(self, pa, pb) -> float:
        """Distance between two prepared representations."""
        if self.method == "wasserstein-pde":
            u, diag = newton_solve(pa, fit_spline(pb), self.newton)
            return wasserstein_distance(u, pa, cost=self.pde_cost)
        if self.method == "kantorovich-lp":
            cost = cost_matrix(pa, pb, self.lp_cost)
            plan = solve_lp(pa, pb, cost)
            root = 0.5 if self.lp_cost == "half-squared" else None
            return kantorovich_distance(plan, cost, root=root)
        if self.method == "euclidean":
            return euclidean(pa, pb)
        if self.method == "pearson":
            return 1.0 - pearson_similarity(pa, pb)
        return tangent_distance(pa, pb, self.tangent)

    def __call__(self, a_pixels, b_pixels) -> float:
        return self.pair(self.prepare(a_pixels), self.prepare(b_pixels))


@dataclass
class ExperimentResult:
    method: str
    schedule: list[int]
    partition_count: int
    accuracies: np.ndarray          # (partitions, len(schedule))
    mean_accuracy: np.ndarray       # per schedule size
    std_accuracy: np.ndarray
    distance_seconds: float = 0.0
    distance_calls: int = 0


def vote(distances: np.ndarray, labels: np.ndarray, k: int) -> int:
    """Majority label of the k nearest; ties by summed distance, then label."""
    if k > distances.shape[0]:
        raise InvalidArgumentError(f"k={k} exceeds the {distances.shape[0]} candidates")
    nearest = np.argsort(distances, kind="stable")[:k]
    near_labels = labels[nearest]
    near_dists = distances[nearest]
    best = None
    for lab in np.unique(near_labels):
        mask = near_labels == lab
        key = (-int(mask.sum()), float(near_dists[mask].sum()), int(lab))
        if best is None or key < best:
            best = key
    return best[2]


def classify(
    test: LabeledImage,
    train: list[LabeledImage],
    k: int,
    dfun: DistanceFunction,
) -> int:
    """Reference single-image classifier (the batched runner must agree)."""
    if not train:
        raise InvalidArgumentError("training set is empty")
    pt = dfun.prepare(test.image.pixels)
    dists = np.empty(len(train))
    for idx, item in enumerate(train):
        try:
            dists[idx] = dfun.pair(pt, dfun.prepare(item.image.pixels))
        except NumericFailureError as exc:
            raise NumericFailureError(
                f"distance failed for test #{test.source_index} vs "
                f"train #{item.source_index}: {exc}",
                iteration=exc.iteration,
            ) from exc
    return vote(dists, np.array([t.label for t in train]), k)


# ---------------------------------------------------------------------------
# batched distance matrices
# ---------------------------------------------------------------------------

_POOL_STATE: dict = {}


def _pool_init(dfun: DistanceFunction, test_pixels: list[np.ndarray]):
    _POOL_STATE["dfun"] = dfun
    _POOL_STATE["test"] = [dfun.prepare(px) for px in test_pixels]


def _pool_column(train_pixels: np.ndarray):
    dfun: DistanceFunction = _POOL_STATE["dfun"]
    prepared_test = _POOL_STATE["test"]
    pt = dfun.prepare(train_pixels)
    t0 = time.perf_counter()
    if dfun.method == "wasserstein-pde":
        # one spline fit per training image, reused across the test column
        spline = fit_spline(pt)
        col = np.empty(len(prepared_test))
        for r, ptest in enumerate(prepared_test):
            u, _ = newton_solve(ptest, spline, dfun.newton)
            col[r] = wasserstein_distance(u, ptest, cost=dfun.pde_cost)
    else:
        col = np.array([dfun.pair(ptest, pt) for ptest in prepared_test])
    return col, time.perf_counter() - t0


def _normalized_stack(dfun: DistanceFunction, items: list[np.ndarray]) -> np.ndarray:
    return np.stack([dfun.prepare(px).ravel() for px in items])


def distance_matrix(
    dfun: DistanceFunction,
    test_items: list[LabeledImage],
    train_items: list[LabeledImage],
    workers: int | None = None,
) -> tuple[np.ndarray, float]:
    """All pairwise distances, tests as rows.  Returns (matrix, seconds)."""
    test_px = [t.image.pixels for t in test_items]
    train_px = [t.image.pixels for t in train_items]
    t0 = time.perf_counter()

    if dfun.method == "euclidean":
        A = _normalized_stack(dfun, test_px)
        B = _normalized_stack(dfun, train_px)
        sq = (
            np.sum(A * A, axis=1)[:, None]
            + np.sum(B * B, axis=1)[None, :]
            - 2.0 * A @ B.T
        )
        return np.sqrt(np.maximum(sq, 0.0)), time.perf_counter() - t0

    if dfun.method == "pearson":
        A = _normalized_stack(dfun, test_px)
        B = _normalized_stack(dfun, train_px)
        A = A - A.mean(axis=1, keepdims=True)
        B = B - B.mean(axis=1, keepdims=True)
        na = np.linalg.norm(A, axis=1)
        nb = np.linalg.norm(B, axis=1)
        if np.any(na == 0) or np.any(nb == 0):
            raise NumericFailureError("constant image in the Pearson batch")
        corr = (A @ B.T) / np.outer(na, nb)
        return 1.0 - np.minimum(np.abs(corr), 1.0), time.perf_counter() - t0

    if dfun.method == "tangent":
        A = _normalized_stack(dfun, test_px)  # (T, P)
        out = np.empty((len(test_px), len(train_px)))
        for c, px in enumerate(train_px):
            prepared = dfun.prepare(px)
            basis = np.column_stack(tangent_vectors(prepared, dfun.tangent))
            diffs = A.T - prepared.ravel()[:, None]  # (P, T)
            alpha, *_ = np.linalg.lstsq(basis, diffs, rcond=None)
            out[:, c] = np.linalg.norm(basis @ alpha - diffs, axis=0)
        return out, time.perf_counter() - t0

    # transport methods: pool over training images
    n_workers = workers if workers is not None else (os.cpu_count() or 1)
    out = np.empty((len(test_px), len(train_px)))
    if n_workers <= 1:
        _pool_init(dfun, test_px)
        try:
            for c, px in enumerate(train_px):
                out[:, c], _ = _pool_column(px)
        finally:
            _POOL_STATE.clear()
    else:
        with ProcessPoolExecutor(
            max_workers=n_workers, initializer=_pool_init, initargs=(dfun, test_px)
        ) as pool:
            for c, (col, _) in enumerate(pool.map(_pool_column, train_px, chunksize=4)):
                out[:, c] = col
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# the experiment
# ---------------------------------------------------------------------------

def run_experiment(
    spec: ExperimentSpec,
    train: list[LabeledImage],
    test: list[LabeledImage],
    dfun: DistanceFunction | None = None,
    workers: int | None = None,
    verbose: bool = False,
) -> ExperimentResult:
    """Accuracy-versus-training-size protocol over disjoint partitions."""
    if dfun is None:
        dfun = DistanceFunction(
            spec.method, offset=spec.offset, intensity_scale=spec.intensity_scale
        )
    partitions, test_subset = build_partitions(train, test, spec)
    schedule = spec.schedule
    acc = np.zeros((len(partitions), len(schedule)))
    test_labels = np.array([t.label for t in test_subset])
    seconds = 0.0
    calls = 0

    for p, part in enumerate(partitions):
        train_items = part.subset(spec.schedule_max)
        train_labels = np.array([t.label for t in train_items])
        matrix, dt = distance_matrix(dfun, test_subset, train_items, workers=workers)
        seconds += dt
        calls += matrix.size
        # columns are class-major blocks of schedule_max items
        classes = np.unique(train_labels)
        block = spec.schedule_max
        for si, s in enumerate(schedule):
            cols = np.concatenate([np.arange(ci * block, ci * block + s) for ci in range(len(classes))])
            sub = matrix[:, cols]
            sub_labels = train_labels[cols]
            predicted = np.array([vote(row, sub_labels, spec.k) for row in sub])
            acc[p, si] = float(np.mean(predicted == test_labels))
        if verbose:
            print(f"partition {p + 1}/{len(partitions)}: "
                  f"acc@{schedule[-1]}={acc[p, -1]:.4f} ({dt:.1f}s)")

    std = acc.std(axis=0, ddof=1) if len(partitions) > 1 else np.zeros(len(schedule))
    return ExperimentResult(
        method=dfun.method,
        schedule=schedule,
        partition_count=len(partitions),
        accuracies=acc,
        mean_accuracy=acc.mean(axis=0),
        std_accuracy=std,
        distance_seconds=seconds,
        distance_calls=calls,
    )


# ---------------------------------------------------------------------------
# complexity benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkResult:
    sizes: list[int]
    pixel_counts: list[int]
    seconds: list[float]
    converged: list[bool]
    slope: float
    excluded: list[int] = field(default_factory=list)


def _corner_gaussian_pair(size: int, width: float = 0.16, floor: float = 2e-2):
    grid = GridSpec(size, size)
    X1, X2 = grid.nodes()

    def gauss(c1, c2):
        return np.exp(-((X1 - c1) ** 2 + (X2 - c2) ** 2) / (2 * width**2)) + floor

    f = gauss(0.25, 0.25)
    g = gauss(0.75, 0.75)
    from .density import DensityField

    f = DensityField(grid, f / trapezium_integral(f, grid))
    g = DensityField(grid, g / trapezium_integral(g, grid))
    return f, g


def complexity_benchmark(
    sizes: list[int],
    cfg: NewtonConfig = NewtonConfig(),
    repeats: int = 1,
) -> BenchmarkResult:
    """Time the nonlinear solve on corner-to-corner Gaussian pairs.

    Fits the least-squares slope of log(time) against log(total pixels).
    The first (smallest) size is solved once untimed to absorb JIT and
    factorization warm-up.  Sizes whose solve does not converge are
    excluded from the fit and reported.
    """
    sizes = sorted(int(s) for s in sizes)
    if len(sizes) < 4:
        raise InvalidArgumentError("need at least 4 grid sizes for a slope fit")
    f, g = _corner_gaussian_pair(sizes[0])
    newton_solve(f, fit_spline(g), cfg)  # warm-up, discarded

    seconds = []
    converged = []
    for size in sizes:
        f, g = _corner_gaussian_pair(size)
        spline = fit_spline(g)
        best = np.inf
        ok = True
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            _, diag = newton_solve(f, spline, cfg)
            best = min(best, time.perf_counter() - t0)
            ok = ok and diag.converged
        seconds.append(best)
        converged.append(ok)

    pixel_counts = [s * s for s in sizes]
    included = [i for i, ok in enumerate(converged) if ok]
    excluded = [sizes[i] for i, ok in enumerate(converged) if not ok]
    if len(included) < 2:
        raise NumericFailureError("too few converged sizes to fit a slope")
    logn = np.log([pixel_counts[i] for i in included])
    logt = np.log([seconds[i] for i in included])
    slope = float(np.polyfit(logn, logt, 1)[0])
    return BenchmarkResult(sizes, pixel_counts, seconds, converged, slope, excluded)
