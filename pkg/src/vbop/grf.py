"""Zero-mean Gaussian random field sampling on a uniform sensor grid.

Input functions for every benchmark are drawn from a stationary Gaussian
process with a squared-exponential kernel, discretized at the sensor
locations. Realizations are generated as ``L @ z`` where ``K = L @ L.T`` is a
Cholesky factor of the kernel matrix and ``z`` is standard normal.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import FactorizationError
from .rng import lane_rng

DEFAULT_LENGTH_SCALE = 0.5
DEFAULT_SENSOR_COUNT = 100

_UNIFORM_RTOL = 1e-12


@dataclass(frozen=True)
class SensorGrid:
    """Ordered, uniformly spaced sensor coordinates."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("sensor grid needs at least two 1-D points")
        diffs = np.diff(pts)
        if np.any(diffs <= 0):
            raise ValueError("sensor points must be strictly increasing")
        h = diffs[0]
        if np.any(np.abs(diffs - h) > _UNIFORM_RTOL * max(abs(h), 1.0)):
            raise ValueError("sensor points must be uniformly spaced")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, count: int = DEFAULT_SENSOR_COUNT, start: float = 0.0,
                stop: float = 1.0, endpoint: bool = True) -> "SensorGrid":
        """Uniform grid of `count` points on [start, stop].

        With ``endpoint=False`` the last point stops one spacing short of
        `stop`; that is the layout used for periodic domains where the right
        edge is identified with the left one.
        """
        if count < 2:
            raise ValueError("count must be >= 2")
        return cls(np.linspace(start, stop, count, endpoint=endpoint))

    @property
    def count(self) -> int:
        return self.points.size

    @property
    def spacing(self) -> float:
        return float(self.points[1] - self.points[0])


@dataclass
class GrfEnsemble:
    """Matrix of field realizations, one row per draw, one column per sensor."""

    grid: SensorGrid
    realizations: np.ndarray
    length_scale: float
    seed: int

    def __post_init__(self):
        self.realizations = np.asarray(self.realizations, dtype=np.float64)
        if self.realizations.ndim != 2 or self.realizations.shape[1] != self.grid.count:
            raise ValueError("realizations must be (n, sensor_count)")
        if not np.all(np.isfinite(self.realizations)):
            raise ValueError("realizations contain non-finite entries")

    @property
    def n(self) -> int:
        return self.realizations.shape[0]

    def to_csv(self, path) -> None:
        """One realization per row, sensor values as columns, 17 significant digits."""
        header = ",".join(f"u_{j + 1}" for j in range(self.grid.count))
        np.savetxt(path, self.realizations, delimiter=",", fmt="%.17g",
                   header=header, comments="")


def rbf_kernel(xi, xj, length_scale: float):
    """Squared-exponential kernel exp(-(xi - xj)^2 / (2 l^2)).

    Symmetric in its arguments and bounded in (0, 1], with value 1 at zero
    distance. Accepts scalars or broadcastable arrays.
    """
    xi = np.asarray(xi, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(xj))):
        raise ValueError("kernel inputs must be finite")
    if not np.isfinite(length_scale) or length_scale <= 0:
        raise ValueError("length_scale must be a positive finite real")
    d = xi - xj
    out = np.exp(-(d * d) / (2.0 * length_scale * length_scale))
    return float(out) if out.ndim == 0 else out


def build_covariance(grid: SensorGrid, length_scale: float, jitter: float = 0.0) -> np.ndarray:
    """Dense kernel matrix over the grid with `jitter` added on the diagonal."""
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    x = grid.points
    K = rbf_kernel(x[:, None], x[None, :], length_scale)
    if jitter:
        K = K + jitter * np.eye(grid.count)
    return K


def cholesky_factor(K: np.ndarray, jitter: float = 1e-10,
                    max_jitter: float = 1e-6) -> np.ndarray:
    """Lower-triangular factor of K + j*I, escalating j tenfold until it works.

    The dense squared-exponential kernel matrix is numerically rank deficient
    at 100 points, so a small diagonal shift is required before factorization.
    Raises FactorizationError once j exceeds `max_jitter`.
    """
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(K + j * np.eye(K.shape[0]))
        except np.linalg.LinAlgError:
            j *= 10.0
            if j > max_jitter * (1.0 + 1e-12):
                raise FactorizationError(
                    f"covariance not factorizable with jitter up to {max_jitter:g}"
                ) from None


def sample_grf(grid: SensorGrid, length_scale: float, n: int, seed: int,
               jitter: float = 1e-10) -> GrfEnsemble:
    """Draw `n` i.i.d. field realizations on `grid`.

    Row ``i`` is generated from its own counter-based stream keyed by
    ``(seed, i)``, so the ensemble is identical no matter how rows are split
    across workers, and identical seeds reproduce it bit for bit.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    K = build_covariance(grid, length_scale)
    L = cholesky_factor(K, jitter=jitter)
    u = np.empty((n, grid.count))
    for i in range(n):
        # one matrix-vector product per row: row i is the same no matter how
        # many rows are drawn or how they are split across workers
        u[i] = L @ lane_rng(seed, i).standard_normal(grid.count)
    return GrfEnsemble(grid=grid, realizations=u,
                       length_scale=float(length_scale), seed=int(seed))
