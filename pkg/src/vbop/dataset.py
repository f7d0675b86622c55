"""Triplet datasets: (input samples, query location, target value) rows.

A dataset groups its rows by input realization: every block of `per_input`
consecutive rows shares one realization of the input function. The unique
realizations are stored once (an ``n x sensors`` matrix) and expanded on
demand, which keeps dense evaluation sets tractable; the CSV exporter emits
the fully expanded layout.

Training sets pair each realization with `per_input` query locations drawn
uniformly at random without replacement from the solver grid. Evaluation
sets pair each realization densely with every grid point, in
realization-major then grid-major order.
"""

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .binio import ByteReader, ByteWriter, check_magic, verify_crc
from .errors import DegenerateDataError, VersionError
from .grf import GrfEnsemble, SensorGrid
from .rng import lane_rng
from .solvers import FieldSolution, OdeSolution

DATASET_MAGIC = b"VBDODS01"
DATASET_VERSION = 1


@dataclass
class NormStats:
    """Z-score statistics fitted on training data and reused verbatim later."""

    u_mean: np.ndarray
    u_std: np.ndarray
    s_mean: float
    s_std: float
    normalize_u: bool = True
    normalize_s: bool = True

    def __post_init__(self):
        self.u_mean = np.asarray(self.u_mean, dtype=np.float64)
        self.u_std = np.asarray(self.u_std, dtype=np.float64)
        if self.normalize_u and np.any(self.u_std <= 0):
            raise ValueError("u_std must be strictly positive")
        if self.normalize_s and self.s_std <= 0:
            raise ValueError("s_std must be strictly positive")


@dataclass
class TripletDataset:
    u: np.ndarray                 # (n_inputs, sensors) unique realizations
    y: np.ndarray                 # (n_inputs * per_input, y_dim)
    s: Optional[np.ndarray]       # (n_inputs * per_input,) or None for query sets
    per_input: int
    norm: Optional[NormStats] = None
    dense: bool = False           # every realization paired with one shared grid

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim != 2:
            raise ValueError("y must be 2-D")
        if self.y.shape[0] != self.n_inputs * self.per_input:
            raise ValueError("row count mismatch between u blocks and y")
        if self.s is not None:
            self.s = np.asarray(self.s, dtype=np.float64)
            if self.s.shape != (self.y.shape[0],):
                raise ValueError("s must have one entry per row")

    @property
    def n_inputs(self) -> int:
        return self.u.shape[0]

    @property
    def sensors(self) -> int:
        return self.u.shape[1]

    @property
    def y_dim(self) -> int:
        return self.y.shape[1]

    @property
    def rows(self) -> int:
        return self.y.shape[0]

    @property
    def u_matrix(self) -> np.ndarray:
        """Fully expanded input block: each realization repeated per_input times."""
        return np.repeat(self.u, self.per_input, axis=0)

    def u_row(self, row: int) -> np.ndarray:
        return self.u[row // self.per_input]

    def slice_inputs(self, a: int, b: int) -> "TripletDataset":
        """Sub-dataset covering realizations a..b-1 (all their rows)."""
        m = self.per_input
        s = self.s[a * m:b * m] if self.s is not None else None
        return TripletDataset(u=self.u[a:b], y=self.y[a * m:b * m], s=s,
                              per_input=m, norm=self.norm, dense=self.dense)


def _solution_grid_and_values(sol: Union[OdeSolution, FieldSolution]):
    """(query locations (g, d), flat values (g,)) for one solver output."""
    if isinstance(sol, OdeSolution):
        return sol.times[:, None], np.asarray(sol.values, dtype=np.float64)
    xx, tt = np.meshgrid(sol.x_grid.points, sol.t_grid, indexing="ij")
    pts = np.column_stack([xx.ravel(order="C"), tt.ravel(order="C")])
    return pts, sol.values.ravel(order="C")


def assemble(ensemble: GrfEnsemble, solutions: Sequence[Union[OdeSolution, FieldSolution]],
             m: int, seed: int) -> TripletDataset:
    """Pair each realization with `m` randomly chosen solver-grid locations.

    Locations are drawn without replacement so no training row is duplicated.
    The draw for realization ``i`` is keyed by ``(seed, i)``, making assembly
    order-independent and reproducible.
    """
    if len(solutions) != ensemble.n:
        raise ValueError("need exactly one solver output per realization")
    if m < 1:
        raise ValueError("m must be >= 1")
    y_blocks = []
    s_blocks = []
    for i, sol in enumerate(solutions):
        pts, vals = _solution_grid_and_values(sol)
        if m > pts.shape[0]:
            raise ValueError(f"m={m} exceeds the {pts.shape[0]} available grid points")
        idx = lane_rng(seed, i).choice(pts.shape[0], size=m, replace=False)
        y_blocks.append(pts[idx])
        s_blocks.append(vals[idx])
    return TripletDataset(u=ensemble.realizations.copy(),
                          y=np.concatenate(y_blocks, axis=0),
                          s=np.concatenate(s_blocks, axis=0),
                          per_input=m)


def dense_grid_points(grid) -> np.ndarray:
    """Flatten an evaluation grid to (g, d) query rows in grid-major order."""
    if isinstance(grid, tuple):
        x_pts = grid[0].points if isinstance(grid[0], SensorGrid) else np.asarray(grid[0], float)
        t_pts = np.asarray(grid[1], dtype=np.float64)
        xx, tt = np.meshgrid(x_pts, t_pts, indexing="ij")
        return np.column_stack([xx.ravel(order="C"), tt.ravel(order="C")])
    pts = np.asarray(grid, dtype=np.float64)
    return pts[:, None]


def build_eval_set(ensemble: GrfEnsemble, grid) -> TripletDataset:
    """Dense query set: every realization paired with every grid point.

    `grid` is either a 1-D vector of locations, or an (x_grid, t_vector) pair
    for two-dimensional queries. Targets are absent; rows are ordered
    realization-major, then grid-major.
    """
    pts = dense_grid_points(grid)
    y = np.tile(pts, (ensemble.n, 1))
    return TripletDataset(u=ensemble.realizations.copy(), y=y, s=None,
                          per_input=pts.shape[0], dense=True)


def dense_truth_set(ensemble: GrfEnsemble,
                    solutions: Sequence[Union[OdeSolution, FieldSolution]]) -> TripletDataset:
    """Dense evaluation set carrying the solver truth for every grid point."""
    if len(solutions) != ensemble.n:
        raise ValueError("need exactly one solver output per realization")
    pts0, vals0 = _solution_grid_and_values(solutions[0])
    s = np.empty(ensemble.n * pts0.shape[0])
    s[:pts0.shape[0]] = vals0
    for i, sol in enumerate(solutions[1:], start=1):
        pts, vals = _solution_grid_and_values(sol)
        if pts.shape != pts0.shape:
            raise ValueError("all solver outputs must share one grid")
        s[i * pts0.shape[0]:(i + 1) * pts0.shape[0]] = vals
    y = np.tile(pts0, (ensemble.n, 1))
    return TripletDataset(u=ensemble.realizations.copy(), y=y, s=s,
                          per_input=pts0.shape[0], dense=True)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def fit_norm_stats(ds: TripletDataset, normalize_u: bool = True,
                   normalize_s: bool = True) -> NormStats:
    u_mean = ds.u.mean(axis=0)
    u_std = ds.u.std(axis=0)
    if normalize_u:
        bad = np.where(u_std == 0)[0]
        if bad.size:
            raise DegenerateDataError(
                f"sensor {bad[0]} has zero variance; cannot z-score inputs"
            )
    if ds.s is None:
        raise ValueError("cannot fit target statistics without targets")
    s_mean = float(ds.s.mean())
    s_std = float(ds.s.std())
    if normalize_s and s_std == 0:
        raise DegenerateDataError("targets have zero variance; cannot z-score")
    return NormStats(u_mean=u_mean, u_std=u_std, s_mean=s_mean, s_std=s_std,
                     normalize_u=normalize_u, normalize_s=normalize_s)


def normalize(ds: TripletDataset, normalize_u: bool = True,
              normalize_s: bool = True) -> TripletDataset:
    """Z-score inputs per sensor column and targets globally; y is untouched.

    Returns a new dataset carrying the fitted statistics so the transform can
    be undone and reused verbatim at prediction time.
    """
    if ds.norm is not None:
        raise ValueError("dataset is already normalized")
    stats = fit_norm_stats(ds, normalize_u=normalize_u, normalize_s=normalize_s)
    u = (ds.u - stats.u_mean) / stats.u_std if normalize_u else ds.u.copy()
    s = (ds.s - stats.s_mean) / stats.s_std if normalize_s else ds.s.copy()
    return replace(ds, u=u, s=s, norm=stats)


def denormalize(ds: TripletDataset) -> TripletDataset:
    if ds.norm is None:
        raise ValueError("dataset carries no normalization statistics")
    stats = ds.norm
    u = ds.u * stats.u_std + stats.u_mean if stats.normalize_u else ds.u.copy()
    s = ds.s * stats.s_std + stats.s_mean if stats.normalize_s else ds.s.copy()
    return replace(ds, u=u, s=s, norm=None)


def normalize_u_rows(u: np.ndarray, stats: Optional[NormStats]) -> np.ndarray:
    if stats is None or not stats.normalize_u:
        return u
    return (u - stats.u_mean) / stats.u_std


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def write_norm_block(w: ByteWriter, stats: NormStats):
    w.pack("B", (1 if stats.normalize_u else 0) | (2 if stats.normalize_s else 0))
    w.array(stats.u_mean)
    w.array(stats.u_std)
    w.pack("dd", stats.s_mean, stats.s_std)


def read_norm_block(r: ByteReader, sensors: int) -> NormStats:
    (flags,) = r.unpack("B")
    u_mean = r.array(sensors)
    u_std = r.array(sensors)
    s_mean, s_std = r.unpack("dd")
    return NormStats(u_mean=u_mean, u_std=u_std, s_mean=s_mean, s_std=s_std,
                     normalize_u=bool(flags & 1), normalize_s=bool(flags & 2))


def save(ds: TripletDataset, path) -> None:
    """Write the dataset with its header, float blocks, and trailing CRC32.

    The input block stores the `n` unique realizations; readers expand them
    `per_input`-fold using the header counts.
    """
    if ds.s is None:
        raise ValueError("query-only sets (no targets) are not persisted")
    w = ByteWriter()
    w.raw(DATASET_MAGIC)
    w.pack("B", DATASET_VERSION)
    w.pack("IIIBB", ds.n_inputs, ds.per_input, ds.sensors, ds.y_dim,
           1 if ds.norm is not None else 0)
    w.array(ds.u)
    w.array(ds.y)
    w.array(ds.s)
    if ds.norm is not None:
        write_norm_block(w, ds.norm)
    with open(path, "wb") as fh:
        fh.write(w.finish_with_crc())


def load(path) -> TripletDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    body = verify_crc(blob)
    r = ByteReader(body)
    check_magic(r, DATASET_MAGIC, "dataset")
    (version,) = r.unpack("B")
    if version != DATASET_VERSION:
        raise VersionError(f"dataset format version {version} unsupported "
                           f"(expected {DATASET_VERSION})")
    n, m, sensors, y_dim, norm_flag = r.unpack("IIIBB")
    u = r.array(n * sensors).reshape(n, sensors)
    y = r.array(n * m * y_dim).reshape(n * m, y_dim)
    s = r.array(n * m)
    norm = read_norm_block(r, sensors) if norm_flag else None
    r.expect_exhausted()
    ds = TripletDataset(u=u, y=y, s=s, per_input=m, norm=norm)
    if n > 1:
        first = ds.y[:m]
        ds.dense = bool(np.array_equal(first, ds.y[m:2 * m]))
    return ds


def to_csv(ds: TripletDataset, path) -> None:
    """Expanded delimited export with headers u_1..u_k, y_1..y_d, s."""
    cols = [f"u_{j + 1}" for j in range(ds.sensors)]
    cols += [f"y_{j + 1}" for j in range(ds.y_dim)]
    cols.append("s")
    blocks = [ds.u_matrix, ds.y]
    if ds.s is not None:
        blocks.append(ds.s[:, None])
    else:
        cols.pop()
    table = np.hstack(blocks)
    np.savetxt(path, table, delimiter=",", fmt="%.17g",
               header=",".join(cols), comments="")
