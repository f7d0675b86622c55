"""High-accuracy reference solvers for the four benchmark operators.

These produce the ground-truth targets used for training data and for
test-time error measurement:

- antiderivative:        ds/dt = u(t),                      s(0) = 0
- forced pendulum:       ds1/dt = s2, ds2/dt = -sin(s1)+u,  target s1
- diffusion-reaction:    s_t = D s_xx + k s^2 + u(x),       zero IC/BC
- advection-diffusion:   s_t + s_x - nu s_xx = 0,           periodic, IC given

All solvers are deterministic pure functions. Each public single-input
operation delegates to a `*_batch` core that integrates many realizations at
once; the batch cores are what the data-generation pipeline calls.

Between sensor points the input function is interpolated piecewise-linearly.
Time integration substeps never straddle an output grid point, so the
interpolation kinks always fall on step boundaries.
"""

import struct
import zlib
from dataclasses import dataclass
from math import ceil

import numpy as np
from scipy.linalg import solveh_banded

from .errors import ChecksumError, DivergenceError, FormatError
from .grf import SensorGrid

FIELD_MAGIC = b"VBDOFLD1"


@dataclass(frozen=True)
class InputFunction:
    """An input function known by its samples at the sensor locations."""

    grid: SensorGrid
    samples: np.ndarray
    interpolation: str = "linear"

    def __post_init__(self):
        vals = np.asarray(self.samples, dtype=np.float64)
        if vals.shape != (self.grid.count,):
            raise ValueError("samples must match the sensor grid")
        if not np.all(np.isfinite(vals)):
            raise ValueError("samples must be finite")
        if self.interpolation != "linear":
            raise ValueError(f"unknown interpolation rule {self.interpolation!r}")
        object.__setattr__(self, "samples", vals)

    def __call__(self, t):
        """Evaluate at `t`; exact at sensor points, linear in between."""
        return np.interp(t, self.grid.points, self.samples)


@dataclass
class OdeSolution:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("solution values must be finite")


@dataclass
class FieldSolution:
    x_grid: SensorGrid
    t_grid: np.ndarray
    values: np.ndarray  # (|x_grid|, |t_grid|)

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.x_grid.count, self.t_grid.size):
            raise ValueError("values must be (|x_grid|, |t_grid|)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


def _check_time_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=np.float64)
    if t.ndim != 1 or t.size < 1:
        raise ValueError("time grid must be a 1-D vector")
    if np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")
    if t[0] < -1e-12:
        raise ValueError("time grid must start at or after 0")
    return t


def _interp_rows(grid_points: np.ndarray, samples: np.ndarray, t: float) -> np.ndarray:
    """Piecewise-linear evaluation of every realization row at scalar time t."""
    j = int(np.searchsorted(grid_points, t, side="right")) - 1
    j = min(max(j, 0), grid_points.size - 2)
    w = (t - grid_points[j]) / (grid_points[j + 1] - grid_points[j])
    w = min(max(w, 0.0), 1.0)
    return (1.0 - w) * samples[:, j] + w * samples[:, j + 1]


def _segments(t_grid: np.ndarray):
    """Integration segments from t=0 through every output time."""
    bounds = t_grid if abs(t_grid[0]) <= 1e-15 else np.concatenate(([0.0], t_grid))
    emit = np.ones(bounds.size, dtype=bool)
    emit[0] = abs(t_grid[0]) <= 1e-15
    return bounds, emit


# ---------------------------------------------------------------------------
# antiderivative
# ---------------------------------------------------------------------------

def solve_antiderivative_batch(samples: np.ndarray, grid: SensorGrid, t_grid,
                               substeps: int = 4) -> np.ndarray:
    """Integrate ds/dt = u(t), s(0) = 0 for every row of `samples`.

    Classical fourth-order Runge-Kutta, which for pure quadrature reduces to
    Simpson's rule on each substep. `substeps` subdivisions per output
    interval keep the integration grid at least that much finer than the
    sensor grid when the two coincide.
    """
    t = _check_time_grid(t_grid)
    U = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if not np.all(np.isfinite(U)):
        raise ValueError("input samples must be finite")
    bounds, emit = _segments(t)
    out = np.empty((U.shape[0], t.size))
    acc = np.zeros(U.shape[0])
    col = 0
    if emit[0]:
        out[:, col] = acc
        col += 1
    for a, b in zip(bounds[:-1], bounds[1:]):
        n_sub = max(1, int(substeps))
        h = (b - a) / n_sub
        for i in range(n_sub):
            t0 = a + i * h
            k1 = _interp_rows(grid.points, U, t0)
            k2 = _interp_rows(grid.points, U, t0 + 0.5 * h)
            k4 = _interp_rows(grid.points, U, t0 + h)
            acc = acc + (h / 6.0) * (k1 + 4.0 * k2 + k4)
        out[:, col] = acc
        col += 1
    return out


def solve_antiderivative(u: InputFunction, t_grid, substeps: int = 4) -> OdeSolution:
    """Cumulative integral of one input function, evaluated on `t_grid`."""
    t = _check_time_grid(t_grid)
    vals = solve_antiderivative_batch(u.samples[None, :], u.grid, t, substeps=substeps)
    return OdeSolution(times=t, values=vals[0])


# ---------------------------------------------------------------------------
# forced gravity pendulum
# ---------------------------------------------------------------------------

def solve_pendulum_batch(samples: np.ndarray, grid: SensorGrid, t_grid,
                         s0=(0.0, 0.0), max_step: float = 1e-3) -> np.ndarray:
    """Fixed-step RK4 for the forced pendulum; returns the angle trajectory.

    `max_step` bounds the substep size; each output interval is split into
    equal substeps no longer than that.
    """
    t = _check_time_grid(t_grid)
    U = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if not np.all(np.isfinite(U)):
        raise ValueError("input samples must be finite")
    if max_step <= 0:
        raise ValueError("max_step must be positive")
    n = U.shape[0]
    s1 = np.full(n, float(s0[0]))
    s2 = np.full(n, float(s0[1]))

    def rhs(tau, a, b):
        return b, -np.sin(a) + _interp_rows(grid.points, U, tau)

    bounds, emit = _segments(t)
    out = np.empty((n, t.size))
    col = 0
    if emit[0]:
        out[:, col] = s1
        col += 1
    for a, b in zip(bounds[:-1], bounds[1:]):
        n_sub = max(1, ceil((b - a) / max_step - 1e-12))
        h = (b - a) / n_sub
        for i in range(n_sub):
            t0 = a + i * h
            k1a, k1b = rhs(t0, s1, s2)
            k2a, k2b = rhs(t0 + 0.5 * h, s1 + 0.5 * h * k1a, s2 + 0.5 * h * k1b)
            k3a, k3b = rhs(t0 + 0.5 * h, s1 + 0.5 * h * k2a, s2 + 0.5 * h * k2b)
            k4a, k4b = rhs(t0 + h, s1 + h * k3a, s2 + h * k3b)
            s1 = s1 + (h / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
            s2 = s2 + (h / 6.0) * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        out[:, col] = s1
        col += 1
    return out


def solve_pendulum(u: InputFunction, t_grid, s0=(0.0, 0.0),
                   max_step: float = 1e-3) -> OdeSolution:
    t = _check_time_grid(t_grid)
    vals = solve_pendulum_batch(u.samples[None, :], u.grid, t, s0=s0, max_step=max_step)
    return OdeSolution(times=t, values=vals[0])


# ---------------------------------------------------------------------------
# diffusion-reaction
# ---------------------------------------------------------------------------

def solve_diffusion_reaction_batch(samples: np.ndarray, x_grid: SensorGrid, t_grid,
                                   diffusion: float = 0.01, reaction: float = 0.01,
                                   blowup: float = 1e6) -> np.ndarray:
    """March s_t = D s_xx + k s^2 + u(x) with zero initial/boundary data.

    Second-order central differences in space. The diffusion term is treated
    with Crank-Nicolson; the reaction and forcing terms explicitly. Substeps
    are chosen so the explicit part satisfies dt <= 0.25 dx^2 / D.

    Returns an array of shape (n_realizations, |x_grid|, |t_grid|). Raises
    DivergenceError if the solution magnitude exceeds `blowup`.
    """
    t = _check_time_grid(t_grid)
    U = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if U.shape[1] != x_grid.count:
        raise ValueError("forcing samples must live on x_grid")
    if not np.all(np.isfinite(U)):
        raise ValueError("input samples must be finite")
    if diffusion <= 0:
        raise ValueError("diffusion coefficient must be positive")
    dx = x_grid.spacing
    n_real = U.shape[0]
    nx = x_grid.count
    n_int = nx - 2
    force = U[:, 1:-1].T  # (n_int, n_real), boundary nodes pinned at zero

    dt_limit = 0.25 * dx * dx / diffusion
    s = np.zeros((n_int, n_real))
    out = np.zeros((n_real, nx, t.size))
    bounds, emit = _segments(t)
    col = 1 if emit[0] else 0  # initial state is identically zero

    cache_dt = None
    ab = rhs_diag = rhs_off = None
    for a, b in zip(bounds[:-1], bounds[1:]):
        n_sub = max(1, ceil((b - a) / dt_limit - 1e-12))
        dt = (b - a) / n_sub
        if dt != cache_dt:
            lam = diffusion * dt / (dx * dx)
            # (I - lam/2 T) s_new = (I + lam/2 T) s + dt (k s^2 + u)
            ab = np.zeros((2, n_int))
            ab[0, 1:] = -0.5 * lam
            ab[1, :] = 1.0 + lam
            rhs_diag = 1.0 - lam
            rhs_off = 0.5 * lam
            cache_dt = dt
        for _ in range(n_sub):
            rhs = rhs_diag * s + dt * (reaction * s * s + force)
            rhs[:-1] += rhs_off * s[1:]
            rhs[1:] += rhs_off * s[:-1]
            s = solveh_banded(ab, rhs)
        peak = np.max(np.abs(s))
        if not np.isfinite(peak) or peak > blowup:
            raise DivergenceError(
                f"diffusion-reaction solution exceeded {blowup:g} by t={b:g}"
            )
        out[:, 1:-1, col] = s.T
        col += 1
    return out


def solve_diffusion_reaction(u: InputFunction, diffusion: float = 0.01,
                             reaction: float = 0.01, x_grid: SensorGrid = None,
                             t_grid=None, blowup: float = 1e6) -> FieldSolution:
    """Single-realization diffusion-reaction solve; forcing taken from `u`."""
    if x_grid is None:
        x_grid = u.grid
    t = _check_time_grid(t_grid)
    if x_grid.count == u.grid.count and np.array_equal(x_grid.points, u.grid.points):
        force = u.samples
    else:
        force = u(x_grid.points)
    vals = solve_diffusion_reaction_batch(force[None, :], x_grid, t,
                                          diffusion=diffusion, reaction=reaction,
                                          blowup=blowup)
    return FieldSolution(x_grid=x_grid, t_grid=t, values=vals[0])


# ---------------------------------------------------------------------------
# advection-diffusion (periodic, spectral)
# ---------------------------------------------------------------------------

def _check_periodic_grid(x_grid: SensorGrid) -> None:
    # uniform spacing with the right endpoint excluded: x_j = x_0 + j/N
    span = x_grid.points[-1] - x_grid.points[0] + x_grid.spacing
    if abs(span - 1.0) > 1e-9:
        raise ValueError("periodic grid must cover [0, 1) with N points of spacing 1/N")


def solve_advection_diffusion_batch(ic_samples: np.ndarray, x_grid: SensorGrid,
                                    t_grid, viscosity: float = 0.1) -> np.ndarray:
    """Exact-in-time Fourier evolution of s_t + s_x - nu s_xx = 0.

    Each discrete mode of the initial condition is multiplied by
    exp((-2*pi*i*m - nu*(2*pi*m)^2) * t); the zero mode is conserved exactly
    and every other mode decays monotonically.
    """
    t = _check_time_grid(t_grid)
    _check_periodic_grid(x_grid)
    IC = np.atleast_2d(np.asarray(ic_samples, dtype=np.float64))
    if IC.shape[1] != x_grid.count:
        raise ValueError("initial condition must live on x_grid")
    if not np.all(np.isfinite(IC)):
        raise ValueError("initial condition must be finite")
    n = x_grid.count
    modes = np.fft.fftfreq(n, d=1.0 / n)  # integer mode numbers
    rate = -2j * np.pi * modes - viscosity * (2.0 * np.pi * modes) ** 2
    coef = np.fft.fft(IC, axis=1)
    out = np.empty((IC.shape[0], n, t.size))
    for j, tj in enumerate(t):
        out[:, :, j] = np.fft.ifft(coef * np.exp(rate * tj), axis=1).real
    return out


def solve_advection_diffusion(ic: InputFunction, x_grid: SensorGrid = None,
                              t_grid=None, viscosity: float = 0.1) -> FieldSolution:
    """Single-realization advection-diffusion solve from initial profile `ic`."""
    if x_grid is None:
        x_grid = ic.grid
    t = _check_time_grid(t_grid)
    vals = solve_advection_diffusion_batch(ic.samples[None, :], x_grid, t,
                                           viscosity=viscosity)
    return FieldSolution(x_grid=x_grid, t_grid=t, values=vals[0])


# ---------------------------------------------------------------------------
# field persistence
# ---------------------------------------------------------------------------

def save_field(field: FieldSolution, path) -> None:
    """Binary dump: 16-byte header (magic, u32 rows, u32 cols), row-major f64."""
    rows, cols = field.values.shape
    payload = FIELD_MAGIC + struct.pack("<II", rows, cols)
    payload += field.values.astype("<f8").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(payload)


def load_field_values(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != FIELD_MAGIC:
        raise FormatError("not a field dump (bad magic or truncated header)")
    rows, cols = struct.unpack("<II", blob[8:16])
    expected = 16 + rows * cols * 8
    if len(blob) != expected:
        raise ChecksumError(f"field dump has {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob[16:], dtype="<f8").reshape(rows, cols).copy()
