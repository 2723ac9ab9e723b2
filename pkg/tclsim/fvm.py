# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
"""Finite volume discretization of the coupled Fokker-Planck system of a TCL population.

The hybrid state space is split in four segments: `0a = (left, t_min)` and
`0b = (t_min, t_max)` for units off, `1b = (t_min, t_max)` and `1c = (t_max, right)`
for units on. The off segments form one contiguous line, as do the on segments,
so density continuity at `t_min` (off) and `t_max` (on) holds through ordinary
interior faces. Each line has one zero flux truncation face and one absorbing
thermostat face, whose outflow is reinjected on the other line at the same
temperature.

Everything is linear in the density, which gives the bilinear model
`dF/dt = (A + B0 * eps0 + B1 * eps1) F`.
"""

from dataclasses import dataclass
import logging
import math
import typing as tp

from dora.log import LogProgress
import numpy as np
from scipy import sparse, special
from scipy.sparse import linalg as splinalg

from .model import (
    ActuationSignal, Direction, EpsPair, ParameterError, TclParams, actuation_at, diffusion,
    drift, masked_rate)

logger = logging.getLogger(__name__)

SEGMENTS = ['0a', '0b', '1b', '1c']
# Face value weights for (far upstream, upstream, downstream) cell averages.
UPWIND_QUADRATIC = (-1 / 6, 5 / 6, 1 / 3)
# RK4 is stable on the negative real axis down to about -2.78.
RK4_RADIUS = 2.5
UNDERSHOOT = -1e-3
# Mass drift past which a run is considered broken rather than inaccurate.
MASS_AUDIT = 1e-6


class GridError(ValueError):
    pass


class StabilityError(ArithmeticError):
    pass


@dataclass(frozen=True)
class FvmConfig:
    cells_per_band: int = 120
    left_pad: float = 1.
    right_pad: float = 1.
    cfl: float = 0.5
    max_substeps: int = 4096

    def __post_init__(self):
        if self.cells_per_band < 3:
            raise GridError(f"fvm.cells_per_band must be at least 3, got {self.cells_per_band}.")
        if not (self.left_pad > 0 and self.right_pad > 0):
            raise GridError("fvm.left_pad and fvm.right_pad must be positive.")
        if not 0 < self.cfl <= 1:
            raise GridError(f"fvm.cfl must be in (0, 1], got {self.cfl}.")
        if self.max_substeps < 1:
            raise GridError(f"fvm.max_substeps must be at least 1, got {self.max_substeps}.")


@dataclass(frozen=True)
class HybridGrid:
    """Uniform grid over the four segments.

    Flat state layout is `[0a | 0b | 1b | 1c]`, each segment ordered by increasing
    temperature, so the off line is the first `n_left + n_band` entries and the
    on line the remaining ones.
    """
    t_min: float
    t_max: float
    h: float
    n_left: int
    n_band: int
    n_right: int

    @property
    def left(self) -> float:
        return self.t_min - self.n_left * self.h

    @property
    def right(self) -> float:
        return self.t_max + self.n_right * self.h

    @property
    def n_cells(self) -> int:
        return self.n_left + 2 * self.n_band + self.n_right

    def segment(self, name: str) -> slice:
        sizes = [self.n_left, self.n_band, self.n_band, self.n_right]
        idx = SEGMENTS.index(name)
        start = sum(sizes[:idx])
        return slice(start, start + sizes[idx])

    def index(self, name: str, cell: int) -> int:
        """Flat index of `cell` (0 based, by temperature) in segment `name`."""
        part = self.segment(name)
        if not 0 <= cell < part.stop - part.start:
            raise IndexError(f"Segment {name} has no cell {cell}.")
        return part.start + cell

    def segment_edges(self, name: str) -> np.ndarray:
        if name == '0a':
            return self.t_min - self.h * np.arange(self.n_left, -1, -1)
        if name == '1c':
            return self.t_max + self.h * np.arange(self.n_right + 1)
        return np.linspace(self.t_min, self.t_max, self.n_band + 1)

    def line(self, mode: int) -> np.ndarray:
        """Flat indices of the off (0) or on (1) line, by increasing temperature."""
        split = self.n_left + self.n_band
        if mode == 0:
            return np.arange(split)
        return np.arange(split, self.n_cells)

    def line_edges(self, mode: int) -> np.ndarray:
        if mode == 0:
            return np.concatenate([self.segment_edges('0a')[:-1], self.segment_edges('0b')])
        return np.concatenate([self.segment_edges('1b'), self.segment_edges('1c')[1:]])

    @property
    def common_edges(self) -> np.ndarray:
        """Edges covering `(left, right)` shared by both modes."""
        return np.concatenate([self.segment_edges('0a')[:-1], self.segment_edges('0b'),
                               self.segment_edges('1c')[1:]])

    @property
    def cell_edges(self) -> np.ndarray:
        """`[n_cells, 2]` array of lower and upper edge of every flat cell."""
        bounds = []
        for mode in range(2):
            edges = self.line_edges(mode)
            bounds.append(np.stack([edges[:-1], edges[1:]], axis=1))
        return np.concatenate(bounds)

    @property
    def centers(self) -> np.ndarray:
        return self.cell_edges.mean(axis=1)

    @property
    def cell_modes(self) -> np.ndarray:
        modes = np.zeros(self.n_cells, dtype=np.int64)
        modes[self.line(1)] = 1
        return modes

    def split(self, values: np.ndarray) -> tp.Tuple[np.ndarray, np.ndarray]:
        """Off and on densities over `common_edges`, zero outside each line."""
        f0 = np.zeros(len(self.common_edges) - 1)
        f1 = np.zeros_like(f0)
        f0[:self.n_left + self.n_band] = values[self.line(0)]
        f1[self.n_left:] = values[self.line(1)]
        return f0, f1


@dataclass
class PdfState:
    values: np.ndarray
    time: float = 0.

    def mass(self, grid: HybridGrid) -> float:
        return float(np.sum(self.values) * grid.h)


@dataclass
class BilinearModel:
    A: sparse.csr_matrix
    B0: sparse.csr_matrix
    B1: sparse.csr_matrix
    grid: HybridGrid
    params: TclParams

    def operator(self, eps_pair: EpsPair) -> sparse.csr_matrix:
        eps0, eps1 = eps_pair
        if eps0 < 0 or eps1 < 0:
            raise ParameterError(f"Broadcast rates must be non negative, got {eps_pair}.")
        return (self.A + eps0 * self.B0 + eps1 * self.B1).tocsr()

    def mass(self, state: PdfState) -> float:
        return state.mass(self.grid)

    def on_fraction(self, state: PdfState) -> float:
        return float(np.sum(state.values[self.grid.line(1)]) * self.grid.h)

    def stable_step(self, cfl: float) -> float:
        """Largest substep allowed by the advective and diffusive CFL conditions."""
        speed = 0.
        for mode in range(2):
            edges = self.grid.line_edges(mode)
            speed = max(speed, float(np.max(np.abs(drift(self.params, mode, edges)))))
        sigma = diffusion(self.params, 0, self.grid.t_min)
        limits = [math.inf]
        if speed > 0:
            limits.append(self.grid.h / speed)
        if sigma > 0:
            limits.append(self.grid.h ** 2 / sigma ** 2)
        return cfl * min(limits)


@dataclass
class FluxField:
    """Face fluxes per line, positive towards increasing temperature [probability/s].

    `faces[mode]` are the face positions of the line, `advective[mode]` and
    `diffusive[mode]` the two flux components at those faces. The thermostat
    terms are outflows through the absorbing faces and the matching inflows
    reinjected on the other line.
    """
    faces: tp.Tuple[np.ndarray, np.ndarray]
    advective: tp.Tuple[np.ndarray, np.ndarray]
    diffusive: tp.Tuple[np.ndarray, np.ndarray]
    absorbed_t_max: float
    absorbed_t_min: float
    injected_t_max: float
    injected_t_min: float
    cell_balance: np.ndarray

    def total(self, mode: int) -> np.ndarray:
        return self.advective[mode] + self.diffusive[mode]


def build_grid(params: TclParams, left_pad: float, right_pad: float,
               cells_per_band: int) -> HybridGrid:
    """Uniform grid with every masking boundary on a cell face.

    Pads are rounded to whole cells, the achieved pads are `grid.t_min - grid.left`
    and `grid.right - grid.t_max`.
    """
    if not (left_pad > 0 and right_pad > 0):
        raise GridError("Grid pads must be positive.")
    if cells_per_band < 3:
        raise GridError(f"At least 3 cells per band are needed, got {cells_per_band}.")
    h = params.band / cells_per_band
    for name in ['delta_t0', 'delta_t1']:
        if not _aligned(getattr(params, name), h):
            hint = _aligned_counts(params, cells_per_band)
            raise GridError(
                f"params.{name}={getattr(params, name)} is not a whole number of cells of "
                f"width {h:.6g} ({cells_per_band} cells per band). "
                f"Nearest valid cells_per_band: {hint}.")
    n_left = max(1, int(round(left_pad / h)))
    n_right = max(1, int(round(right_pad / h)))
    grid = HybridGrid(params.t_min, params.t_max, h, n_left, cells_per_band, n_right)
    logger.debug("Grid: h=%.6g, %d cells, domain (%.4f, %.4f)",
                 h, grid.n_cells, grid.left, grid.right)
    return grid


def _aligned(width: float, h: float) -> bool:
    ratio = width / h
    return abs(ratio - round(ratio)) <= 1e-9 * max(1., ratio)


def _aligned_counts(params: TclParams, cells_per_band: int) -> tp.List[int]:
    found = []
    for count in range(cells_per_band - 1, 2, -1):
        h = params.band / count
        if _aligned(params.delta_t0, h) and _aligned(params.delta_t1, h):
            found.append(count)
            break
    for count in range(cells_per_band + 1, 64 * cells_per_band):
        h = params.band / count
        if _aligned(params.delta_t0, h) and _aligned(params.delta_t1, h):
            found.append(count)
            break
    return found


def reconstruct_face(averages: tp.Sequence[tp.Optional[float]], velocity: float) -> float:
    """Face value from the cell averages `(F[i-1], F[i], F[i+1], F[i+2])` around the
    face between cells `i` and `i + 1`.

    Quadratic upstream-biased reconstruction, exact for polynomials of degree 2.
    Missing neighbours (`None`) near a line end fall back to first order upwind.
    """
    far_left, left, right, far_right = averages
    if velocity >= 0:
        far, upstream, downstream = far_left, left, right
    else:
        far, upstream, downstream = far_right, right, left
    assert upstream is not None
    if far is None or downstream is None:
        return upstream
    weights = UPWIND_QUADRATIC
    return weights[0] * far + weights[1] * upstream + weights[2] * downstream


def _upwind_stencil(face: int, n: int, velocity: float) -> tp.List[tp.Tuple[int, float]]:
    # face k separates local cells k - 1 and k.
    if velocity >= 0:
        if face >= 2:
            return list(zip([face - 2, face - 1, face], UPWIND_QUADRATIC))
        return [(face - 1, 1.)]
    if face + 1 <= n - 1:
        return list(zip([face + 1, face, face - 1], UPWIND_QUADRATIC))
    return [(face, 1.)]


def bernoulli(x: float) -> float:
    """`x / (exp(x) - 1)`, continuous at 0."""
    return float(1 / special.exprel(x))


def absorbing_coefficient(velocity: float, diff: float, distance: float) -> float:
    """Outflow per unit of boundary cell density through a face where the density is 0.

    Exponentially fitted flux between the cell center and the face, `velocity` is the
    outward drift and `diff` the diffusion coefficient `sigma^2 / 2`.
    """
    if diff == 0:
        return max(velocity, 0.)
    return diff / distance * bernoulli(-velocity * distance / diff)


@dataclass
class _LineOperators:
    faces: np.ndarray
    advective: sparse.csr_matrix    # face fluxes from the flat state
    diffusive: sparse.csr_matrix
    divergence: sparse.csr_matrix   # cell rates from face fluxes
    reinjection: sparse.csr_matrix  # cell rates on the other line from the absorbing face


def _line_operators(grid: HybridGrid, params: TclParams, mode: int) -> _LineOperators:
    cells = grid.line(mode)
    edges = grid.line_edges(mode)
    centers = (edges[1:] + edges[:-1]) / 2
    n = len(cells)
    h = grid.h
    shape = (n + 1, grid.n_cells)
    adv: tp.Tuple[list, list, list] = ([], [], [])
    dif: tp.Tuple[list, list, list] = ([], [], [])

    def _add(target, face, col, value):
        target[0].append(face)
        target[1].append(col)
        target[2].append(value)

    # off line absorbs at t_max (last face), on line at t_min (first face).
    absorbing = n if mode == 0 else 0
    for face in range(n + 1):
        x = edges[face]
        velocity = drift(params, mode, x)
        if face in (0, n):
            if face != absorbing:
                continue
            inner = cells[n - 1] if face == n else cells[0]
            sign = 1. if face == n else -1.
            outward = sign * velocity
            diff = diffusion(params, mode, x) ** 2 / 2
            total = absorbing_coefficient(outward, diff, h / 2)
            upwind = max(outward, 0.)
            _add(adv, face, inner, sign * upwind)
            _add(dif, face, inner, sign * (total - upwind))
            continue
        for local, weight in _upwind_stencil(face, n, velocity):
            _add(adv, face, cells[local], velocity * weight)
        diff_left = diffusion(params, mode, centers[face - 1]) ** 2 / 2
        diff_right = diffusion(params, mode, centers[face]) ** 2 / 2
        _add(dif, face, cells[face - 1], diff_left / h)
        _add(dif, face, cells[face], -diff_right / h)

    advective = sparse.coo_matrix((adv[2], (adv[0], adv[1])), shape=shape).tocsr()
    diffusive = sparse.coo_matrix((dif[2], (dif[0], dif[1])), shape=shape).tocsr()

    rows = np.concatenate([cells, cells])
    cols = np.concatenate([np.arange(n), np.arange(1, n + 1)])
    vals = np.concatenate([np.full(n, 1 / h), np.full(n, -1 / h)])
    divergence = sparse.coo_matrix((vals, (rows, cols)), shape=(grid.n_cells, n + 1)).tocsr()

    # Absorbed flux enters the receiving line at the same temperature, shared by
    # the two cells of that face.
    if mode == 0:
        targets = [grid.index('1b', grid.n_band - 1), grid.index('1c', 0)]
        share = 0.5 / h
    else:
        targets = [grid.index('0a', grid.n_left - 1), grid.index('0b', 0)]
        share = -0.5 / h
    reinjection = sparse.coo_matrix(
        ([share, share], (targets, [absorbing, absorbing])),
        shape=(grid.n_cells, n + 1)).tocsr()
    return _LineOperators(edges, advective, diffusive, divergence, reinjection)


def assemble_A(grid: HybridGrid, params: TclParams) -> sparse.csr_matrix:
    """Transport operator: advection, diffusion, absorbing thermostat faces and
    reinjection. Columns sum to zero."""
    A = sparse.csr_matrix((grid.n_cells, grid.n_cells))
    for mode in range(2):
        ops = _line_operators(grid, params, mode)
        fluxes = ops.advective + ops.diffusive
        A = A + (ops.divergence + ops.reinjection) @ fluxes
    A = A.tocsr()
    A.sum_duplicates()
    return A


def assemble_B(grid: HybridGrid, params: TclParams, direction: Direction) -> sparse.csr_matrix:
    """Rate switch operator for a unit broadcast in `direction`.

    `Direction.ON` gives B1 (0b to 1b), `Direction.OFF` gives B0 (1b to 0b). Only
    cells inside the safe zone of `direction` contribute.
    """
    source = '0b' if direction is Direction.ON else '1b'
    target = '1b' if direction is Direction.ON else '0b'
    centers = grid.segment_edges(source)
    centers = (centers[1:] + centers[:-1]) / 2
    rows: tp.List[int] = []
    cols: tp.List[int] = []
    vals: tp.List[float] = []
    for cell, center in enumerate(centers):
        rate = masked_rate(1., float(center), direction, params)
        if rate == 0:
            continue
        src = grid.index(source, cell)
        dst = grid.index(target, cell)
        rows += [src, dst]
        cols += [src, src]
        vals += [-rate, rate]
    return sparse.coo_matrix((vals, (rows, cols)), shape=(grid.n_cells, grid.n_cells)).tocsr()


def assemble(params: TclParams, config: FvmConfig) -> BilinearModel:
    grid = build_grid(params, config.left_pad, config.right_pad, config.cells_per_band)
    return BilinearModel(
        A=assemble_A(grid, params),
        B0=assemble_B(grid, params, Direction.OFF),
        B1=assemble_B(grid, params, Direction.ON),
        grid=grid, params=params)


def substeps(model: BilinearModel, operator: sparse.csr_matrix, dt_macro: float,
             cfl: float = 0.5) -> int:
    """Number of RK4 substeps for one macro step, honoring the CFL step and the
    RK4 stability radius of the current operator."""
    count = math.ceil(dt_macro / model.stable_step(cfl) - 1e-12)
    radius = splinalg.norm(operator, 1)
    count = max(count, math.ceil(dt_macro * radius / RK4_RADIUS - 1e-12))
    return max(1, count)


def step(model: BilinearModel, state: PdfState, eps_pair: EpsPair, dt_macro: float,
         cfl: float = 0.5, max_substeps: int = 4096) -> PdfState:
    """Advance by one broadcast interval with classical RK4 substeps."""
    if not dt_macro > 0:
        raise ParameterError(f"dt_macro must be positive, got {dt_macro}.")
    operator = model.operator(eps_pair)
    count = substeps(model, operator, dt_macro, cfl)
    if count > max_substeps:
        raise StabilityError(
            f"Step of {dt_macro}s needs {count} substeps, more than fvm.max_substeps="
            f"{max_substeps}. Use fewer cells or raise the limit.")
    tau = dt_macro / count
    values = state.values
    for _ in range(count):
        k1 = operator @ values
        k2 = operator @ (values + tau / 2 * k1)
        k3 = operator @ (values + tau / 2 * k2)
        k4 = operator @ (values + tau * k3)
        values = values + tau / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(values)):
        raise StabilityError(f"Non finite density after step at t={state.time + dt_macro}.")
    return PdfState(values, state.time + dt_macro)


def stationary(model: BilinearModel) -> PdfState:
    """Null vector of A normalized to unit mass.

    Raises `StabilityError` when the density dips below `UNDERSHOOT`, which happens on
    grids too coarse for the noise level.
    """
    grid = model.grid
    system = model.A.tolil()
    # A has zero column sums, so any one row is redundant: swap it for the mass constraint.
    system[0, :] = np.full(grid.n_cells, grid.h)
    rhs = np.zeros(grid.n_cells)
    rhs[0] = 1.
    values = splinalg.spsolve(system.tocsc(), rhs)
    if not np.all(np.isfinite(values)):
        raise StabilityError("Stationary solve failed, the operator is singular.")
    if values.min() < UNDERSHOOT:
        raise StabilityError(
            f"Stationary density undershoots to {values.min():.3g} (limit {UNDERSHOOT}), "
            f"the grid is too coarse: raise fvm.cells_per_band (currently {grid.n_band}).")
    return PdfState(values, 0.)


def power_from_state(state: PdfState, grid: HybridGrid, params: TclParams) -> float:
    """Expected power of one unit [W]."""
    return params.rated_power * float(np.sum(state.values[grid.line(1)]) * grid.h)


def flux_diagnostics(state: PdfState, grid: HybridGrid, params: TclParams) -> FluxField:
    faces = []
    advective = []
    diffusive = []
    absorbed = []
    injected = []
    balance = np.zeros(grid.n_cells)
    for mode in range(2):
        ops = _line_operators(grid, params, mode)
        adv = ops.advective @ state.values
        dif = ops.diffusive @ state.values
        total = adv + dif
        faces.append(ops.faces)
        advective.append(adv)
        diffusive.append(dif)
        absorbed.append(total[-1] if mode == 0 else -total[0])
        reinjected = ops.reinjection @ total
        injected.append(float(np.sum(reinjected) * grid.h))
        balance += ops.divergence @ total + reinjected
    return FluxField(
        faces=(faces[0], faces[1]),
        advective=(advective[0], advective[1]),
        diffusive=(diffusive[0], diffusive[1]),
        absorbed_t_max=float(absorbed[0]),
        absorbed_t_min=float(absorbed[1]),
        injected_t_max=injected[0],
        injected_t_min=injected[1],
        cell_balance=balance)


@dataclass
class PdeResult:
    times: np.ndarray
    power: np.ndarray        # per unit [W]
    on_fraction: np.ndarray
    snapshots: tp.List[PdfState]
    mass_drift: float        # largest |mass - initial mass| over the run
    min_value: float


def simulate_pde(model: BilinearModel, state: PdfState, signal: ActuationSignal,
                 horizon: float, snapshot_every: tp.Optional[float] = None,
                 cfl: float = 0.5, max_substeps: int = 4096) -> PdeResult:
    """Integrate the bilinear model over `horizon`, one macro step per broadcast sample.

    Past the end of `signal` the last sample is held. Power is recorded at every
    macro step, density snapshots every `snapshot_every` seconds (default: every
    macro step).
    """
    period = signal.period
    count = int(round(horizon / period))
    if count < 1 or abs(count * period - horizon) > 1e-9 * horizon:
        raise ParameterError(
            f"Horizon ({horizon}) must be a whole multiple of the broadcast period ({period}).")
    every = int(round((snapshot_every or period) / period))
    if every < 1 or abs(every * period - (snapshot_every or period)) > 1e-9 * period:
        raise ParameterError("snapshot_every must be a whole multiple of the broadcast period.")
    if not signal.covers(horizon):
        logger.warning("Signal covers %.1fs out of %.1fs, holding the last sample.",
                       signal.duration, horizon)

    initial = model.mass(state)
    times = [state.time]
    on_fraction = [model.on_fraction(state)]
    snapshots = [state]
    drift_max = 0.
    min_value = float(state.values.min())
    logprog = LogProgress(logger, range(count), updates=10, name='PDE')
    for k in logprog:
        eps_pair = actuation_at(signal, k * period)
        state = step(model, state, eps_pair, period, cfl, max_substeps)
        if not np.all(np.isfinite(state.values)):
            raise StabilityError(f"Non finite density at t={state.time:.1f}s.")
        times.append(state.time)
        on_fraction.append(model.on_fraction(state))
        drift_max = max(drift_max, abs(model.mass(state) - initial))
        if drift_max > MASS_AUDIT:
            raise StabilityError(
                f"Mass audit failed at t={state.time:.1f}s: drift {drift_max:.3g}.")
        low = float(state.values.min())
        if low < UNDERSHOOT and low < min_value:
            logger.warning("Density undershoot %.3g at t=%.1f", low, state.time)
        min_value = min(min_value, low)
        if (k + 1) % every == 0:
            snapshots.append(state)
    fraction = np.asarray(on_fraction)
    return PdeResult(np.asarray(times), fraction * model.params.rated_power, fraction,
                     snapshots, drift_max, min_value)
