# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
"""Co-simulation of the Monte Carlo and finite volume backends on the same broadcast,
with closed form oracles for the noise free limit cycle.
"""

from concurrent import futures
from dataclasses import asdict, dataclass, field
import logging
import math
import time
import typing as tp

from dora.log import bold
import numpy as np

from .fvm import BilinearModel, HybridGrid, PdeResult, assemble, simulate_pde, stationary
from .model import TclParams
from .montecarlo import (
    EmpiricalDensity, McResult, burn_in, initial_ensemble, simulate_population, steps_per_period)
from .scenario import Scenario
from .utils import DummyPoolExecutor, l1_distance, rebin

logger = logging.getLogger(__name__)


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class LimitCycle:
    t_off: float
    t_on: float

    @property
    def duty(self) -> float:
        return self.t_on / (self.t_on + self.t_off)

    @property
    def period(self) -> float:
        return self.t_on + self.t_off


def transit_time(params: TclParams, mode: int, start: float, end: float) -> float:
    """Time for the noise free temperature of `mode` to go from `start` to `end`."""
    if params.a == 0:
        speed = params.offset(mode)
        duration = (end - start) / speed if speed else math.inf
    else:
        equilibrium = params.equilibrium(mode)
        ratio = (end - equilibrium) / (start - equilibrium) if start != equilibrium else 0.
        duration = math.log(ratio) / params.a if ratio > 0 else math.inf
    if not (math.isfinite(duration) and duration > 0):
        state = 'off' if mode == 0 else 'on'
        raise OracleError(
            f"In the {state} mode the temperature never goes from {start} to {end}: "
            f"the drift equilibrium is {_equilibrium_text(params, mode)}.")
    return duration


def _equilibrium_text(params: TclParams, mode: int) -> str:
    if params.a == 0:
        return "undefined (a = 0)"
    return f"{params.equilibrium(mode):.4f}"


def analytic_limit_cycle(params: TclParams) -> LimitCycle:
    """Leg durations of the deterministic (`sigma = 0`) thermostat cycle."""
    return LimitCycle(t_off=transit_time(params, 0, params.t_min, params.t_max),
                      t_on=transit_time(params, 1, params.t_max, params.t_min))


def noise_floor(p: float, n: int) -> float:
    """Standard error of an on fraction `p` estimated from `n` units."""
    return math.sqrt(max(p * (1 - p), 0.) / n)


def comparison_edges(grid: HybridGrid, cells_per_band: int) -> np.ndarray:
    """Coarse edges nesting the FVM grid and covering its whole domain."""
    width = (grid.t_max - grid.t_min) / cells_per_band
    below = math.ceil(grid.n_left * grid.h / width - 1e-9)
    above = math.ceil(grid.n_right * grid.h / width - 1e-9)
    band = np.linspace(grid.t_min, grid.t_max, cells_per_band + 1)
    return np.concatenate([grid.t_min - width * np.arange(below, 0, -1), band,
                           grid.t_max + width * np.arange(1, above + 1)])


def pde_density(grid: HybridGrid, values: np.ndarray, time: float) -> EmpiricalDensity:
    """FVM state in the histogram layout of the Monte Carlo backend."""
    f0, f1 = grid.split(values)
    return EmpiricalDensity(grid.common_edges, f0, f1, time)


def density_distance(first: EmpiricalDensity, second: EmpiricalDensity,
                     edges: np.ndarray) -> tp.Tuple[float, float]:
    """Per mode L1 distance after rebinning both densities on `edges`."""
    distances = []
    for name in ['f0', 'f1']:
        a = rebin(first.edges, getattr(first, name), edges)
        b = rebin(second.edges, getattr(second, name), edges)
        distances.append(l1_distance(edges, a, b))
    return distances[0], distances[1]


def operator_column_sums(model: BilinearModel) -> tp.Dict[str, float]:
    """Largest column sum of each operator, relative to the column norm for A."""
    out = {}
    for name in ['A', 'B0', 'B1']:
        matrix = getattr(model, name).tocsc()
        sums = np.abs(np.asarray(matrix.sum(axis=0))).ravel()
        if name == 'A':
            norms = np.asarray(abs(matrix).sum(axis=0)).ravel()
            sums = sums / np.maximum(norms, 1e-300)
        out[name] = float(sums.max()) if len(sums) else 0.
    return out


@dataclass
class ComparisonReport:
    scenario: str
    n_units: int
    seed: int
    signal_checksum: str
    clamped: bool
    power_rmse: float           # W, whole population
    power_rel_rmse: float       # relative to the mean Monte Carlo power
    mean_mc_power: float
    noise_floor: float          # absolute on fraction
    stationary_on_fraction: float
    snapshot_times: tp.List[float] = field(default_factory=list)
    l1_off: tp.List[float] = field(default_factory=list)
    l1_on: tp.List[float] = field(default_factory=list)
    mass_drift: float = 0.
    min_density: float = 0.
    column_sums: tp.Dict[str, float] = field(default_factory=dict)
    limit_cycle: tp.Dict[str, tp.Any] = field(default_factory=dict)
    events: tp.Dict[str, tp.Any] = field(default_factory=dict)
    checks: tp.Dict[str, bool] = field(default_factory=dict)
    runtime: tp.Dict[str, float] = field(default_factory=dict)

    @property
    def max_l1(self) -> float:
        return max(self.l1_off + self.l1_on, default=0.)

    def to_dict(self) -> dict:
        out = asdict(self)
        out['max_l1'] = self.max_l1
        if not self.snapshot_times:
            out['notes'] = 'no density snapshots were taken'
        return out


@dataclass
class ComparisonResult:
    report: ComparisonReport
    model: BilinearModel
    mc: McResult
    pde: PdeResult
    mc_densities: tp.List[EmpiricalDensity]
    pde_densities: tp.List[EmpiricalDensity]


def _limit_cycle_summary(params: TclParams) -> tp.Dict[str, tp.Any]:
    try:
        cycle = analytic_limit_cycle(params)
    except OracleError as exc:
        return {'error': str(exc)}
    return {'t_off': cycle.t_off, 't_on': cycle.t_on, 'duty': cycle.duty,
            'duty_power': cycle.duty * params.rated_power}


def run_comparison(scenario: Scenario, workers: int = 0, progress: bool = False,
                   model: tp.Optional[BilinearModel] = None) -> ComparisonResult:
    """Run both backends from the FVM stationary density and compare them.

    The Monte Carlo population is drawn from the stationary density, then relaxed
    for `sim.burn_in` seconds with a zero broadcast.
    """
    params = scenario.params
    sim = scenario.sim
    signal = scenario.signal
    begin = time.time()
    if model is None:
        model = assemble(params, scenario.fvm)
    grid = model.grid
    start = stationary(model)
    assembled = time.time()

    ensemble = initial_ensemble(sim, params, grid.cell_edges, grid.cell_modes,
                                start.values * grid.h)
    burn_in(ensemble, sim, workers)

    runtime = {'assemble': assembled - begin}

    def _run_pde():
        now = time.time()
        result = simulate_pde(model, start, signal, sim.horizon, sim.snapshot_every,
                              scenario.fvm.cfl, scenario.fvm.max_substeps)
        runtime['pde'] = time.time() - now
        return result

    def _run_mc():
        now = time.time()
        result = simulate_population(sim, params, signal, ensemble, edges=grid.common_edges,
                                     locked_dwell_bins=scenario.locked_dwell_bins,
                                     workers=workers, progress=progress)
        runtime['mc'] = time.time() - now
        return result

    pool = futures.ThreadPoolExecutor(2) if workers > 1 else DummyPoolExecutor()
    with pool:
        pending_pde = pool.submit(_run_pde)
        pending_mc = pool.submit(_run_mc)
        pde = pending_pde.result()
        mc = pending_mc.result()

    interval = steps_per_period(signal.period, sim.dt)
    mc_fraction = mc.on_fraction[::interval]
    if len(mc_fraction) != len(pde.on_fraction):
        raise OracleError(
            f"Backends produced {len(mc_fraction)} and {len(pde.on_fraction)} power samples.")
    mc_power = mc_fraction * params.rated_power
    pde_power = pde.on_fraction * params.rated_power
    rmse = float(np.sqrt(np.mean((mc_power - pde_power) ** 2)))
    mean_mc = float(np.mean(mc_power))
    p_inf = model.on_fraction(start)

    mc_densities = mc.snapshots
    pde_densities = [pde_density(grid, state.values, state.time) for state in pde.snapshots]
    if len(mc_densities) != len(pde_densities):
        raise OracleError(
            f"Backends produced {len(mc_densities)} and {len(pde_densities)} snapshots.")
    edges = comparison_edges(grid, scenario.compare.cells_per_band)
    l1_off = []
    l1_on = []
    for mc_density, pde_snapshot in zip(mc_densities, pde_densities):
        off, on = density_distance(mc_density, pde_snapshot, edges)
        l1_off.append(off)
        l1_on.append(on)

    report = ComparisonReport(
        scenario=scenario.name,
        n_units=sim.n_units,
        seed=sim.master_seed,
        signal_checksum=signal.checksum(),
        clamped=scenario.clamped,
        power_rmse=rmse * sim.n_units,
        power_rel_rmse=rmse / mean_mc if mean_mc > 0 else math.inf,
        mean_mc_power=mean_mc * sim.n_units,
        noise_floor=noise_floor(p_inf, sim.n_units),
        stationary_on_fraction=p_inf,
        snapshot_times=[float(d.time) for d in pde_densities],
        l1_off=l1_off,
        l1_on=l1_on,
        mass_drift=pde.mass_drift + abs(model.mass(start) - 1),
        min_density=pde.min_value,
        column_sums=operator_column_sums(model),
        limit_cycle=_limit_cycle_summary(params),
        events={'thermostat': list(mc.events.thermostat), 'rate': list(mc.events.rate),
                'eligible': list(mc.events.eligible)},
        runtime=runtime)
    limits = scenario.compare
    report.checks = {
        'power': report.power_rel_rmse <= limits.max_rel_rmse,
        'density': report.max_l1 <= limits.max_l1,
        'mass': report.mass_drift <= limits.max_mass_drift,
    }
    logger.info(bold(
        f"Comparison {scenario.name} | rel. RMSE {report.power_rel_rmse:.4f} | "
        f"max L1 {report.max_l1:.4f} | mass drift {report.mass_drift:.2e}"))
    return ComparisonResult(report, model, mc, pde, mc_densities, pde_densities)
