# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
"""Monte Carlo simulation of a population of stochastic hybrid TCL units.

Units are advanced with a fixed sample period `dt`: Euler-Maruyama step of the
temperature, thermostat transition, then (when no thermostat switch fired) a
Bernoulli rate-switch trial with success probability `1 - exp(-lambda * dt)`.

The ensemble is split in fixed size blocks. Each block owns its random streams,
so results only depend on `master_seed` and `block_size`, never on the number
of workers advancing the blocks.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
import typing as tp

import numpy as np
import torch as th
import tqdm

from .model import (
    ActuationSignal, Direction, EpsPair, HybridState, TclParams, actuation_at,
    diffusion, drift, in_safe_zone, masked_rate, rate_function)
from .utils import DummyPoolExecutor

logger = logging.getLogger(__name__)

NOISE_STREAM = 0
SWITCH_STREAM = 1
INIT_STREAM = 2


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.
    horizon: float = 7200.
    n_units: int = 10000
    master_seed: int = 42
    dwell_enabled: bool = False
    actuated: bool = True
    burn_in: float = 3600.
    block_size: int = 1000
    snapshot_every: tp.Optional[float] = None  # defaults to the broadcast period

    def __post_init__(self):
        if not self.dt > 0:
            raise EnsembleError(f"sim.dt must be positive, got {self.dt}.")
        if self.horizon < self.dt:
            raise EnsembleError(
                f"sim.horizon ({self.horizon}) must be at least sim.dt ({self.dt}).")
        if self.n_units < 1:
            raise EnsembleError(f"sim.n_units must be at least 1, got {self.n_units}.")
        if self.block_size < 1:
            raise EnsembleError(f"sim.block_size must be at least 1, got {self.block_size}.")
        if self.burn_in < 0:
            raise EnsembleError(f"sim.burn_in must be non negative, got {self.burn_in}.")
        if self.snapshot_every is not None and not self.snapshot_every > 0:
            raise EnsembleError(f"sim.snapshot_every must be positive, got {self.snapshot_every}.")


def block_seed(master_seed: int, block: int, stream: int) -> int:
    """Seed of one random stream of one block, derived from the master seed."""
    sequence = np.random.SeedSequence(master_seed, spawn_key=(block, stream))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


class RngStream:
    """Noise and switch generators of one block of units."""
    def __init__(self, master_seed: int, block: int):
        self.block = block
        self.noise = th.Generator().manual_seed(block_seed(master_seed, block, NOISE_STREAM))
        self.switch = th.Generator().manual_seed(block_seed(master_seed, block, SWITCH_STREAM))

    def normal(self, size: int) -> th.Tensor:
        return th.randn(size, generator=self.noise, dtype=th.float64)

    def uniform(self, size: int) -> th.Tensor:
        return th.rand(size, generator=self.switch, dtype=th.float64)


@dataclass
class EventLog:
    """Switch counters. Index 0 counts switch-on events, index 1 switch-off events."""
    thermostat: tp.List[int] = field(default_factory=lambda: [0, 0])
    rate: tp.List[int] = field(default_factory=lambda: [0, 0])
    eligible: tp.List[int] = field(default_factory=lambda: [0, 0])
    # smallest dwell of a unit at a rate switch, indexed by the mode it left.
    min_dwell: tp.List[float] = field(default_factory=lambda: [math.inf, math.inf])

    def merge(self, other: 'EventLog'):
        for idx in range(2):
            self.thermostat[idx] += other.thermostat[idx]
            self.rate[idx] += other.rate[idx]
            self.eligible[idx] += other.eligible[idx]
            self.min_dwell[idx] = min(self.min_dwell[idx], other.min_dwell[idx])

    def frequency(self, direction: Direction) -> float:
        idx = 0 if direction is Direction.ON else 1
        if self.eligible[idx] == 0:
            return 0.
        return self.rate[idx] / self.eligible[idx]

    def dwell_violations(self, params: TclParams) -> int:
        return sum(int(self.min_dwell[mode] < params.min_dwell(mode)) for mode in range(2))


@dataclass
class Ensemble:
    params: TclParams
    temps: th.Tensor
    modes: th.Tensor
    dwell: th.Tensor
    streams: tp.List[RngStream]
    block_size: int
    clock: float = 0.

    @property
    def n_units(self) -> int:
        return len(self.temps)

    @property
    def unit_seeds(self) -> th.Tensor:
        """Stream identifier of every unit."""
        return th.arange(self.n_units) // self.block_size

    def blocks(self) -> tp.Iterator[tp.Tuple[slice, RngStream]]:
        for stream in self.streams:
            start = stream.block * self.block_size
            yield slice(start, min(start + self.block_size, self.n_units)), stream

    def unit(self, index: int) -> HybridState:
        return HybridState(float(self.temps[index]), int(self.modes[index]),
                           float(self.dwell[index]))


@dataclass
class EmpiricalDensity:
    edges: np.ndarray
    f0: np.ndarray
    f1: np.ndarray
    time: float

    @property
    def centers(self) -> np.ndarray:
        return (self.edges[1:] + self.edges[:-1]) / 2

    def mass(self) -> float:
        widths = np.diff(self.edges)
        return float(np.sum(self.f0 * widths) + np.sum(self.f1 * widths))


@dataclass
class LockedDensityEstimate:
    """Densities of units still inside their minimum dwell time, per K per s.

    `masses[mode]` has shape `[len(temp_edges) - 1, len(dwell_edges[mode]) - 1]`.
    """
    temp_edges: np.ndarray
    dwell_edges: tp.Tuple[np.ndarray, np.ndarray]
    masses: tp.Tuple[np.ndarray, np.ndarray]
    time: float

    def marginal(self, mode: int) -> np.ndarray:
        """Integral of `L_mode` over the dwell axis, per K."""
        return self.masses[mode] @ np.diff(self.dwell_edges[mode])

    def locked_fraction(self, mode: int) -> float:
        return float(np.sum(self.marginal(mode) * np.diff(self.temp_edges)))

    def responsive(self, mode: int, density: EmpiricalDensity) -> np.ndarray:
        """Part of the mode density still reachable by the broadcast."""
        full = density.f1 if mode else density.f0
        return full - self.marginal(mode)


@dataclass
class McResult:
    times: np.ndarray
    power: np.ndarray
    on_fraction: np.ndarray
    snapshots: tp.List[EmpiricalDensity]
    locked: tp.List[LockedDensityEstimate]
    events: EventLog
    n_units: int
    # per unit mode after every step, only kept when `record_modes=True`.
    modes: tp.Optional[np.ndarray] = None
    temps: tp.Optional[np.ndarray] = None


def em_step(state: HybridState, params: TclParams, dt: float, gaussian_draw: float,
            time: float = 0.) -> float:
    """Euler-Maruyama update of the temperature with the mode held fixed."""
    if not dt > 0:
        raise EnsembleError(f"dt must be positive, got {dt}.")
    return _em_update(params, state.mode, state.temp, dt, gaussian_draw, time)


def _em_update(params: TclParams, mode, temp, dt: float, draw, time: float = 0.):
    return (temp + drift(params, mode, temp, time) * dt +
            diffusion(params, mode, temp, time) * math.sqrt(dt) * draw)


def rate_switch_trial(state: HybridState, eps_pair: EpsPair, params: TclParams, dt: float,
                      uniform_draw: float, dwell_enabled: bool = False) -> bool:
    """Bernoulli rate switch of one unit, only the rate relevant to its mode applies."""
    if not dt > 0:
        raise EnsembleError(f"dt must be positive, got {dt}.")
    eps0, eps1 = eps_pair
    if state.mode == 0:
        rate = masked_rate(eps1, state.temp, Direction.ON, params)
    else:
        rate = masked_rate(eps0, state.temp, Direction.OFF, params)
    if dwell_enabled and state.dwell < params.min_dwell(state.mode):
        return False
    return uniform_draw < -math.expm1(-rate * dt)


def thermostat_modes(temps: th.Tensor, modes: th.Tensor, params: TclParams) -> th.Tensor:
    switch_on = (modes == 0) & (temps >= params.t_max)
    switch_off = (modes == 1) & (temps <= params.t_min)
    return modes.masked_fill(switch_on, 1).masked_fill(switch_off, 0)


def _step_tensors(params: TclParams, temps: th.Tensor, modes: th.Tensor, dwell: th.Tensor,
                  eps_pair: tp.Optional[EpsPair], dt: float, normal: th.Tensor,
                  uniform: tp.Optional[th.Tensor], dwell_enabled: bool,
                  events: tp.Optional[EventLog] = None):
    """One sample period for a group of units. `eps_pair=None` disables rate switching."""
    temps = _em_update(params, modes, temps, dt, normal)
    dwell = dwell + dt
    new_modes = thermostat_modes(temps, modes, params)
    thermo = new_modes != modes
    if events is not None:
        events.thermostat[0] += int((thermo & (modes == 0)).sum())
        events.thermostat[1] += int((thermo & (modes == 1)).sum())
    if eps_pair is not None:
        assert uniform is not None
        eps0, eps1 = eps_pair
        off = modes == 0
        on_zone = in_safe_zone(temps, Direction.ON, params).to(temps.dtype)
        off_zone = in_safe_zone(temps, Direction.OFF, params).to(temps.dtype)
        rate = th.where(off, rate_function(eps1, temps) * on_zone,
                        rate_function(eps0, temps) * off_zone)
        eligible = ~thermo & (rate > 0)
        if dwell_enabled:
            min_dwell = th.where(off, th.full_like(dwell, params.m0),
                                 th.full_like(dwell, params.m1))
            eligible &= dwell >= min_dwell
        switch = eligible & (uniform < -th.expm1(-rate * dt))
        new_modes = th.where(switch, 1 - modes, new_modes)
        if events is not None:
            for mode in range(2):
                in_mode = modes == mode
                events.eligible[mode] += int((eligible & in_mode).sum())
                switched = switch & in_mode
                count = int(switched.sum())
                events.rate[mode] += count
                if count:
                    # dwell here already includes the current step.
                    events.min_dwell[mode] = min(events.min_dwell[mode],
                                                 float(dwell[switched].min()))
    dwell = th.where(new_modes != modes, th.zeros_like(dwell), dwell)
    return temps, new_modes, dwell


def step_unit(state: HybridState, params: TclParams, eps_pair: EpsPair, dt: float,
              rng_stream: RngStream, dwell_enabled: bool = False) -> HybridState:
    """Advance a single unit by `dt` drawing from `rng_stream`."""
    temps = th.tensor([state.temp], dtype=th.float64)
    modes = th.tensor([state.mode], dtype=th.long)
    dwell = th.tensor([state.dwell], dtype=th.float64)
    temps, modes, dwell = _step_tensors(
        params, temps, modes, dwell, eps_pair, dt, rng_stream.normal(1),
        rng_stream.uniform(1), dwell_enabled)
    return HybridState(float(temps[0]), int(modes[0]), float(dwell[0]))


def initial_ensemble(config: SimConfig, params: TclParams,
                     cell_edges: tp.Optional[np.ndarray] = None,
                     cell_modes: tp.Optional[np.ndarray] = None,
                     cell_mass: tp.Optional[np.ndarray] = None) -> Ensemble:
    """Draw the initial population.

    With `cell_edges` (shape `[n, 2]`), `cell_modes` and `cell_mass` (probability per
    cell), units are drawn from that piecewise uniform density. Otherwise temperatures
    are uniform over the dead-band and all units start off. Dwell starts unlocked.
    """
    n_blocks = math.ceil(config.n_units / config.block_size)
    streams = [RngStream(config.master_seed, block) for block in range(n_blocks)]
    temps = th.empty(config.n_units, dtype=th.float64)
    modes = th.zeros(config.n_units, dtype=th.long)
    if cell_mass is not None:
        assert cell_edges is not None and cell_modes is not None
        weights = th.from_numpy(np.clip(np.asarray(cell_mass, dtype=np.float64), 0, None))
        if not float(weights.sum()) > 0:
            raise EnsembleError("Initial density has no positive mass.")
        lefts = th.from_numpy(np.asarray(cell_edges[:, 0], dtype=np.float64))
        widths = th.from_numpy(np.asarray(cell_edges[:, 1] - cell_edges[:, 0], dtype=np.float64))
        mode_of_cell = th.from_numpy(np.asarray(cell_modes, dtype=np.int64))
    for block in range(n_blocks):
        start = block * config.block_size
        size = min(config.block_size, config.n_units - start)
        gen = th.Generator().manual_seed(block_seed(config.master_seed, block, INIT_STREAM))
        offsets = th.rand(size, generator=gen, dtype=th.float64)
        if cell_mass is None:
            temps[start:start + size] = params.t_min + params.band * offsets
        else:
            cells = th.multinomial(weights, size, replacement=True, generator=gen)
            temps[start:start + size] = lefts[cells] + widths[cells] * offsets
            modes[start:start + size] = mode_of_cell[cells]
    dwell = th.full((config.n_units,), float(max(params.m0, params.m1)), dtype=th.float64)
    return Ensemble(params, temps, modes, dwell, streams, config.block_size)


def aggregate_power(ensemble: Ensemble) -> tp.Tuple[float, float]:
    """Total power [W] and fraction of units on."""
    on = int(ensemble.modes.sum())
    return ensemble.params.rated_power * on, on / ensemble.n_units


def _check_in_grid(temps: np.ndarray, edges: np.ndarray):
    outside = (temps < edges[0]) | (temps > edges[-1])
    if outside.any():
        raise EnsembleError(
            f"{int(outside.sum())} unit(s) outside the histogram grid "
            f"[{edges[0]}, {edges[-1]}] (range {temps.min():.4f} to {temps.max():.4f}). "
            "Increase the grid padding.")


def empirical_pdf(ensemble: Ensemble, edges: np.ndarray) -> EmpiricalDensity:
    """Per mode histogram normalized so that both modes integrate to 1 together."""
    temps = ensemble.temps.numpy()
    modes = ensemble.modes.numpy()
    _check_in_grid(temps, edges)
    scale = 1 / (ensemble.n_units * np.diff(edges))
    f0 = np.histogram(temps[modes == 0], bins=edges)[0] * scale
    f1 = np.histogram(temps[modes == 1], bins=edges)[0] * scale
    return EmpiricalDensity(np.asarray(edges), f0, f1, ensemble.clock)


def empirical_locked_density(ensemble: Ensemble, temp_edges: np.ndarray, dwell_bins: int = 10,
                             dwell_enabled: bool = True) -> LockedDensityEstimate:
    """2D histogram over (temperature, dwell) of units with `dwell < M_mode`."""
    if not dwell_enabled:
        raise EnsembleError(
            "Locked densities require the minimum dwell feature (sim.dwell_enabled).")
    params = ensemble.params
    temps = ensemble.temps.numpy()
    modes = ensemble.modes.numpy()
    dwell = ensemble.dwell.numpy()
    _check_in_grid(temps, temp_edges)
    dwell_edges = []
    masses = []
    widths = np.diff(temp_edges)
    for mode in range(2):
        limit = params.min_dwell(mode)
        edges = np.linspace(0., limit, dwell_bins + 1)
        locked = (modes == mode) & (dwell < limit)
        if limit > 0:
            counts = np.histogram2d(temps[locked], dwell[locked], bins=[temp_edges, edges])[0]
            mass = counts / (ensemble.n_units * widths[:, None] * np.diff(edges)[None, :])
        else:
            mass = np.zeros((len(widths), dwell_bins))
        dwell_edges.append(edges)
        masses.append(mass)
    return LockedDensityEstimate(np.asarray(temp_edges), (dwell_edges[0], dwell_edges[1]),
                                 (masses[0], masses[1]), ensemble.clock)


def _advance_block(ensemble: Ensemble, part: slice, stream: RngStream,
                   eps_pair: tp.Optional[EpsPair], steps: int, dt: float, dwell_enabled: bool,
                   record: bool):
    """Advance one block over a broadcast interval, returning per step on counts."""
    params = ensemble.params
    temps = ensemble.temps[part]
    modes = ensemble.modes[part]
    dwell = ensemble.dwell[part]
    size = len(temps)
    events = EventLog()
    on_counts = []
    history = []
    for _ in range(steps):
        normal = stream.normal(size)
        uniform = stream.uniform(size) if eps_pair is not None else None
        temps, modes, dwell = _step_tensors(
            params, temps, modes, dwell, eps_pair, dt, normal, uniform, dwell_enabled, events)
        on_counts.append(int(modes.sum()))
        if record:
            history.append((temps.clone(), modes.clone()))
    ensemble.temps[part] = temps
    ensemble.modes[part] = modes
    ensemble.dwell[part] = dwell
    return on_counts, events, history


def _advance(ensemble: Ensemble, pool, eps_pair: tp.Optional[EpsPair], steps: int, dt: float,
             dwell_enabled: bool, record: bool = False):
    pendings = [pool.submit(_advance_block, ensemble, part, stream, eps_pair, steps, dt,
                            dwell_enabled, record)
                for part, stream in ensemble.blocks()]
    on_counts = np.zeros(steps, dtype=np.int64)
    events = EventLog()
    histories = []
    for pending in pendings:
        counts, block_events, history = pending.result()
        on_counts += np.asarray(counts, dtype=np.int64)
        events.merge(block_events)
        histories.append(history)
    ensemble.clock += steps * dt
    if record:
        temps = [th.cat([h[step][0] for h in histories]).numpy() for step in range(steps)]
        modes = [th.cat([h[step][1] for h in histories]).numpy() for step in range(steps)]
        return on_counts, events, (temps, modes)
    return on_counts, events, None


def steps_per_period(period: float, dt: float) -> int:
    ratio = period / dt
    steps = int(round(ratio))
    if steps < 1 or abs(ratio - steps) > 1e-9 * ratio:
        raise EnsembleError(
            f"Broadcast period ({period}) must be a whole multiple of sim.dt ({dt}).")
    return steps


def burn_in(ensemble: Ensemble, config: SimConfig, workers: int = 0):
    """Relax the ensemble with a zero broadcast for `config.burn_in` seconds."""
    steps = int(round(config.burn_in / config.dt))
    if steps == 0:
        return
    pool = ThreadPoolExecutor(workers) if workers > 1 else DummyPoolExecutor()
    eps_pair = (0., 0.) if config.actuated else None
    with pool:
        _advance(ensemble, pool, eps_pair, steps, config.dt, config.dwell_enabled)
    ensemble.clock = 0.
    logger.debug("Burn-in of %d steps done, on fraction %.4f", steps,
                 aggregate_power(ensemble)[1])


def simulate_population(config: SimConfig, params: TclParams, signal: ActuationSignal,
                        ensemble: tp.Optional[Ensemble] = None,
                        edges: tp.Optional[np.ndarray] = None,
                        locked_dwell_bins: int = 0, workers: int = 0, progress: bool = False,
                        record_modes: bool = False) -> McResult:
    """Simulate the population over `config.horizon`.

    Args:
        ensemble: initial population, drawn with `initial_ensemble` if not provided.
            It is advanced in place and no burn-in is applied to it.
        edges: temperature histogram edges for density snapshots, taken every
            `config.snapshot_every` seconds (default: the broadcast period).
        locked_dwell_bins: if > 0 and the dwell feature is on, also estimate
            the locked densities at every snapshot.
        workers: number of threads advancing blocks, results do not depend on it.
        record_modes: keep every unit's mode and temperature after every step.
    """
    if ensemble is None:
        ensemble = initial_ensemble(config, params)
        burn_in(ensemble, config, workers)
    if ensemble.params != params:
        raise EnsembleError("Ensemble was built for different parameters.")
    interval = steps_per_period(signal.period, config.dt)
    snapshot_every = config.snapshot_every or signal.period
    snapshot_steps = steps_per_period(snapshot_every, config.dt)
    total = int(round(config.horizon / config.dt))
    if not config.actuated and not signal.is_zero():
        logger.warning("Rate switching is disabled, the broadcast signal is ignored.")

    start = ensemble.clock
    times = [start]
    on_counts = [int(ensemble.modes.sum())]
    snapshots = []
    locked = []
    events = EventLog()
    modes_history = [ensemble.modes.numpy().copy()] if record_modes else []
    temps_history = [ensemble.temps.numpy().copy()] if record_modes else []

    def _snapshot():
        if edges is None:
            return
        snapshots.append(empirical_pdf(ensemble, edges))
        if locked_dwell_bins and config.dwell_enabled:
            locked.append(empirical_locked_density(ensemble, edges, locked_dwell_bins))

    _snapshot()
    pool = ThreadPoolExecutor(workers) if workers > 1 else DummyPoolExecutor()
    # Advance between sync points: broadcast updates and snapshot instants.
    boundaries = sorted(set(list(range(0, total, interval)) +
                            list(range(0, total, snapshot_steps)) + [total]))
    chunks = list(zip(boundaries[:-1], boundaries[1:]))
    if progress:
        chunks = tqdm.tqdm(chunks, unit='chunk', ncols=120, leave=False)
    with pool:
        for begin, end in chunks:
            eps_pair = None
            if config.actuated:
                eps_pair = actuation_at(signal, begin * config.dt)
            counts, block_events, history = _advance(
                ensemble, pool, eps_pair, end - begin, config.dt, config.dwell_enabled,
                record_modes)
            events.merge(block_events)
            on_counts.extend(counts.tolist())
            times.extend(start + config.dt * step for step in range(begin + 1, end + 1))
            if history is not None:
                temps_history.extend(history[0])
                modes_history.extend(history[1])
            if end % snapshot_steps == 0:
                _snapshot()
    on_fraction = np.asarray(on_counts, dtype=np.float64) / ensemble.n_units
    return McResult(
        times=np.asarray(times),
        power=on_fraction * params.rated_power * ensemble.n_units,
        on_fraction=on_fraction,
        snapshots=snapshots,
        locked=locked,
        events=events,
        n_units=ensemble.n_units,
        modes=np.stack(modes_history) if record_modes else None,
        temps=np.stack(temps_history) if record_modes else None)


def mode_durations(times: np.ndarray, modes: np.ndarray) -> tp.List[tp.Tuple[int, float, float]]:
    """Completed legs of a single unit's mode history as `(mode, start_time, duration)`.

    The first leg is dropped as its start is unknown.
    """
    changes = np.nonzero(np.diff(modes))[0] + 1
    legs = []
    for begin, end in zip(changes[:-1], changes[1:]):
        legs.append((int(modes[begin]), float(times[begin]), float(times[end] - times[begin])))
    return legs
