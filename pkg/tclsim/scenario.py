# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
"""Scenario files: YAML merged onto the packaged defaults, then validated."""

from dataclasses import dataclass
import logging
from pathlib import Path
import typing as tp

from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException
import yaml

from .fvm import FvmConfig, GridError, build_grid
from .model import (
    ActuationSignal, Direction, ParameterError, TclParams, pulse_signal, pulse_train_signal,
    zero_signal)
from .montecarlo import EnsembleError, SimConfig

logger = logging.getLogger(__name__)

DEFAULT_SCENARIO = Path(__file__).parent / 'conf' / 'default.yaml'
SIGNAL_KINDS = ['zero', 'pulse', 'train', 'samples']


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class CompareConfig:
    cells_per_band: int = 30
    max_rel_rmse: float = 0.05
    max_l1: float = 0.1
    max_mass_drift: float = 1e-9


@dataclass(frozen=True)
class Scenario:
    name: str
    params: TclParams
    signal: ActuationSignal
    sim: SimConfig
    fvm: FvmConfig
    compare: CompareConfig
    locked_dwell_bins: int
    out: Path
    config: dict  # merged configuration, echoed in manifests

    @property
    def clamped(self) -> bool:
        """True when the signal is shorter than the horizon and its last sample is held."""
        return not self.signal.covers(self.sim.horizon)


def _number(cfg: DictConfig, key: str) -> float:
    value = OmegaConf.select(cfg, key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{key} must be a number, got {value!r}.")
    return float(value)


def _integer(cfg: DictConfig, key: str) -> int:
    value = OmegaConf.select(cfg, key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{key} must be an integer, got {value!r}.")
    return value


def _flag(cfg: DictConfig, key: str) -> bool:
    value = OmegaConf.select(cfg, key)
    if not isinstance(value, bool):
        raise ScenarioError(f"{key} must be true or false, got {value!r}.")
    return value


def build_signal(cfg: DictConfig, horizon: float) -> ActuationSignal:
    kind = OmegaConf.select(cfg, 'signal.kind')
    if kind not in SIGNAL_KINDS:
        raise ScenarioError(f"signal.kind must be one of {SIGNAL_KINDS}, got {kind!r}.")
    period = _number(cfg, 'signal.period')
    if not period > 0:
        raise ScenarioError(f"signal.period must be positive, got {period}.")
    if kind == 'zero':
        return zero_signal(period, horizon)
    if kind == 'samples':
        samples = OmegaConf.to_container(cfg.signal.samples)
        if not isinstance(samples, list) or not samples:
            raise ScenarioError("signal.samples must be a non empty list of [eps0, eps1].")
        if not all(isinstance(pair, list) for pair in samples):
            raise ScenarioError("signal.samples entries must be lists [eps0, eps1].")
        return ActuationSignal(period, tuple(tuple(pair) for pair in samples))
    amplitude = _number(cfg, 'signal.amplitude')
    start = _number(cfg, 'signal.start')
    length = _number(cfg, 'signal.length')
    if amplitude < 0:
        raise ScenarioError(f"signal.amplitude must be non negative, got {amplitude}.")
    if kind == 'pulse':
        value = cfg.signal.direction
        if isinstance(value, bool):
            # YAML reads bare on / off as booleans.
            value = 'on' if value else 'off'
        try:
            direction = Direction(str(value))
        except ValueError:
            raise ScenarioError(
                f"signal.direction must be 'on' or 'off', got {cfg.signal.direction!r}.")
        return pulse_signal(period, horizon, amplitude, start, length, direction)
    return pulse_train_signal(period, horizon, amplitude, start, length,
                              _number(cfg, 'signal.gap'))


def _from_config(cfg: DictConfig) -> Scenario:
    params = TclParams(**{key: _number(cfg, f'params.{key}') for key in cfg.params})
    snapshot_every = OmegaConf.select(cfg, 'sim.snapshot_every')
    if snapshot_every is not None:
        snapshot_every = _number(cfg, 'sim.snapshot_every')
    sim = SimConfig(
        dt=_number(cfg, 'sim.dt'),
        horizon=_number(cfg, 'sim.horizon'),
        n_units=_integer(cfg, 'sim.n_units'),
        master_seed=_integer(cfg, 'sim.seed'),
        dwell_enabled=_flag(cfg, 'sim.dwell_enabled'),
        actuated=_flag(cfg, 'sim.actuated'),
        burn_in=_number(cfg, 'sim.burn_in'),
        block_size=_integer(cfg, 'sim.block_size'),
        snapshot_every=snapshot_every)
    fvm = FvmConfig(
        cells_per_band=_integer(cfg, 'fvm.cells_per_band'),
        left_pad=_number(cfg, 'fvm.left_pad'),
        right_pad=_number(cfg, 'fvm.right_pad'),
        cfl=_number(cfg, 'fvm.cfl'),
        max_substeps=_integer(cfg, 'fvm.max_substeps'))
    compare = CompareConfig(
        cells_per_band=_integer(cfg, 'compare.cells_per_band'),
        max_rel_rmse=_number(cfg, 'compare.max_rel_rmse'),
        max_l1=_number(cfg, 'compare.max_l1'),
        max_mass_drift=_number(cfg, 'compare.max_mass_drift'))
    if compare.cells_per_band < 1 or fvm.cells_per_band % compare.cells_per_band:
        raise ScenarioError(
            f"compare.cells_per_band ({compare.cells_per_band}) must divide "
            f"fvm.cells_per_band ({fvm.cells_per_band}).")
    build_grid(params, fvm.left_pad, fvm.right_pad, fvm.cells_per_band)
    signal = build_signal(cfg, sim.horizon)
    period = signal.period
    if abs(period / sim.dt - round(period / sim.dt)) > 1e-9 * period / sim.dt:
        raise ScenarioError(f"signal.period ({period}) must be a whole multiple of sim.dt.")
    if abs(sim.horizon / period - round(sim.horizon / period)) > 1e-9 * sim.horizon / period:
        raise ScenarioError(
            f"sim.horizon ({sim.horizon}) must be a whole multiple of signal.period ({period}).")
    if sim.snapshot_every is not None:
        ratio = sim.snapshot_every / period
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ScenarioError("sim.snapshot_every must be a whole multiple of signal.period.")
    name = OmegaConf.select(cfg, 'name')
    return Scenario(
        name=str(name),
        params=params, signal=signal, sim=sim, fvm=fvm, compare=compare,
        locked_dwell_bins=_integer(cfg, 'sim.locked_dwell_bins'),
        out=Path(str(cfg.out)),
        config=tp.cast(dict, OmegaConf.to_container(cfg, resolve=True)))


def load_scenario(path: tp.Optional[tp.Union[str, Path]] = None,
                  overrides: tp.Optional[tp.Dict[str, tp.Any]] = None) -> Scenario:
    """Load a scenario file merged onto the packaged defaults.

    Args:
        path: YAML scenario, if None the packaged default scenario is used.
        overrides: dotted keys to replace after merging, e.g. `{'sim.seed': 3}`.
    """
    base = OmegaConf.load(DEFAULT_SCENARIO)
    OmegaConf.set_struct(base, True)
    source = str(path) if path is not None else 'default'
    try:
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ScenarioError(f"Scenario file {path} does not exist.")
            user = OmegaConf.load(path)
            if not isinstance(user, DictConfig):
                raise ScenarioError(f"{path} must contain a mapping at the top level.")
            cfg = OmegaConf.merge(base, user)
            if 'name' not in user:
                cfg.name = path.stem
        else:
            cfg = base
        for key, value in (overrides or {}).items():
            if OmegaConf.select(cfg, key, default=KeyError) is KeyError:
                raise ScenarioError(f"Unknown key {key}.")
            OmegaConf.update(cfg, key, value)
    except OmegaConfBaseException as exc:
        key = getattr(exc, 'full_key', None)
        where = f" at key {key}" if key else ""
        raise ScenarioError(f"{source}: invalid scenario{where}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: not valid YAML: {exc}") from exc
    assert isinstance(cfg, DictConfig)
    try:
        scenario = _from_config(cfg)
    except (ParameterError, EnsembleError, GridError) as exc:
        raise ScenarioError(f"{source}: {exc}") from exc
    if scenario.clamped:
        logger.warning("Signal of %s is shorter than the horizon, holding its last sample.",
                       source)
    return scenario
