# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.

from pathlib import Path

import pytest

from tclsim.model import Direction, TclParams
from tclsim.scenario import ScenarioError, load_scenario

CONF = Path(__file__).parent.parent / "conf"


def _write(tmp_path, text, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_default_scenario():
    scenario = load_scenario()
    assert scenario.name == 'default'
    assert scenario.params == TclParams()
    assert scenario.sim.n_units == 10000
    assert scenario.sim.master_seed == 42
    assert scenario.signal.period == 60.
    assert len(scenario.signal.samples) == 120
    assert scenario.signal.samples[30] == (0., 0.01)
    assert scenario.fvm.cells_per_band == 120
    assert scenario.compare.cells_per_band == 30
    assert not scenario.clamped
    assert scenario.config['params']['sigma'] == 0.0065


def test_minimal_file(tmp_path):
    path = _write(tmp_path, "params:\n  sigma: 0.01\nsim:\n  n_units: 500\n", "mini.yaml")
    scenario = load_scenario(path)
    assert scenario.name == 'mini'
    assert scenario.params.sigma == 0.01
    assert scenario.params.t_max == 5.
    assert scenario.sim.n_units == 500


@pytest.mark.parametrize("name", ["fridge.yaml", "zero.yaml", "pulse_train.yaml"])
def test_shipped_scenarios(name):
    scenario = load_scenario(CONF / name)
    assert scenario.sim.horizon % scenario.signal.period == 0


def test_signal_kinds(tmp_path):
    zero = load_scenario(_write(tmp_path, "signal:\n  kind: zero\n"))
    assert zero.signal.is_zero()
    off = load_scenario(_write(tmp_path, "signal:\n  kind: pulse\n  direction: 'off'\n"))
    assert off.signal.samples[30] == (0.01, 0.)
    assert Direction.OFF.value == 'off'
    train = load_scenario(_write(tmp_path, "signal:\n  kind: train\n  start: 0.\n"))
    assert train.signal.samples[0] == (0., 0.01)
    samples = load_scenario(_write(
        tmp_path, "signal:\n  kind: samples\n  samples: [[0, 0.01], [0.02, 0]]\n"))
    assert samples.signal.samples == ((0., 0.01), (0.02, 0.))
    assert samples.clamped


@pytest.mark.parametrize("text,key", [
    ("params:\n  t_min: 5.\n  t_max: 2.\n", "t_min"),
    ("signal:\n  kind: samples\n  samples: [[0, -0.01]]\n", "samples"),
    ("signal:\n  kind: pulse\n  amplitude: -1.\n", "signal.amplitude"),
    ("sim:\n  n_units: many\n", "sim.n_units"),
    ("sim:\n  dwell_enabled: 3\n", "sim.dwell_enabled"),
    ("sim:\n  nunits: 3\n", "nunits"),
    ("signal:\n  kind: ramp\n", "signal.kind"),
    ("signal:\n  period: 70.\n", "signal.period"),
    ("sim:\n  dt: 7.\n", "signal.period"),
    ("compare:\n  cells_per_band: 7\n", "compare.cells_per_band"),
    ("fvm:\n  cells_per_band: 100\ncompare:\n  cells_per_band: 50\n", "delta_t"),
    ("signal:\n  kind: pulse\n  direction: sideways\n", "signal.direction"),
])
def test_invalid_scenarios(tmp_path, text, key):
    with pytest.raises(ScenarioError) as error:
        load_scenario(_write(tmp_path, text))
    assert key in str(error.value)


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "nope.yaml")


def test_overrides():
    scenario = load_scenario(overrides={'sim.seed': 3, 'fvm.cells_per_band': 60})
    assert scenario.sim.master_seed == 3
    assert scenario.fvm.cells_per_band == 60
    assert scenario.config['sim']['seed'] == 3
    with pytest.raises(ScenarioError):
        load_scenario(overrides={'sim.sed': 3})
