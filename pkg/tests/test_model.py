# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.

import numpy as np
import pytest
import torch as th

from tclsim.model import (
    ActuationSignal, Direction, HybridState, ParameterError, TclParams, actuation_at,
    drift, in_safe_zone, masked_rate, power_output, pulse_signal, pulse_train_signal,
    rate_function, thermostat_transition, zero_signal)


def test_default_params():
    params = TclParams()
    assert params.band == 3.
    assert params.equilibrium(0) == pytest.approx(24.0, abs=1e-3)
    assert params.equilibrium(1) == pytest.approx(-170.53, abs=1e-2)
    assert params.min_dwell(1) == 300.


@pytest.mark.parametrize("kwargs", [
    {'t_min': 5., 't_max': 2.},
    {'sigma': -1.},
    {'delta_t0': 2., 'delta_t1': 1.5},
    {'rated_power': 0.},
    {'a': float('nan')},
])
def test_invalid_params(kwargs):
    with pytest.raises(ParameterError):
        TclParams(**kwargs)


def test_drift():
    params = TclParams()
    assert drift(params, 0, 3.) == pytest.approx(3.20189e-4, rel=1e-9)
    assert drift(params, 1, 3.) == pytest.approx(-0.002645741, rel=1e-9)
    temps = np.array([3., 3.])
    modes = np.array([0, 1])
    np.testing.assert_allclose(drift(params, modes, temps), [3.20189e-4, -0.002645741])


def test_thermostat_transition():
    params = TclParams()
    assert thermostat_transition(HybridState(5.0, 0), params) == 1
    assert thermostat_transition(HybridState(2.0, 1), params) == 0
    assert thermostat_transition(HybridState(3.0, 0), params) == 0
    assert thermostat_transition(HybridState(3.0, 1), params) == 1
    assert thermostat_transition(HybridState(1.9, 0), params) == 0


def test_thermostat_transition_is_idempotent():
    params = TclParams()
    for temp in [1.5, 2., 2.01, 3.5, 4.99, 5., 5.5]:
        for mode in [0, 1]:
            once = thermostat_transition(HybridState(temp, mode), params)
            assert thermostat_transition(HybridState(temp, once), params) == once


def test_drift_is_affine():
    params = TclParams()
    for mode in [0, 1]:
        for first, second in [(2., 5.), (-1., 3.3), (4.2, 4.4)]:
            middle = drift(params, mode, (first + second) / 2)
            assert drift(params, mode, first) + drift(params, mode, second) == \
                pytest.approx(2 * middle, rel=1e-12, abs=1e-15)


def test_safe_zones():
    params = TclParams()
    assert in_safe_zone(2.5, Direction.ON, params)
    assert not in_safe_zone(2.49, Direction.ON, params)
    assert not in_safe_zone(5.0, Direction.ON, params)
    assert in_safe_zone(4.5, Direction.OFF, params)
    assert not in_safe_zone(4.51, Direction.OFF, params)
    assert not in_safe_zone(2.0, Direction.OFF, params)
    temps = th.tensor([2.2, 3.0, 4.9], dtype=th.float64)
    assert in_safe_zone(temps, Direction.ON, params).tolist() == [False, True, True]
    assert in_safe_zone(temps, Direction.OFF, params).tolist() == [True, True, False]


def test_rates():
    params = TclParams()
    assert rate_function(0.01, 3.) == 0.01
    assert masked_rate(0.01, 3.0, Direction.ON, params) == 0.01
    assert masked_rate(0.01, 2.2, Direction.ON, params) == 0.
    assert masked_rate(0.01, 4.8, Direction.OFF, params) == 0.
    with pytest.raises(ParameterError):
        rate_function(-1., 3.)


def test_direction_modes():
    assert Direction.ON.source_mode == 0
    assert Direction.ON.target_mode == 1
    assert Direction.OFF.source_mode == 1
    assert Direction.OFF.target_mode == 0


def test_actuation_at():
    signal = ActuationSignal(60., ((0., 0.), (0., 0.01)))
    assert actuation_at(signal, 0.) == (0., 0.)
    assert actuation_at(signal, 59.9) == (0., 0.)
    assert actuation_at(signal, 60.) == (0., 0.01)
    # held past the end
    assert actuation_at(signal, 1e6) == (0., 0.01)
    # 0.3 / 0.1 rounds below 3
    fine = ActuationSignal(0.1, ((0., 0.),) * 3 + ((0., 0.01),))
    assert actuation_at(fine, 0.3) == (0., 0.01)
    with pytest.raises(ParameterError):
        actuation_at(signal, -1.)


def test_signal_validation():
    with pytest.raises(ParameterError):
        ActuationSignal(60., ((0., -0.01),))
    with pytest.raises(ParameterError):
        ActuationSignal(0., ((0., 0.),))
    with pytest.raises(ParameterError):
        ActuationSignal(60., ())


def test_signal_builders():
    zero = zero_signal(60., 7200.)
    assert len(zero.samples) == 120
    assert zero.is_zero()
    assert zero.covers(7200.)

    pulse = pulse_signal(60., 7200., 0.01, 1800., 600.)
    active = [k for k, pair in enumerate(pulse.samples) if pair != (0., 0.)]
    assert active == list(range(30, 40))
    assert pulse.samples[30] == (0., 0.01)

    off_pulse = pulse_signal(60., 600., 0.02, 0., 60., Direction.OFF)
    assert off_pulse.samples[0] == (0.02, 0.)

    train = pulse_train_signal(60., 3600., 0.01, 0., 600., 600.)
    on = [k for k, (_, eps1) in enumerate(train.samples) if eps1 > 0]
    off = [k for k, (eps0, _) in enumerate(train.samples) if eps0 > 0]
    assert on == list(range(0, 10)) + list(range(40, 50))
    assert off == list(range(20, 30))


def test_checksum():
    first = pulse_signal(60., 7200., 0.01, 1800., 600.)
    second = pulse_signal(60., 7200., 0.01, 1800., 600.)
    assert first.checksum() == second.checksum()
    assert len(first.checksum()) == 16
    other = pulse_signal(60., 7200., 0.02, 1800., 600.)
    assert other.checksum() != first.checksum()


def test_power_output():
    params = TclParams()
    assert power_output(HybridState(3., 1), params) == 100.
    assert power_output(HybridState(3., 0), params) == 0.
