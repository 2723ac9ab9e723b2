# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.

from dataclasses import replace
import math

import numpy as np
import pytest
import torch as th

from tclsim.model import (
    ActuationSignal, Direction, HybridState, TclParams, pulse_signal, zero_signal)
from tclsim.montecarlo import (
    EnsembleError, RngStream, SimConfig, aggregate_power, block_seed, burn_in, em_step,
    empirical_locked_density, empirical_pdf, initial_ensemble, mode_durations,
    rate_switch_trial, simulate_population, step_unit, steps_per_period)


def _constant(eps0, eps1, horizon, period=60.):
    return ActuationSignal(period, ((eps0, eps1),) * math.ceil(horizon / period))


def test_block_seeds():
    assert block_seed(42, 0, 0) == block_seed(42, 0, 0)
    assert block_seed(42, 0, 0) != block_seed(42, 0, 1)
    assert block_seed(42, 0, 0) != block_seed(42, 1, 0)
    assert block_seed(42, 0, 0) != block_seed(43, 0, 0)


def test_em_step():
    params = TclParams()
    state = HybridState(3., 0)
    assert em_step(state, replace(params, sigma=0.), 1., 0.7) == pytest.approx(3. + 3.20189e-4)
    assert em_step(state, params, 4., 1.) == pytest.approx(
        3. + 4 * 3.20189e-4 + 0.0065 * 2.)
    with pytest.raises(EnsembleError):
        em_step(state, params, 0., 1.)


def test_rate_switch_trial():
    params = TclParams()
    threshold = -math.expm1(-0.01)
    state = HybridState(3., 0, dwell=1000.)
    assert rate_switch_trial(state, (0., 0.01), params, 1., threshold * 0.5)
    assert not rate_switch_trial(state, (0., 0.01), params, 1., threshold * 1.5)
    # only eps1 acts on units that are off
    assert not rate_switch_trial(state, (0.01, 0.), params, 1., 0.)
    # outside the switch-on safe zone
    assert not rate_switch_trial(HybridState(2.2, 0), (0., 0.01), params, 1., 0.)
    locked = HybridState(3., 0, dwell=100.)
    assert rate_switch_trial(locked, (0., 0.01), params, 1., 0.)
    assert not rate_switch_trial(locked, (0., 0.01), params, 1., 0., dwell_enabled=True)


def test_thermostat_has_priority():
    params = replace(TclParams(), sigma=0.)
    stream = RngStream(0, 0)
    state = step_unit(HybridState(4.9999, 0), params, (0., 1000.), 1., stream)
    assert state.mode == 1
    assert state.dwell == 0.
    state = step_unit(HybridState(2.0001, 1), params, (1000., 0.), 1., stream)
    assert state.mode == 0


def test_steps_per_period():
    assert steps_per_period(60., 1.) == 60
    with pytest.raises(EnsembleError):
        steps_per_period(60., 7.)


def test_initial_ensemble_from_cells():
    params = TclParams()
    config = SimConfig(n_units=500, block_size=128)
    edges = np.array([[3., 3.1], [3.1, 3.2]])
    ensemble = initial_ensemble(config, params, edges, np.array([0, 1]), np.array([0., 1.]))
    assert ensemble.n_units == 500
    assert bool((ensemble.modes == 1).all())
    assert float(ensemble.temps.min()) >= 3.1
    assert float(ensemble.temps.max()) <= 3.2
    assert ensemble.unit_seeds[-1] == 3
    unit = ensemble.unit(0)
    assert unit.mode == 1
    assert 3.1 <= unit.temp <= 3.2
    assert unit.dwell == 300.
    with pytest.raises(EnsembleError):
        initial_ensemble(config, params, edges, np.array([0, 1]), np.array([0., 0.]))


def test_simulation_is_reproducible_and_thread_invariant():
    params = TclParams()
    config = SimConfig(horizon=300., n_units=900, block_size=200, burn_in=120.)
    signal = pulse_signal(60., 300., 0.01, 60., 120.)
    first = simulate_population(config, params, signal)
    second = simulate_population(config, params, signal, workers=4)
    np.testing.assert_array_equal(first.power, second.power)
    other = simulate_population(replace(config, master_seed=7), params, signal)
    assert not np.array_equal(first.power, other.power)


def test_zero_broadcast_matches_unactuated():
    params = TclParams()
    config = SimConfig(horizon=300., n_units=600, block_size=250, burn_in=60.)
    signal = zero_signal(60., 300.)
    ensembles = []
    for actuated in [True, False]:
        cfg = replace(config, actuated=actuated)
        ensemble = initial_ensemble(cfg, params)
        burn_in(ensemble, cfg)
        simulate_population(cfg, params, signal, ensemble)
        ensembles.append(ensemble)
    assert th.equal(ensembles[0].temps, ensembles[1].temps)
    assert th.equal(ensembles[0].modes, ensembles[1].modes)


def test_power_and_times():
    params = TclParams()
    config = SimConfig(horizon=120., n_units=300, burn_in=0.)
    result = simulate_population(config, params, zero_signal(60., 120.))
    assert len(result.times) == 121
    assert result.times[0] == 0. and result.times[-1] == 120.
    np.testing.assert_allclose(result.power, result.on_fraction * 100. * 300)
    assert ((result.on_fraction >= 0) & (result.on_fraction <= 1)).all()


def test_snapshots_integrate_to_one():
    params = TclParams()
    config = SimConfig(horizon=240., n_units=500, burn_in=0.)
    edges = np.linspace(1., 6., 101)
    result = simulate_population(config, params, zero_signal(60., 240.), edges=edges)
    assert len(result.snapshots) == 5
    for snapshot in result.snapshots:
        assert snapshot.mass() == pytest.approx(1.)
    with pytest.raises(EnsembleError):
        ensemble = initial_ensemble(config, params)
        empirical_pdf(ensemble, np.linspace(3., 4., 11))


def test_rate_law_frequency():
    params = replace(TclParams(), delta_t0=0., delta_t1=0.)
    config = SimConfig(horizon=600., n_units=2000, burn_in=0.)
    result = simulate_population(config, params, _constant(0., 0.01, 600.))
    expected = -math.expm1(-0.01)
    eligible = result.events.eligible[0]
    assert eligible > 10 ** 5
    stderr = math.sqrt(expected * (1 - expected) / eligible)
    assert abs(result.events.frequency(Direction.ON) - expected) <= 4 * stderr
    # switch-off broadcast is zero
    assert result.events.rate[1] == 0


def test_dwell_gate_and_locked_density():
    params = TclParams()
    config = SimConfig(horizon=1200., n_units=800, burn_in=0., dwell_enabled=True)
    edges = np.linspace(1., 6., 121)
    result = simulate_population(config, params, _constant(0.01, 0.01, 1200.), edges=edges,
                                 locked_dwell_bins=5)
    assert sum(result.events.rate) > 0
    assert result.events.dwell_violations(params) == 0
    assert len(result.locked) == len(result.snapshots)
    for density, locked in zip(result.snapshots, result.locked):
        for mode in range(2):
            assert (locked.responsive(mode, density) >= -1e-9).all()
            assert 0 <= locked.locked_fraction(mode) <= 1


def test_locked_density_requires_dwell():
    params = TclParams()
    ensemble = initial_ensemble(SimConfig(n_units=10), params)
    with pytest.raises(EnsembleError):
        empirical_locked_density(ensemble, np.linspace(1., 6., 11), dwell_enabled=False)


def test_aggregate_power():
    params = TclParams()
    ensemble = initial_ensemble(SimConfig(n_units=10), params)
    ensemble.modes[:4] = 1
    assert aggregate_power(ensemble) == (400., 0.4)


def test_mode_durations():
    times = np.arange(10.)
    modes = np.array([0, 0, 1, 1, 1, 0, 0, 1, 1, 1])
    assert mode_durations(times, modes) == [(1, 2., 3.), (0, 5., 2.)]


def test_noise_free_limit_cycle_legs():
    params = replace(TclParams(), sigma=0.)
    config = SimConfig(horizon=12000., n_units=1, burn_in=0., actuated=False)
    result = simulate_population(config, params, zero_signal(12000., 12000.),
                                 record_modes=True)
    assert result.modes is not None
    legs = mode_durations(result.times, result.modes[:, 0])
    # uniform start in the band, all off: one on leg then a full off leg
    on_legs = [duration for mode, _, duration in legs if mode == 1]
    assert on_legs
    assert on_legs[0] == pytest.approx(1130.7, abs=2.)


def test_thermostat_containment():
    params = TclParams()
    config = SimConfig(horizon=900., n_units=400, block_size=150, burn_in=0.)
    result = simulate_population(config, params, _constant(0.02, 0.02, 900.),
                                 record_modes=True)
    assert result.modes is not None and result.temps is not None
    assert sum(result.events.rate) > 0
    modes, temps = result.modes, result.temps
    assert not ((modes == 0) & (temps >= params.t_max)).any()
    assert not ((modes == 1) & (temps <= params.t_min)).any()
