# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.

"""
benchmarking script, useful to pick the number of threads and Monte Carlo block size
for a scenario, and to check the cost of the finite volume substeps.

    python -m tools.bench [scenario.yaml] [threads ...]
"""
from contextlib import contextmanager
import logging
import sys
import time

import torch

from tclsim.fvm import assemble, simulate_pde, stationary, substeps
from tclsim.montecarlo import initial_ensemble, simulate_population
from tclsim.scenario import load_scenario

logging.basicConfig(level=logging.INFO, stream=sys.stderr)


class Result:
    tim: float = 0.


@contextmanager
def bench():
    result = Result()
    begin = time.time()
    try:
        yield result
    finally:
        result.tim = time.time() - begin


scenario = load_scenario(sys.argv[1] if len(sys.argv) > 1 else None)
threads = [int(arg) for arg in sys.argv[2:]] or [1, 2, 4, 8]
sim = scenario.sim
print(f"torch {torch.__version__}, {torch.get_num_threads()} intra op threads")

with bench() as res:
    model = assemble(scenario.params, scenario.fvm)
    start = stationary(model)
print(f"assemble + stationary: {model.grid.n_cells} cells, {res.tim * 1000:.1f} ms")

peak = max(scenario.signal.samples, key=sum)
count = substeps(model, model.operator(peak), scenario.signal.period, scenario.fvm.cfl)
with bench() as res:
    simulate_pde(model, start, scenario.signal, sim.horizon, None, scenario.fvm.cfl,
                 scenario.fvm.max_substeps)
print(f"PDE: up to {count} substeps per period, {res.tim:.2f} s for {sim.horizon:.0f} s")

for workers in threads:
    ensemble = initial_ensemble(sim, scenario.params)
    with bench() as res:
        simulate_population(sim, scenario.params, scenario.signal, ensemble, workers=workers)
    rate = sim.n_units * sim.horizon / sim.dt / res.tim
    print(f"MC {workers} threads: {res.tim:.2f} s, {rate / 1e6:.2f} M unit-steps/s")
