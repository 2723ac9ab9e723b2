# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.

import argparse
import logging
import os
from pathlib import Path
import sys
import typing as tp

from dora.log import bold

from .compare import OracleError, analytic_limit_cycle, run_comparison
from .export import export_mc, export_operators, export_pde, export_results
from .fvm import GridError, StabilityError, assemble, simulate_pde, stationary
from .model import ParameterError
from .montecarlo import EnsembleError, burn_in, initial_ensemble, simulate_population
from .scenario import Scenario, ScenarioError, load_scenario
from .utils import default_threads
from .verify import format_table, run_verification

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4
EXIT_FAILED = 1

COMMANDS = ['simulate-mc', 'simulate-pde', 'assemble', 'compare', 'oracle', 'verify']


def get_parser():
    parser = argparse.ArgumentParser(
        "tclsim", description="Monte Carlo and finite volume simulation of TCL populations "
        "under switching rate broadcasts.")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    helps = {
        'simulate-mc': "Run the Monte Carlo backend and export power and densities.",
        'simulate-pde': "Run the finite volume backend and export power and densities.",
        'assemble': "Export the A, B0, B1 operators and the grid manifest.",
        'compare': "Run both backends on the same broadcast and write the report.",
        'oracle': "Print the noise free limit cycle of the scenario parameters.",
        'verify': "Run the acceptance suite and print a pass/fail table.",
    }
    for name in COMMANDS:
        sub = commands.add_parser(name, help=helps[name], description=helps[name])
        sub.add_argument("--scenario", type=Path,
                         help="Scenario YAML, merged onto the packaged defaults. "
                         "Default is the packaged default scenario.")
        sub.add_argument("-o", "--out", type=Path,
                         help="Output folder. Default is $TCLSIM_OUT, then the scenario `out`.")
        sub.add_argument("--seed", type=int, help="Override sim.seed.")
        sub.add_argument("--cells", type=int, help="Override fvm.cells_per_band.")
        sub.add_argument("-j", "--threads", type=int, default=default_threads(),
                         help="Threads advancing Monte Carlo blocks, results do not "
                         "depend on it. Default is the number of cores.")
        sub.add_argument("-v", "--verbose", action="store_true",
                         help="Log at DEBUG level instead of INFO.")
        if name in ['simulate-mc', 'compare']:
            sub.add_argument("--progress", action="store_true",
                             help="Show a progress bar for the Monte Carlo run.")
        if name == 'verify':
            sub.add_argument("--quick", action="store_true",
                             help="Smaller ensembles and horizons, for smoke runs.")
    return parser


def _scenario(args) -> Scenario:
    overrides: tp.Dict[str, tp.Any] = {}
    if args.seed is not None:
        overrides['sim.seed'] = args.seed
    if args.cells is not None:
        overrides['fvm.cells_per_band'] = args.cells
    out = args.out or os.environ.get("TCLSIM_OUT")
    if out:
        overrides['out'] = str(out)
    return load_scenario(args.scenario, overrides)


def _simulate_mc(scenario: Scenario, args):
    model = assemble(scenario.params, scenario.fvm)
    grid = model.grid
    start = stationary(model)
    ensemble = initial_ensemble(scenario.sim, scenario.params, grid.cell_edges,
                                grid.cell_modes, start.values * grid.h)
    burn_in(ensemble, scenario.sim, args.threads)
    result = simulate_population(
        scenario.sim, scenario.params, scenario.signal, ensemble, edges=grid.common_edges,
        locked_dwell_bins=scenario.locked_dwell_bins, workers=args.threads,
        progress=args.progress)
    export_mc(result, scenario, scenario.out)
    logger.info(bold(f"Monte Carlo | mean power {result.power.mean():.1f}W | "
                     f"{sum(result.events.rate)} rate switches"))


def _simulate_pde(scenario: Scenario, args):
    model = assemble(scenario.params, scenario.fvm)
    result = simulate_pde(model, stationary(model), scenario.signal, scenario.sim.horizon,
                          scenario.sim.snapshot_every, scenario.fvm.cfl,
                          scenario.fvm.max_substeps)
    export_pde(result, scenario, model.grid, scenario.out)
    logger.info(bold(f"PDE | mean power {result.power.mean() * scenario.sim.n_units:.1f}W | "
                     f"mass drift {result.mass_drift:.2e}"))


def _assemble(scenario: Scenario, args):
    model = assemble(scenario.params, scenario.fvm)
    paths = export_operators(model, scenario.out)
    print(f"{model.grid.n_cells} cells, h={model.grid.h:.6g}K, "
          f"written {', '.join(path.name for path in paths)}")


def _compare(scenario: Scenario, args):
    result = run_comparison(scenario, workers=args.threads, progress=args.progress)
    export_results(result, scenario, scenario.out)
    report = result.report
    print(f"relative power RMSE {report.power_rel_rmse:.4f} "
          f"(noise floor {report.noise_floor:.4f}), max L1 {report.max_l1:.4f}, "
          f"mass drift {report.mass_drift:.2e}")


def _oracle(scenario: Scenario, args):
    cycle = analytic_limit_cycle(scenario.params)
    print(f"t_off={cycle.t_off:.1f} s")
    print(f"t_on={cycle.t_on:.1f} s")
    print(f"duty={cycle.duty:.4f}")
    print(f"power={cycle.duty * scenario.params.rated_power:.3f} W per unit")


def _verify(scenario: Scenario, args) -> int:
    checks = run_verification(scenario, quick=args.quick, workers=args.threads)
    print(format_table(checks))
    return 0 if all(check.passed for check in checks) else EXIT_FAILED


RUNNERS: tp.Dict[str, tp.Callable] = {
    'simulate-mc': _simulate_mc,
    'simulate-pde': _simulate_pde,
    'assemble': _assemble,
    'compare': _compare,
    'oracle': _oracle,
    'verify': _verify,
}


def _fail(category: str, exc: BaseException, status: int) -> int:
    print(f"error[{category}]: {exc}", file=sys.stderr)
    return status


def main(opts=None) -> int:
    parser = get_parser()
    try:
        args = parser.parse_args(opts)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s:%(name)s:%(message)s")
    if args.threads < 1:
        print("error[usage]: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        scenario = _scenario(args)
        status = RUNNERS[args.command](scenario, args)
    except ScenarioError as exc:
        return _fail("scenario", exc, EXIT_CONFIG)
    except GridError as exc:
        return _fail("grid", exc, EXIT_CONFIG)
    except OracleError as exc:
        return _fail("oracle", exc, EXIT_CONFIG)
    except (ParameterError, EnsembleError) as exc:
        return _fail("parameter", exc, EXIT_CONFIG)
    except StabilityError as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _fail("io", exc, EXIT_FAILED)
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
