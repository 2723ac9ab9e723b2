# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.

import argparse

import yaml

from tclsim.cli import COMMANDS, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_USAGE, get_parser, main

SMALL_SCENARIO = """\
name: small
signal:
  start: 60.
  length: 120.
sim:
  n_units: 200
  horizon: 300.
  burn_in: 60.
  snapshot_every: 300.
fvm:
  cells_per_band: 120
"""


def test_oracle(capsys):
    assert main(["oracle"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("t_off=961")
    assert out[1] == "t_on=1130.7 s"
    assert out[2] == "duty=0.1052"


def test_oracle_unreachable(tmp_path, capsys):
    path = tmp_path / "warm.yaml"
    path.write_text("params:\n  b0: 6.0988e-5\n")
    assert main(["oracle", "--scenario", str(path)]) == EXIT_CONFIG
    assert "error[oracle]" in capsys.readouterr().err


def test_assemble(tmp_path, capsys):
    assert main(["assemble", "-o", str(tmp_path), "--cells", "60"]) == 0
    names = sorted(path.name for path in tmp_path.iterdir())
    assert names == ["A.coo", "B0.coo", "B1.coo", "grid.yaml"]
    grid = yaml.safe_load((tmp_path / "grid.yaml").read_text())['grid']
    assert grid['n_band'] == 60
    assert "cells" in capsys.readouterr().out


def test_output_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("TCLSIM_OUT", str(tmp_path / "env"))
    assert main(["assemble", "--cells", "60"]) == 0
    assert (tmp_path / "env" / "grid.yaml").exists()


def test_bad_scenario(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("params:\n  t_min: 5.\n  t_max: 2.\n")
    assert main(["oracle", "--scenario", str(path)]) == EXIT_CONFIG
    assert "error[scenario]" in capsys.readouterr().err
    assert main(["oracle", "--scenario", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_misaligned_cells(tmp_path, capsys):
    assert main(["assemble", "-o", str(tmp_path), "--cells", "100"]) == EXIT_CONFIG
    assert "error[scenario]" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main(["oracle", "--nope"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert main(["oracle", "-j", "0"]) == EXIT_USAGE


def test_substep_limit(tmp_path, capsys):
    path = tmp_path / "stiff.yaml"
    path.write_text("fvm:\n  max_substeps: 1\n" + "sim:\n  horizon: 120.\n")
    assert main(["simulate-pde", "--scenario", str(path), "-o", str(tmp_path)]) == \
        EXIT_NUMERICAL
    assert "error[numerical]" in capsys.readouterr().err


def test_compare(tmp_path, capsys):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_SCENARIO)
    out = tmp_path / "out"
    assert main(["compare", "--scenario", str(path), "-o", str(out), "-j", "2"]) == 0
    assert "relative power RMSE" in capsys.readouterr().out
    report = yaml.safe_load((out / "report.yaml").read_text())
    assert report['scenario'] == 'small'
    assert (out / "power_mc.tsv").exists()
    assert (out / "density_pde_on.tsv").exists()


def test_simulate_backends(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_SCENARIO)
    assert main(["simulate-mc", "--scenario", str(path), "-o", str(tmp_path / "mc")]) == 0
    assert (tmp_path / "mc" / "manifest_mc.yaml").exists()
    assert main(["simulate-pde", "--scenario", str(path), "-o", str(tmp_path / "pde")]) == 0
    assert (tmp_path / "pde" / "power_pde.tsv").exists()


def test_coarse_grid_is_numerical_error(tmp_path, capsys):
    out = str(tmp_path / "pde")
    assert main(["simulate-pde", "--cells", "60", "-o", out]) == EXIT_NUMERICAL
    assert "error[numerical]" in capsys.readouterr().err


def test_every_flag_has_help():
    parser = get_parser()
    subparsers = next(action for action in parser._actions
                      if isinstance(action, argparse._SubParsersAction))
    for name in COMMANDS:
        for action in subparsers.choices[name]._actions:
            assert action.help, f"{name} {action.option_strings} has no help"
