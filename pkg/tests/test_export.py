# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.

import numpy as np
import pytest
import yaml

from tclsim.compare import run_comparison
from tclsim.export import (
    FORMAT_VERSION, export_operators, export_pde, export_results, load_operators, read_table,
    write_density_family, write_power)
from tclsim.fvm import FvmConfig, assemble, simulate_pde, stationary
from tclsim.model import TclParams
from tclsim.scenario import load_scenario

SMALL = {
    'sim.n_units': 200,
    'sim.horizon': 300.,
    'sim.burn_in': 60.,
    'sim.snapshot_every': 300.,
    'signal.start': 60.,
    'signal.length': 120.,
    'fvm.cells_per_band': 120,
}


@pytest.fixture(scope="module")
def model():
    return assemble(TclParams(), FvmConfig(cells_per_band=120))


def test_write_power(tmp_path):
    path = tmp_path / "power.tsv"
    write_power(path, np.array([0., 60.]), np.array([1000., 1234.5]), np.array([0.1, 0.12345]))
    lines = path.read_text().splitlines()
    assert lines[0] == "time\tpower_W\ton_fraction"
    assert lines[1] == "0.000\t1000.000000\t0.1000000000"
    header, rows = read_table(path)
    assert header == ["time", "power_W", "on_fraction"]
    np.testing.assert_allclose(rows[:, 1], [1000., 1234.5])


def test_empty_density_family(tmp_path):
    assert write_density_family(tmp_path, "mc", []) == []
    assert list(tmp_path.iterdir()) == []


def test_operators_reload(tmp_path, model):
    paths = export_operators(model, tmp_path)
    assert sorted(path.name for path in paths) == ["A.coo", "B0.coo", "B1.coo", "grid.yaml"]
    first = (tmp_path / "A.coo").read_text().splitlines()
    assert first[0] == f"# shape {model.grid.n_cells} {model.grid.n_cells}"
    assert first[1] == "row\tcol\tvalue"
    loaded = load_operators(tmp_path)
    assert loaded.grid == model.grid
    assert loaded.params == model.params
    for name in ["A", "B0", "B1"]:
        assert abs(getattr(loaded, name) - getattr(model, name)).max() == 0
    content = yaml.safe_load((tmp_path / "grid.yaml").read_text())
    assert content['format_version'] == FORMAT_VERSION
    assert content['segments']['0b']['left'] == 2.
    assert content['segments']['1b']['right'] == 5.


def test_load_operators_version(tmp_path, model):
    export_operators(model, tmp_path)
    grid_file = tmp_path / "grid.yaml"
    content = yaml.safe_load(grid_file.read_text())
    content['format_version'] = FORMAT_VERSION + 1
    grid_file.write_text(yaml.safe_dump(content))
    with pytest.raises(ValueError):
        load_operators(tmp_path)


def test_export_pde(tmp_path, model):
    scenario = load_scenario(overrides=SMALL)
    result = simulate_pde(model, stationary(model), scenario.signal, scenario.sim.horizon, 300.)
    paths = export_pde(result, scenario, model.grid, tmp_path)
    assert [path.name for path in paths] == [
        "power_pde.tsv", "density_pde_off.tsv", "density_pde_on.tsv",
        "snapshot_pde_000000.tsv", "snapshot_pde_000300.tsv", "manifest_pde.yaml"]
    _, power = read_table(tmp_path / "power_pde.tsv")
    np.testing.assert_allclose(power[:, 1], result.on_fraction * 100. * 200, atol=1e-5)
    header, density = read_table(tmp_path / "density_pde_on.tsv")
    assert header[0] == "time"
    assert len(header) == len(model.grid.common_edges)
    assert density[:, 0].tolist() == [0., 300.]
    header, snapshot = read_table(tmp_path / "snapshot_pde_000300.tsv")
    assert header == ["cell_center", "f0", "f1"]
    assert len(snapshot) == len(model.grid.common_edges) - 1
    np.testing.assert_allclose(snapshot[:, 2], density[1, 1:])
    mass = np.sum(snapshot[:, 1:]) * model.grid.h
    assert mass == pytest.approx(1., abs=1e-6)


def test_export_results(tmp_path):
    scenario = load_scenario(overrides=SMALL)
    result = run_comparison(scenario)
    export_results(result, scenario, tmp_path / "first")
    export_results(result, scenario, tmp_path / "second")
    names = sorted(path.name for path in (tmp_path / "first").iterdir())
    assert names == sorted([
        "power_mc.tsv", "power_pde.tsv", "report.yaml", "manifest.yaml",
        "manifest_mc.yaml", "manifest_pde.yaml",
        "density_mc_off.tsv", "density_mc_on.tsv", "density_pde_off.tsv", "density_pde_on.tsv",
        "snapshot_mc_000000.tsv", "snapshot_mc_000300.tsv",
        "snapshot_pde_000000.tsv", "snapshot_pde_000300.tsv"])
    for name in names:
        assert (tmp_path / "first" / name).read_bytes() == \
            (tmp_path / "second" / name).read_bytes()
    manifest = yaml.safe_load((tmp_path / "first" / "manifest.yaml").read_text())
    assert manifest['seed'] == 42
    assert manifest['signal_checksum'] == scenario.signal.checksum()
    assert "report.yaml" in manifest['files']
    report = yaml.safe_load((tmp_path / "first" / "report.yaml").read_text())
    assert report['n_units'] == 200
    assert report['snapshot_times'] == [0., 300.]
