# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
"""Result and operator files.

Every file is written atomically. Tables are tab separated with a header row and
fixed number formats, structured summaries are YAML with sorted keys, so that
exporting the same results twice gives byte identical files.
"""

from dataclasses import asdict
import logging
from pathlib import Path
import typing as tp

from dora.utils import write_and_rename
import numpy as np
import scipy
from scipy import sparse
import torch
import yaml

from . import __version__
from .compare import pde_density
from .fvm import BilinearModel, HybridGrid
from .model import TclParams
from .montecarlo import EmpiricalDensity

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
OPERATORS = ['A', 'B0', 'B1']


def versions() -> tp.Dict[str, str]:
    return {
        'tclsim': __version__,
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'torch': str(torch.__version__),
    }


def write_yaml(path: Path, content: dict):
    with write_and_rename(path, mode="w") as f:
        yaml.safe_dump(content, f, sort_keys=True, default_flow_style=False)


def write_power(path: Path, times: np.ndarray, power: np.ndarray, on_fraction: np.ndarray):
    """Power series, `power` is the whole population power in W."""
    with write_and_rename(path, mode="w") as f:
        f.write("time\tpower_W\ton_fraction\n")
        for t, p, q in zip(times, power, on_fraction):
            f.write(f"{t:.3f}\t{p:.6f}\t{q:.10f}\n")


def write_snapshot(path: Path, density: EmpiricalDensity):
    with write_and_rename(path, mode="w") as f:
        f.write("cell_center\tf0\tf1\n")
        for x, a, b in zip(density.centers, density.f0, density.f1):
            f.write(f"{x:.6f}\t{a:.10f}\t{b:.10f}\n")


def write_snapshots(folder: Path, prefix: str,
                    snapshots: tp.Sequence[EmpiricalDensity]) -> tp.List[Path]:
    """One `cell_center f0 f1` file per snapshot, named after the snapshot time in seconds."""
    paths = []
    for snapshot in snapshots:
        paths.append(folder / f"snapshot_{prefix}_{int(round(snapshot.time)):06d}.tsv")
        write_snapshot(paths[-1], snapshot)
    return paths


def write_density_family(folder: Path, prefix: str,
                         snapshots: tp.Sequence[EmpiricalDensity]) -> tp.List[Path]:
    """One file per mode, one row per snapshot: time then the density at each cell center."""
    if not snapshots:
        return []
    centers = snapshots[0].centers
    paths = []
    for mode, suffix in enumerate(['off', 'on']):
        path = folder / f"density_{prefix}_{suffix}.tsv"
        with write_and_rename(path, mode="w") as f:
            f.write("time\t" + "\t".join(f"{x:.6f}" for x in centers) + "\n")
            for snapshot in snapshots:
                values = snapshot.f1 if mode else snapshot.f0
                f.write(f"{snapshot.time:.3f}\t" +
                        "\t".join(f"{v:.10f}" for v in values) + "\n")
        paths.append(path)
    return paths


def read_table(path: Path) -> tp.Tuple[tp.List[str], np.ndarray]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    rows = [[float(v) for v in line.split("\t")] for line in lines[1:]]
    return header, np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))


def manifest(scenario, backend: str) -> dict:
    return {
        'format_version': FORMAT_VERSION,
        'backend': backend,
        'versions': versions(),
        'seed': scenario.sim.master_seed,
        'signal_checksum': scenario.signal.checksum(),
        'clamped': scenario.clamped,
        'config': scenario.config,
    }


def export_mc(result, scenario, folder: Path) -> tp.List[Path]:
    """Files of a Monte Carlo run (`McResult`)."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    paths = [folder / "power_mc.tsv"]
    write_power(paths[0], result.times, result.power, result.on_fraction)
    paths += write_density_family(folder, "mc", result.snapshots)
    paths += write_snapshots(folder, "mc", result.snapshots)
    paths.append(folder / "manifest_mc.yaml")
    content = manifest(scenario, 'mc')
    content['events'] = _plain(asdict(result.events))
    write_yaml(paths[-1], content)
    return paths


def export_pde(result, scenario, grid: HybridGrid, folder: Path) -> tp.List[Path]:
    """Files of a finite volume run (`PdeResult`), power scaled to `sim.n_units`."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    paths = [folder / "power_pde.tsv"]
    write_power(paths[0], result.times, result.power * scenario.sim.n_units,
                result.on_fraction)
    densities = [pde_density(grid, state.values, state.time) for state in result.snapshots]
    paths += write_density_family(folder, "pde", densities)
    paths += write_snapshots(folder, "pde", densities)
    paths.append(folder / "manifest_pde.yaml")
    content = manifest(scenario, 'pde')
    content['mass_drift'] = float(result.mass_drift)
    content['min_density'] = float(result.min_value)
    write_yaml(paths[-1], content)
    return paths


def export_results(result, scenario, folder: Path) -> tp.List[Path]:
    """All files of a comparison (`ComparisonResult`): both backends, report and manifest."""
    folder = Path(folder)
    paths = export_mc(result.mc, scenario, folder)
    paths += export_pde(result.pde, scenario, result.model.grid, folder)
    paths.append(folder / "report.yaml")
    write_yaml(paths[-1], _plain(result.report.to_dict()))
    paths.append(folder / "manifest.yaml")
    content = manifest(scenario, 'compare')
    content['files'] = sorted(path.name for path in paths if path.name != "manifest.yaml")
    write_yaml(paths[-1], content)
    logger.info("Wrote %d files to %s", len(paths), folder)
    return paths


def _plain(value):
    """Python scalars only, so YAML output stays free of numpy tags."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def _write_coo(path: Path, matrix: sparse.spmatrix):
    coo = sparse.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with write_and_rename(path, mode="w") as f:
        f.write(f"# shape {coo.shape[0]} {coo.shape[1]}\n")
        f.write("row\tcol\tvalue\n")
        for idx in order:
            f.write(f"{coo.row[idx]}\t{coo.col[idx]}\t{coo.data[idx]:.17g}\n")


def _read_coo(path: Path) -> sparse.csr_matrix:
    lines = Path(path).read_text().splitlines()
    rows_cols = lines[0].split()[2:]
    shape = (int(rows_cols[0]), int(rows_cols[1]))
    rows, cols, vals = [], [], []
    for line in lines[2:]:
        row, col, value = line.split("\t")
        rows.append(int(row))
        cols.append(int(col))
        vals.append(float(value))
    return sparse.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def export_operators(model: BilinearModel, folder: Path) -> tp.List[Path]:
    """Coordinate files of A, B0, B1 and the grid manifest needed to interpret them."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in OPERATORS:
        paths.append(folder / f"{name}.coo")
        _write_coo(paths[-1], getattr(model, name))
    grid = model.grid
    segments = {}
    for name in ['0a', '0b', '1b', '1c']:
        part = grid.segment(name)
        edges = grid.segment_edges(name)
        segments[name] = {'start': part.start, 'stop': part.stop,
                          'left': float(edges[0]), 'right': float(edges[-1])}
    content = {
        'format_version': FORMAT_VERSION,
        'versions': versions(),
        'grid': {
            't_min': grid.t_min, 't_max': grid.t_max, 'h': grid.h,
            'n_left': grid.n_left, 'n_band': grid.n_band, 'n_right': grid.n_right,
            'n_cells': grid.n_cells,
        },
        'segments': segments,
        'params': asdict(model.params),
        'model': 'dF/dt = (A + eps0 * B0 + eps1 * B1) F, F cell averages [1/K]',
    }
    paths.append(folder / "grid.yaml")
    write_yaml(paths[-1], content)
    return paths


def load_operators(folder: Path) -> BilinearModel:
    folder = Path(folder)
    content = yaml.safe_load((folder / "grid.yaml").read_text())
    if content.get('format_version') != FORMAT_VERSION:
        raise ValueError(f"Unsupported operator format {content.get('format_version')}.")
    grid = HybridGrid(**{key: content['grid'][key] for key in
                         ['t_min', 't_max', 'h', 'n_left', 'n_band', 'n_right']})
    matrices = {name: _read_coo(folder / f"{name}.coo") for name in OPERATORS}
    return BilinearModel(grid=grid, params=TclParams(**content['params']), **matrices)
