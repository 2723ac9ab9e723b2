# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.

from concurrent.futures import CancelledError
import os
import typing as tp

import numpy as np


def rebin(edges_src: np.ndarray, density_src: np.ndarray, edges_dst: np.ndarray) -> np.ndarray:
    """Conservative rebinning of a piecewise constant density.

    The cumulative mass is linear inside each source cell, so interpolating it at the
    destination edges gives the exact mass of every destination cell. Mass outside
    the source range is zero.
    """
    edges_src = np.asarray(edges_src, dtype=np.float64)
    edges_dst = np.asarray(edges_dst, dtype=np.float64)
    cdf = np.concatenate([[0.], np.cumsum(np.asarray(density_src) * np.diff(edges_src))])
    mass = np.diff(np.interp(edges_dst, edges_src, cdf))
    return mass / np.diff(edges_dst)


def l1_distance(edges: np.ndarray, first: np.ndarray, second: np.ndarray) -> float:
    return float(np.sum(np.abs(first - second) * np.diff(edges)))


def default_threads() -> int:
    return os.cpu_count() or 1


class DummyPoolExecutor:
    """Runs submitted work lazily in the calling thread, same interface as a real pool."""
    class DummyResult:
        def __init__(self, func, _dict, *args, **kwargs):
            self.func = func
            self._dict = _dict
            self.args = args
            self.kwargs = kwargs

        def result(self):
            if self._dict["run"]:
                return self.func(*self.args, **self.kwargs)
            else:
                raise CancelledError()

    def __init__(self, workers=0):
        self._dict = {"run": True}

    def submit(self, func: tp.Callable, *args, **kwargs):
        return DummyPoolExecutor.DummyResult(func, self._dict, *args, **kwargs)

    def shutdown(self, *_, **__):
        self._dict["run"] = False

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, exc_tb):
        return
