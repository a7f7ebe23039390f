"""Synthetic benchmark objectives on the unit box.

Each objective is a standard global-optimization test function with its
published formula and native bounds. Inputs are taken in the unit box and
mapped to the native bounds; outputs are affinely rescaled to [0, 1] using
frozen constants computed once from a dense reference grid (stored in
``data/objective_scaling.json`` together with grid-refined minima and the
per-objective GP hyper-parameters fixed from dense noise-free fits).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np

from .acquisition import SearchDomain
from .errors import OutOfDomain
from .gp import KernelParams

__all__ = [
    "Objective",
    "eval_objective",
    "get_objective",
    "objective_names",
    "reference_grid",
    "default_kernel",
]

_SCALING_FILE = "objective_scaling.json"

# points per dimension of the ~1e6-point reference grid, by dimension
GRID_PER_DIM = {1: 1_000_000, 2: 1000, 3: 100, 4: 32}


def _cubic1d(x):
    t = x[:, 0]
    return t**3 - t


def _linear1d(x):
    return x[:, 0].copy()


def _ursem_waves(x):
    x1, x2 = x[:, 0], x[:, 1]
    return (
        -0.9 * x1**2
        + (x2**2 - 4.5 * x2**2) * x1 * x2
        + 4.7 * np.cos(3 * x1 - x2**2 * (2 + x1)) * np.sin(2.5 * np.pi * x1)
    )


def _adjiman(x):
    x1, x2 = x[:, 0], x[:, 1]
    return np.cos(x1) * np.sin(x2) - x1 / (x2**2 + 1)


def _deceptive(x):
    alpha = np.array([1.0 / 3.0, 2.0 / 3.0])
    g = np.zeros_like(x)
    for i in range(2):
        xi = x[:, i]
        a = alpha[i]
        conds = [
            xi <= 0,
            xi < 0.8 * a,
            xi < a,
            xi < (1 + 4 * a) / 5,
            xi <= 1,
        ]
        choices = [
            xi,
            -xi / a + 0.8,
            5 * xi / a - 4,
            5 * (xi - a) / (a - 1) + 1,
            (xi - 1) / (1 - a) + 0.8,
        ]
        g[:, i] = np.select(conds, choices, default=xi - 1)
    return -(0.5 * (g[:, 0] + g[:, 1])) ** 2


def _mixture_of_gaussians_02(x):
    x1, x2 = x[:, 0], x[:, 1]
    return -(
        0.7 * np.exp(-10 * (0.8 * (x1 + 0.2) ** 2 + 0.7 * (x2 + 0.5) ** 2))
        + 0.3 * np.exp(-8 * (0.3 * (x1 - 0.8) ** 2 + 0.6 * (x2 - 0.3) ** 2))
    )


_HARTMANN3_A = np.array([[3, 0.1, 3, 0.1], [10, 10, 10, 10], [30, 35, 30, 35]], dtype=float)
_HARTMANN3_P = np.array(
    [
        [0.36890, 0.46990, 0.10910, 0.03815],
        [0.11700, 0.43870, 0.87320, 0.57430],
        [0.26730, 0.74700, 0.55470, 0.88280],
    ]
)
_HARTMANN_C = np.array([1.0, 1.2, 3.0, 3.2])

_HARTMANN4_A = np.array(
    [
        [10, 3, 17, 3.5, 1.7, 8],
        [0.05, 10, 17, 0.1, 8, 14],
        [3, 3.5, 1.7, 10, 17, 8],
        [17, 8, 0.05, 10, 0.1, 14],
    ]
)
_HARTMANN4_P = np.array(
    [
        [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
        [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
        [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
        [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
    ]
)


def _hartmann3(x):
    acc = np.zeros(x.shape[0])
    for i in range(4):
        di = np.sum(_HARTMANN3_A[:, i] * (x - _HARTMANN3_P[:, i]) ** 2, axis=1)
        acc += _HARTMANN_C[i] * np.exp(-di)
    return -acc


def _hartmann4(x):
    acc = np.zeros(x.shape[0])
    for i in range(4):
        di = np.sum(_HARTMANN4_A[:, i] * (x - _HARTMANN4_P[:, i]) ** 2, axis=1)
        acc += _HARTMANN_C[i] * np.exp(-di)
    return (1.1 - acc) / 0.839


_RAW_FUNCS: dict[str, tuple[Callable, np.ndarray, np.ndarray]] = {
    "cubic1d": (_cubic1d, np.array([-1.0]), np.array([1.0])),
    "linear1d": (_linear1d, np.array([0.0]), np.array([1.0])),
    "ursem_waves": (_ursem_waves, np.array([-0.9, -1.2]), np.array([1.2, 1.2])),
    "adjiman": (_adjiman, np.array([-1.0, -1.0]), np.array([2.0, 1.0])),
    "deceptive": (_deceptive, np.array([0.0, 0.0]), np.array([1.0, 1.0])),
    "mixture_of_gaussians_02": (
        _mixture_of_gaussians_02,
        np.array([-1.0, -1.0]),
        np.array([1.0, 1.0]),
    ),
    "hartmann3": (_hartmann3, np.zeros(3), np.ones(3)),
    "hartmann4": (_hartmann4, np.zeros(4), np.ones(4)),
}


@dataclass(frozen=True)
class Objective:
    """A deterministic objective scaled to the unit box and ~[0, 1] outputs."""

    name: str
    dim: int
    native_lower: np.ndarray
    native_upper: np.ndarray
    scale_lo: float               # reference-grid minimum of the raw output
    scale_hi: float               # reference-grid maximum of the raw output
    known_min_unit: np.ndarray    # refined minimizer, unit coordinates
    known_min_raw: float          # refined raw minimum
    raw_fn: Callable

    @property
    def domain(self) -> SearchDomain:
        return SearchDomain.unit(self.dim)

    @property
    def known_min_scaled(self) -> float:
        return (self.known_min_raw - self.scale_lo) / (self.scale_hi - self.scale_lo)

    def to_native(self, u: np.ndarray) -> np.ndarray:
        return self.native_lower + np.atleast_2d(u) * (self.native_upper - self.native_lower)

    def eval_raw(self, x_native: np.ndarray) -> np.ndarray:
        return self.raw_fn(np.atleast_2d(np.asarray(x_native, dtype=float)))

    def eval_scaled(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        raw = self.raw_fn(self.to_native(u))
        return (raw - self.scale_lo) / (self.scale_hi - self.scale_lo)


@lru_cache(maxsize=1)
def _scaling_data() -> dict:
    path = resources.files("prefbatch").joinpath("data").joinpath(_SCALING_FILE)
    with path.open("r", encoding="utf-8") as fh:
        return json.load(fh)


def objective_names() -> list[str]:
    return sorted(_RAW_FUNCS)


@lru_cache(maxsize=None)
def get_objective(name: str) -> Objective:
    if name not in _RAW_FUNCS:
        raise KeyError(f"unknown objective {name!r}; known: {objective_names()}")
    fn, lo, hi = _RAW_FUNCS[name]
    meta = _scaling_data()[name]
    return Objective(
        name=name,
        dim=len(lo),
        native_lower=lo,
        native_upper=hi,
        scale_lo=meta["scale_lo"],
        scale_hi=meta["scale_hi"],
        known_min_unit=np.asarray(meta["min_location_unit"]),
        known_min_raw=meta["min_value_raw"],
        raw_fn=fn,
    )


def default_kernel(name: str) -> tuple[KernelParams, float]:
    """Frozen GP hyper-parameters for an objective (fit once on dense
    noise-free scaled observations) plus the fitted observation noise."""
    meta = _scaling_data()[name]["gp"]
    kernel = KernelParams(
        variance=meta["variance"], lengthscales=np.asarray(meta["lengthscales"])
    )
    return kernel, meta["noise_sd"]


def eval_objective(obj: Objective, x: np.ndarray) -> float:
    """Scaled objective value at a unit-box point; raises OutOfDomain."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[-1] != obj.dim:
        raise ValueError(f"{obj.name} expects dimension {obj.dim}")
    if np.any(x < -1e-9) or np.any(x > 1 + 1e-9):
        raise OutOfDomain(f"point {x} outside the unit box")
    return float(obj.eval_scaled(x)[0])


def reference_grid(dim: int) -> np.ndarray:
    """The dense unit-box grid (~1e6 points) defining the scaling constants."""
    n = GRID_PER_DIM[dim]
    axes = [np.linspace(0.0, 1.0, n)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)
