"""Space-time grids and dense field containers.

All fields live on uniform (time x space) grids with the spatial direction
periodic.  A field knows its coordinate frame: ``macro`` (unit torus),
``micro`` (torus of length 1/eps) or ``plane`` (large-torus surrogate).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class GridSpec:
    """Uniform grid: nt slices starting at t0 with spacing dt; nx cells on a torus."""

    t0: float
    dt: float
    nt: int
    nx: int
    x_period: float = 1.0

    @property
    def dx(self) -> float:
        return self.x_period / self.nx

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt)

    def xs(self) -> np.ndarray:
        return self.dx * np.arange(self.nx)

    def t_index(self, t: float) -> int:
        return int(round((t - self.t0) / self.dt))

    def compatible(self, other: "GridSpec", tol: float = 1e-12) -> bool:
        return (self.nx == other.nx
                and abs(self.dt - other.dt) <= tol * max(self.dt, other.dt)
                and abs(self.x_period - other.x_period) <= tol)


@dataclass
class SpaceTimeField:
    """Dense real values on a GridSpec, tagged with frame and eps."""

    grid: GridSpec
    values: np.ndarray
    frame: str = "macro"   # macro | micro | plane
    epsilon: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nt, self.grid.nx):
            raise ValueError(f"values shape {self.values.shape} != grid ({self.grid.nt}, {self.grid.nx})")

    def slice_at(self, t: float) -> np.ndarray:
        return self.values[self.grid.t_index(t)]

    def spatial_mean(self) -> np.ndarray:
        return self.values.mean(axis=1)

    def quadrature(self) -> float:
        """Midpoint-rule integral over the full space-time box."""
        return float(self.values.sum() * self.grid.dt * self.grid.dx)

    # -- persistence: raw f64 grid + JSON header ----------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        self.values.astype("<f8").tofile(path.with_suffix(".f64"))
        header = {
            "frame": self.frame,
            "epsilon": self.epsilon,
            "shape": [self.grid.nt, self.grid.nx],
            "t0": self.grid.t0,
            "dt": self.grid.dt,
            "x_period": self.grid.x_period,
        }
        path.with_suffix(".json").write_text(json.dumps(header, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "SpaceTimeField":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        nt, nx = header["shape"]
        values = np.fromfile(path.with_suffix(".f64"), dtype="<f8").reshape(nt, nx)
        grid = GridSpec(t0=header["t0"], dt=header["dt"], nt=nt, nx=nx,
                        x_period=header["x_period"])
        return cls(grid=grid, values=values, frame=header["frame"], epsilon=header["epsilon"])


def parabolic_distance(t, x, x_period: float = 1.0):
    """|(t,x)| = sqrt|t| + |x| with |x| the torus distance."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    xd = np.abs(np.mod(x + x_period / 2, x_period) - x_period / 2)
    return np.sqrt(np.abs(t)) + xd
