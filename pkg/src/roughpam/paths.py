"""Brownian motion and Brownian bridges on uniform time grids.

Bridges are obtained from free paths by the explicit pinning transform

    B_{0,t}(s) = B(s) - (s/t) B(t),
    B^{x,y}_{0,t}(s) = B_{0,t}(s) + (s/t) y + (1 - s/t) x,

so one Gaussian stream serves both the free path and its bridge.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, ParameterError
from .rng import STREAM_PATHS, standard_normals

__all__ = [
    "PathGrid",
    "BrownianPath",
    "BridgeSpec",
    "sample_bm",
    "sample_bm_batch",
    "bridge_from_bm",
    "sample_bridge",
    "pin_bridges",
    "trapezoid_weights",
]


@dataclass(frozen=True)
class PathGrid:
    t: float
    steps: int

    def __post_init__(self):
        if not self.t > 0.0:
            raise ParameterError(f"horizon t must be positive, got {self.t}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ParameterError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def times(self) -> np.ndarray:
        s = np.arange(self.steps + 1) * (self.t / self.steps)
        s[-1] = self.t
        return s

    @property
    def dt(self) -> float:
        return self.t / self.steps

    def subgrid(self, factor: int) -> "PathGrid":
        if self.steps % factor:
            raise ParameterError(f"{factor} does not divide {self.steps} steps")
        return PathGrid(self.t, self.steps // factor)


def trapezoid_weights(grid: PathGrid) -> np.ndarray:
    w = np.full(grid.steps + 1, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    return w


@dataclass(frozen=True)
class BrownianPath:
    grid: PathGrid
    positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[0] != self.grid.steps + 1:
            raise GridMismatchError("positions do not match the grid length")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def start(self) -> np.ndarray:
        return self.positions[0]


@dataclass(frozen=True)
class BridgeSpec:
    t: float
    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self):
        if not self.t > 0.0:
            raise ParameterError(f"bridge horizon must be positive, got {self.t}")
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        y = tuple(float(v) for v in np.atleast_1d(self.y))
        if len(x) != len(y):
            raise ParameterError("bridge endpoints have different dimensions")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


def _increments(seed: int, index: int, grid: PathGrid, d: int) -> np.ndarray:
    z = standard_normals(seed, STREAM_PATHS, index, (grid.steps, d))
    return z * np.sqrt(grid.dt)


def sample_bm(seed: int, grid: PathGrid, x0, index: int = 0) -> BrownianPath:
    """Brownian path started at ``x0``; ``index`` selects the per-path substream."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    inc = _increments(seed, index, grid, x0.size)
    pos = np.empty((grid.steps + 1, x0.size))
    pos[0] = x0
    np.cumsum(inc, axis=0, out=pos[1:])
    pos[1:] += x0
    return BrownianPath(grid, pos)


def sample_bm_batch(seed: int, grid: PathGrid, d: int, indices) -> np.ndarray:
    """Origin-started paths for each substream index, shape ``(n, L + 1, d)``."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.size, grid.steps + 1, d))
    for i, idx in enumerate(indices):
        np.cumsum(_increments(seed, int(idx), grid, d), axis=0, out=out[i, 1:])
    return out


def pin_bridges(paths: np.ndarray, grid: PathGrid) -> np.ndarray:
    """Vectorized ``B(s) - (s/t) B(t)`` over a leading batch of origin paths."""
    frac = (grid.times / grid.t)[:, None]
    out = paths - frac * paths[..., -1:, :]
    out[..., -1, :] = 0.0
    return out


def bridge_from_bm(path: BrownianPath) -> BrownianPath:
    if np.any(path.positions[0] != 0.0):
        raise ParameterError("bridge_from_bm needs a path started at the origin")
    return BrownianPath(path.grid, pin_bridges(path.positions, path.grid))


def sample_bridge(seed: int, grid: PathGrid, spec: BridgeSpec, index: int = 0) -> BrownianPath:
    """Pinned bridge from ``spec.x`` at time 0 to ``spec.y`` at time ``t``."""
    if not np.isclose(grid.t, spec.t, rtol=1e-12, atol=0.0):
        raise GridMismatchError(f"grid horizon {grid.t} differs from bridge horizon {spec.t}")
    x = np.asarray(spec.x)
    y = np.asarray(spec.y)
    base = bridge_from_bm(sample_bm(seed, grid, np.zeros_like(x), index)).positions
    frac = (grid.times / grid.t)[:, None]
    pos = base + frac * y + (1.0 - frac) * x
    pos[0] = x
    pos[-1] = y
    return BrownianPath(grid, pos)
