"""Fixed-step integration and grid extremization over axis-aligned boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_GRID = 21

# (state, control, time) -> state derivative
VectorField = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


class IntegrationError(RuntimeError):
    """Raised when a vector field returns a non-finite derivative."""

    def __init__(self, t: float, message: str = "non-finite derivative"):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t


class EvaluationError(ValueError):
    """Raised when an extremized function is non-finite at a grid point."""

    def __init__(self, point: np.ndarray):
        super().__init__(f"non-finite function value at {np.asarray(point).tolist()}")
        self.point = np.asarray(point)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``lower <= y <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-D vectors of equal length")
        if np.any(lo > hi):
            raise ValueError(f"box lower bound exceeds upper bound: {lo} > {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, center, halfwidth) -> "Box":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        halfwidth = np.broadcast_to(np.asarray(halfwidth, dtype=float), center.shape)
        return cls(center - halfwidth, center + halfwidth)

    @property
    def dimension(self) -> int:
        return self.lower.size

    def contains(self, y, tol: float = 0.0) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all(y >= self.lower - tol) and np.all(y <= self.upper + tol))

    def corners(self) -> np.ndarray:
        axes = [np.unique([lo, hi]) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def integrate_step(field: VectorField, x, u, t: float, dt: float) -> np.ndarray:
    """Advance ``x`` by one classical RK4 step of length ``dt`` with ``u`` held."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    half = 0.5 * dt
    k1 = field(x, u, t)
    k2 = field(x + half * k1, u, t + half)
    k3 = field(x + half * k2, u, t + half)
    k4 = field(x + dt * k3, u, t + dt)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    # a single sum is NaN/inf exactly when some entry is
    if not math.isfinite(float(x_next.sum())):
        raise IntegrationError(t)
    return x_next


def grid_axes(box: Box, grid: int) -> list[np.ndarray]:
    """Per-dimension grid coordinates; degenerate dimensions get a single point."""
    if grid < 2:
        raise ValueError("grid must have at least 2 points per dimension")
    return [
        np.array([lo]) if lo == hi else np.linspace(lo, hi, grid)
        for lo, hi in zip(box.lower, box.upper)
    ]


def box_extremize(
    f: Callable[[Sequence[np.ndarray]], np.ndarray],
    box: Box,
    mode: str = "min",
    grid: int = DEFAULT_GRID,
) -> float:
    """Extremum of ``f`` over a regular grid that includes every corner of ``box``.

    ``f`` receives a sequence of coordinate arrays, one per box dimension, that
    broadcast against each other (an open mesh), so ``lambda y: y[0] + y[1]**2``
    works both on scalars and on the whole grid at once.
    """
    if mode not in ("min", "max"):
        raise ValueError(f"mode must be 'min' or 'max', got {mode!r}")
    axes = grid_axes(box, grid)
    mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
    shape = tuple(a.size for a in axes)
    values = np.broadcast_to(np.asarray(f(mesh), dtype=float), shape)
    finite = np.isfinite(values)
    if not finite.all():
        idx = np.unravel_index(np.argmin(finite), shape)
        raise EvaluationError(np.array([a[i] for a, i in zip(axes, idx)]))
    return float(values.min() if mode == "min" else values.max())
