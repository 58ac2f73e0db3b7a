"""The hidden "real" plant: seeded disturbances, true dynamics, sampled sensor.

The controller only ever sees :class:`Measurement` objects produced by
:func:`sample_sensor`; the true vector field stays private to the plant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .numerics import IntegrationError, integrate_step

# (x, u, sigma) -> xdot
TrueField = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
# (x, u, sigma, sigma_rate, xdot) -> xddot
TrueSecondDerivative = Callable[
    [np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray
]

_KNOT_EPS = 1e-9
SHAPES = ("hold", "ramp", "smooth")


class SimulationBlowUp(RuntimeError):
    def __init__(self, t: float, state):
        super().__init__(f"plant state became non-finite at t={t:.6g}: {np.asarray(state).tolist()}")
        self.t = t
        self.state = np.asarray(state)


class DisturbanceProcess:
    """Bounded random process with uniform knots every ``resample_period`` seconds.

    ``shape="hold"`` keeps each knot constant until the next one (piecewise
    constant); ``shape="ramp"`` interpolates linearly between consecutive
    knots (Lipschitz path); ``shape="smooth"`` blends them with the smoothstep
    ``3τ² - 2τ³`` (continuously differentiable path). Every value lies in
    ``[low, high]`` because it is a convex combination of knots.
    """

    def __init__(self, low, high, resample_period: float, rng: np.random.Generator,
                 shape: str = "hold"):
        self.low = np.atleast_1d(np.asarray(low, dtype=float))
        self.high = np.atleast_1d(np.asarray(high, dtype=float))
        if self.low.shape != self.high.shape or np.any(self.low > self.high):
            raise ValueError("disturbance supports must be intervals with low <= high")
        if not resample_period > 0:
            raise ValueError("resample_period must be positive")
        if shape not in SHAPES:
            raise ValueError(f"unknown disturbance shape {shape!r}")
        self.period = float(resample_period)
        self.shape = shape
        self._rng = rng
        self._knots: list[np.ndarray] = []
        self._cached = None

    @property
    def n_channels(self) -> int:
        return self.low.size

    def _knot(self, k: int) -> np.ndarray:
        while len(self._knots) <= k:
            v = self._rng.uniform(self.low, self.high)
            assert np.all(v >= self.low) and np.all(v <= self.high)
            self._knots.append(v)
        return self._knots[k]

    def _pair(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        if self._cached is None or self._cached[0] != k:
            self._cached = (k, self._knot(k), self._knot(k + 1))
        return self._cached[1], self._cached[2]

    def segment(self, t: float) -> int:
        return int(np.floor(t / self.period + _KNOT_EPS))

    def value(self, t: float, segment: Optional[int] = None) -> np.ndarray:
        """Value at ``t``; pass ``segment`` to evaluate the left piece up to its end."""
        k = self.segment(t) if segment is None else segment
        if self.shape == "hold":
            return self._knot(k)
        tau = min(max(t / self.period - k, 0.0), 1.0)
        a, b = self._pair(k)
        if self.shape == "smooth":
            tau = tau * tau * (3.0 - 2.0 * tau)
        return a + (b - a) * tau

    def rate(self, t: float, segment: Optional[int] = None) -> np.ndarray:
        """Right derivative of the path at ``t``."""
        if self.shape == "hold":
            return np.zeros(self.n_channels)
        k = self.segment(t) if segment is None else segment
        slope = (self._knot(k + 1) - self._knot(k)) / self.period
        if self.shape == "smooth":
            tau = min(max(t / self.period - k, 0.0), 1.0)
            slope = slope * 6.0 * tau * (1.0 - tau)
        return slope


@dataclass(frozen=True)
class SensorModel:
    sample_rate: float = 20.0
    derivative_orders: int = 1
    # per-order halfwidths: entry 0 for the state, entry i for the i-th derivative
    noise_halfwidths: Optional[tuple] = None

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if self.noise_halfwidths is not None:
            hw = tuple(np.asarray(h, dtype=float) for h in self.noise_halfwidths)
            if any(np.any(h < 0) for h in hw):
                raise ValueError("noise halfwidths must be nonnegative")
            object.__setattr__(self, "noise_halfwidths", hw)

    @property
    def period(self) -> float:
        return 1.0 / self.sample_rate

    def n_samples(self, horizon: float) -> int:
        """Sample count over ``[0, horizon]`` including both ends."""
        return int(round(horizon * self.sample_rate)) + 1

    def halfwidth(self, order: int, n: int) -> np.ndarray:
        if self.noise_halfwidths is None or order >= len(self.noise_halfwidths):
            return np.zeros(n)
        return np.broadcast_to(self.noise_halfwidths[order], (n,)).copy()


@dataclass(frozen=True)
class Measurement:
    """One sensor sample: centers plus halfwidths of the reported intervals."""

    t: float
    x: np.ndarray
    derivs: tuple[np.ndarray, ...]
    halfwidths: tuple[np.ndarray, ...] = ()

    def halfwidth(self, order: int) -> np.ndarray:
        if order < len(self.halfwidths):
            return self.halfwidths[order]
        return np.zeros_like(self.x)

    def interval(self, order: int = 0) -> tuple[np.ndarray, np.ndarray]:
        c = self.x if order == 0 else self.derivs[order - 1]
        h = self.halfwidth(order)
        return c - h, c + h


@dataclass(frozen=True)
class Truth:
    """Exact plant quantities at a sample instant (harness/reporting only)."""

    t: float
    x: np.ndarray
    derivs: tuple[np.ndarray, ...]
    sigma: np.ndarray


class PlantInstance:
    """Real plant hidden behind the sensor interface."""

    def __init__(self, field: TrueField, x0, disturbance: Optional[DisturbanceProcess] = None,
                 second_derivative: Optional[TrueSecondDerivative] = None,
                 noise_rng: Optional[np.random.Generator] = None, t0: float = 0.0):
        self._field = field
        self._second = second_derivative
        self._disturbance = disturbance
        self._noise_rng = noise_rng if noise_rng is not None else np.random.default_rng(0)
        self.state = np.array(x0, dtype=float)
        self.t = float(t0)

    def _sigma(self, t: float, segment: Optional[int] = None) -> np.ndarray:
        if self._disturbance is None:
            return np.zeros(0)
        return self._disturbance.value(t, segment)

    def _sigma_rate(self, t: float) -> np.ndarray:
        if self._disturbance is None:
            return np.zeros(0)
        return self._disturbance.rate(t)

    def step(self, u, dt: float) -> "PlantInstance":
        """Advance the true state by ``dt`` with ``u`` and the disturbance path held to this segment."""
        seg = None if self._disturbance is None else self._disturbance.segment(self.t)

        def f(x, uu, t):
            return self._field(x, uu, self._sigma(t, seg))

        try:
            self.state = integrate_step(f, self.state, u, self.t, dt)
        except IntegrationError as exc:
            raise SimulationBlowUp(exc.t, self.state) from exc
        self.t += dt
        return self

    def truth(self, u, orders: int = 1) -> Truth:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        sigma = self._sigma(self.t)
        xdot = self._field(self.state, u, sigma)
        derivs = [xdot]
        if orders >= 2:
            if self._second is None:
                raise ValueError("plant has no second-derivative model")
            derivs.append(self._second(self.state, u, sigma, self._sigma_rate(self.t), xdot))
        if orders > 2:
            raise ValueError("at most two derivatives are available from the plant")
        return Truth(self.t, self.state.copy(), tuple(derivs), sigma.copy())


def step_plant(plant: PlantInstance, u, dt: float) -> PlantInstance:
    return plant.step(u, dt)


def sample_sensor(plant: PlantInstance, sensor: SensorModel, u) -> Measurement:
    """Measure state and derivatives at the current instant under held control ``u``."""
    truth = plant.truth(u, max(sensor.derivative_orders, 1))
    n = truth.x.size
    values = [truth.x, *truth.derivs[: sensor.derivative_orders]]
    halfwidths = []
    centers = []
    for order, v in enumerate(values):
        h = sensor.halfwidth(order, n)
        if np.any(h > 0):
            v = v + plant._noise_rng.uniform(-h, h)
        centers.append(np.array(v, dtype=float))
        halfwidths.append(h)
    return Measurement(truth.t, centers[0], tuple(centers[1:]), tuple(halfwidths))
