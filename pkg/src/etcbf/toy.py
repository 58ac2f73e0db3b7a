"""One-dimensional relative-degree-one scenario: ``x' = a(t) + u`` with ``b(x) = x``.

The drift ``a(t)`` is hidden from the controller, whose model starts with
zero drift and learns a constant correction at each event. A CLF pulls the
state toward a negative target, so the barrier is what keeps ``x >= 0``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .cbf_core import ClassK, ClfSpec, ControlBounds, HocbfSpec, gradient_oracle
from .event_engine import (
    AdaptiveModel,
    EmptyFeasibleBoxError,
    EventBounds,
    LimitValues,
    RobustHocbf,
    RobustTerm,
    Scenario,
    limit_values_rd1,
    relative_degree_one_terms,
)
from .numerics import DEFAULT_GRID, Box
from .plant import DisturbanceProcess, PlantInstance, SensorModel

# joint coordinates [y, e, ė]
Y, E, DE = range(3)


@dataclass(frozen=True)
class ToyParams:
    a_low: float = -0.2
    a_high: float = 0.2
    x0: float = 2.0
    target: float = -1.0
    epsilon: float = 1.0
    p: float = 1.0
    u_max: float = 1.0
    w: float = 0.2
    nu: float = 0.1
    s: float = 0.2
    T: float = 10.0

    def __post_init__(self):
        if not self.a_low <= self.a_high:
            raise ValueError("ToyParams drift support must satisfy a_low <= a_high")
        for name in ("epsilon", "p", "u_max", "w", "nu", "s", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ToyParams.{name} must be positive")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def toy_terms(correction: float) -> RobustHocbf:
    """Split of ``b' + b = (c + u + ė) + (y + e)`` for the scalar model ``ȳ' = c + u``."""

    def restrict(box: Box) -> Box:
        lo, hi = box.lower.copy(), box.upper.copy()
        lo[E] = max(lo[E], -lo[Y])
        if lo[E] > hi[E]:
            raise EmptyFeasibleBoxError("no point of the event box lies in C_1")
        return Box(lo, hi)

    terms = (
        RobustTerm("drift", lambda y: np.asarray(correction), ()),
        RobustTerm("control", lambda y: np.asarray(1.0), ()),
        RobustTerm("error", lambda y: y[DE], (DE,)),
        RobustTerm("alpha", lambda y: y[Y] + y[E], (Y, E)),
    )
    return RobustHocbf(1, 1, 1, terms, (), restrict)


def _barrier(x):
    return float(x[0])


def _grad(x):
    return np.array([1.0])


class ToyScenario(Scenario):
    name = "toy"
    columns = ("t", "x", "x_bar", "e", "edot", "u", "delta", "b", "c", "event_flag", "qp_status")
    units = ("s", "-", "-", "-", "1/s", "1/s", "-", "-", "1/s", "-", "-")
    relative_degree = 1

    def __init__(self, params: ToyParams = None, resample_period: float = 2.5,
                 shape: str = "smooth", scale: float = 1.0, sensor: SensorModel = None,
                 limit_method: str = "terms"):
        self.params = params or ToyParams()
        if limit_method not in ("terms", "generic"):
            raise ValueError("limit_method must be 'terms' or 'generic'")
        self.limit_method = limit_method
        self.resample_period = resample_period
        self.shape = shape
        self.scale = scale
        p = self.params
        self.sensor = sensor or SensorModel(20.0, 1)
        self.bounds = EventBounds([p.w], ([p.nu],), [p.s])
        self.control_bounds = ControlBounds([-p.u_max], [p.u_max])
        self.clf = ClfSpec([p.target], p.epsilon, p.p)
        self.hocbf = HocbfSpec(_barrier, 1, gradient_oracle(_grad, _barrier), (ClassK.identity(),))
        self.x0 = np.array([p.x0])
        self.horizon = p.T

    def make_plant(self, seed: int) -> PlantInstance:
        p = self.params
        rng = np.random.default_rng(seed)
        dist = DisturbanceProcess([self.scale * p.a_low], [self.scale * p.a_high],
                                  self.resample_period, rng, self.shape)

        def field(x, u, sigma):
            return sigma + u

        return PlantInstance(field, self.x0, dist, None, np.random.default_rng([seed, 1]))

    def make_model(self) -> AdaptiveModel:
        ones = np.ones((1, 1))
        return AdaptiveModel(lambda x: np.zeros(1), lambda x: ones, self.x0.copy())

    def robust_hocbf(self, model: AdaptiveModel) -> RobustHocbf:
        if self.limit_method == "generic":
            return relative_degree_one_terms(_barrier, _grad, model, ClassK.identity())
        return toy_terms(float(model.correction[0]))

    def limit_values(self, model, u_sign, grid: int = DEFAULT_GRID) -> LimitValues:
        return limit_values_rd1(self.robust_hocbf(model), model.state, self.bounds, u_sign, grid)

    def log_row(self, truth, model, error, u, delta) -> dict:
        return {
            "x": float(truth.x[0]), "x_bar": float(model.state[0]),
            "e": float(error.e[0]), "edot": float(error.derivatives[0][0]),
            "u": float(u[0]), "delta": float(delta), "b": float(truth.x[0]),
            "c": float(model.correction[0]),
        }

    def describe(self) -> dict:
        return {"params": asdict(self.params), "disturbance": {
            "resample_period": self.resample_period, "shape": self.shape, "scale": self.scale}}
