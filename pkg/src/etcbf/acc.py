"""Adaptive cruise control: follow a constant-speed lead vehicle safely.

State ``x = (v, z)``: ego speed and gap to the lead vehicle. The real vehicle
has disturbances sigma_1..3 and resistance ``F_r``; the controller's model
uses a different resistance ``F_n`` plus two correction terms ``h1, h2`` that
are updated at every event. Safety is ``b(x) = z - l_p >= 0`` (relative
degree two, identity class-K functions).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .cbf_core import AffineDynamics, ClassK, ClfSpec, ControlBounds, HocbfSpec, LieTerms
from .event_engine import (
    AdaptiveModel,
    EmptyFeasibleBoxError,
    EventBounds,
    LimitValues,
    RobustHocbf,
    RobustTerm,
    Scenario,
    limit_values_high,
)
from .numerics import DEFAULT_GRID, Box
from .plant import DisturbanceProcess, Measurement, PlantInstance, SensorModel

# joint coordinates [v̄, z̄, e1, e2, ė1, ė2, ë1, ë2]
V, Z, E1, E2, DE1, DE2, DDE1, DDE2 = range(8)


@dataclass(frozen=True)
class AccParams:
    v_p: float = 13.89
    v_d: float = 24.0
    M: float = 1650.0
    g: float = 9.81
    f0: float = 0.1
    f1: float = 5.0
    f2: float = 0.25
    g0: float = 0.3
    g1: float = 10.0
    g2: float = 0.5
    c_a: float = 0.6
    c_d: float = 0.6
    l_p: float = 10.0
    s1: float = 0.4
    s2: float = 0.5
    w2: float = 1.0
    nu21: float = 0.5
    nu22: float = 0.2
    p: float = 1.0
    epsilon: float = 10.0
    T: float = 30.0
    v0: float = 20.0
    z0: float = 100.0
    sigma1: tuple = (-0.2, 0.2)
    sigma2: tuple = (-2.0, 2.0)
    sigma3: tuple = (0.9, 1.0)

    def __post_init__(self):
        positive = ("M", "g", "f0", "f1", "f2", "g0", "g1", "g2", "c_a", "c_d", "l_p",
                    "s1", "s2", "w2", "nu21", "nu22", "p", "epsilon", "T")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"AccParams.{name} must be positive")
        for name in ("sigma1", "sigma2", "sigma3"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"AccParams.{name} must be a finite interval")
            object.__setattr__(self, name, (lo, hi))

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @property
    def true_coeffs(self) -> tuple[float, float, float]:
        return (self.f0, self.f1, self.f2)

    @property
    def model_coeffs(self) -> tuple[float, float, float]:
        return (self.g0, self.g1, self.g2)

    @property
    def u_max(self) -> float:
        return self.c_a * self.M * self.g

    @property
    def u_min(self) -> float:
        return -self.c_d * self.M * self.g

    def scaled_disturbance(self, k: float) -> "AccParams":
        """sigma_1 and sigma_2 supports scaled by ``k`` (sigma_3 is a gain, left alone)."""
        return replace(self, sigma1=tuple(k * s for s in self.sigma1),
                       sigma2=tuple(k * s for s in self.sigma2))


def resistance(v, coeffs):
    """``c0 sgn(v) + c1 v + c2 v^2`` with ``sgn(0) = 0``."""
    c0, c1, c2 = coeffs
    if type(v) is float:
        sgn = (v > 0) - (v < 0)
        return c0 * sgn + c1 * v + c2 * v * v
    return c0 * np.sign(v) + c1 * v + c2 * v * v


def resistance_slope(v, coeffs):
    _, c1, c2 = coeffs
    return c1 + 2.0 * c2 * v


# --------------------------------------------------------------------------
# true plant and adaptive model
# --------------------------------------------------------------------------

def true_field(params: AccParams):
    M, v_p, coeffs = params.M, params.v_p, params.true_coeffs

    def f(x, u, sigma):
        v = float(x[0])
        s1, s2, s3 = sigma.tolist()
        vdot = s1 + s3 * float(u[0]) / M - resistance(v, coeffs) / M
        return np.array([vdot, s2 + v_p - v])

    return f


def true_second_derivative(params: AccParams):
    M, coeffs = params.M, params.true_coeffs

    def f(x, u, sigma, rate, xdot):
        vddot = rate[0] + rate[2] * u[0] / M - resistance_slope(x[0], coeffs) * xdot[0] / M
        return np.array([vddot, rate[1] - xdot[0]])

    return f


def make_model(params: AccParams, h1: float = 0.0, h2: float = 0.0) -> AdaptiveModel:
    M, v_p, coeffs = params.M, params.v_p, params.model_coeffs
    g_mat = np.array([[1.0 / M], [0.0]])

    def f(x):
        v = float(x[0])
        return np.array([-resistance(v, coeffs) / M, v_p - v])

    def g(x):
        return g_mat

    def second(x, u, corr, xdot):
        return np.array([-resistance_slope(x[0], coeffs) * xdot[0] / M, -xdot[0]])

    return AdaptiveModel(f, g, np.array([params.v0, params.z0]), np.array([h1, h2]),
                         second_derivative=second)


def hocbf_spec(params: AccParams) -> HocbfSpec:
    """``b = z - l_p`` with identity class-K functions, derivatives via the affine structure."""
    l_p = params.l_p

    def barrier(x):
        return float(x[1] - l_p)

    def oracle(x, dyn: AffineDynamics) -> LieTerms:
        fx = dyn.f(x)
        # b' = f_z, and f_z depends on v only through -v
        return LieTerms(np.array([x[1] - l_p, fx[1]]), float(-fx[0]), -np.atleast_1d(dyn.g(x)[0]))

    return HocbfSpec(barrier, 2, oracle, (ClassK.identity(), ClassK.identity()))


def clf_spec(params: AccParams) -> ClfSpec:
    return ClfSpec(np.array([params.v_d, 0.0]), params.epsilon, params.p, np.array([1.0, 0.0]))


def event_bounds(params: AccParams) -> EventBounds:
    inf = math.inf
    return EventBounds(np.array([inf, params.w2]),
                       (np.array([inf, params.nu21]), np.array([inf, params.nu22])),
                       np.array([params.s1, params.s2]))


# --------------------------------------------------------------------------
# robust constraint: term split, restriction, closed-form limit values
# --------------------------------------------------------------------------

def acc_hocbf_terms(params: AccParams, h1: float, h2: float) -> tuple[RobustTerm, ...]:
    """Five-way split of ``z'' + 2 z' + z - l_p`` in joint coordinates.

    drift ``-h1 + F_n(v̄)/M``, control ``-1/M``, error ``ë2``, remainder
    ``A = h2 + v_p - v̄ + ė2`` (that is z') and alpha ``A + z̄ + e2 - l_p``
    (that is psi_1).
    """
    M, v_p, l_p, coeffs = params.M, params.v_p, params.l_p, params.model_coeffs

    def remainder(y):
        return h2 + v_p - y[V] + y[DE2]

    return (
        RobustTerm("drift", lambda y: -h1 + resistance(y[V], coeffs) / M, (V,)),
        RobustTerm("control", lambda y: np.asarray(-1.0 / M), ()),
        RobustTerm("error", lambda y: y[DDE2], (DDE2,)),
        RobustTerm("remainder", remainder, (V, DE2)),
        RobustTerm("alpha", lambda y: remainder(y) + y[Z] + y[E2] - l_p, (V, Z, E2, DE2)),
    )


def acc_restrict(params: AccParams, h2: float):
    """Tighten the e2 and ė2 ranges to what ``y + e in C_1 ∩ C_2`` allows.

    The terms depend on (z̄, e2) only through ``B = z̄ + e2 - l_p`` and on
    (v̄, ė2) only through ``A``, so clamping the ranges so that ``B >= 0`` at
    the lowest z̄ and ``A + B >= 0`` at the highest v̄ gives the same term
    minima as extremizing over the exact set.
    """
    v_p, l_p = params.v_p, params.l_p

    def restrict(box: Box) -> Box:
        lo, hi = box.lower.copy(), box.upper.copy()
        lo[E2] = max(lo[E2], l_p - lo[Z])
        b_hi = hi[Z] + hi[E2] - l_p
        lo[DE2] = max(lo[DE2], -b_hi - (h2 + v_p - hi[V]))
        if lo[E2] > hi[E2] or lo[DE2] > hi[DE2]:
            raise EmptyFeasibleBoxError("no point of the event box lies in C_1 ∩ C_2")
        return Box(lo, hi)

    return restrict


def acc_robust_hocbf(params: AccParams, h1: float, h2: float) -> RobustHocbf:
    return RobustHocbf(2, 2, 1, acc_hocbf_terms(params, h1, h2), (),
                       acc_restrict(params, h2))


def acc_limit_values(params: AccParams, anchor, h1: float, h2: float, u_sign=1.0,
                     grid: int = DEFAULT_GRID) -> LimitValues:
    """Closed-form term minima over the event box; grid fallback if it reaches v̄ <= 0."""
    v_k, z_k = float(anchor[0]), float(anchor[1])
    M, v_p, l_p = params.M, params.v_p, params.l_p
    v_lo, v_hi = v_k - params.s1, v_k + params.s1
    z_lo, z_hi = z_k - params.s2, z_k + params.s2
    if v_lo <= 0:
        return limit_values_high(acc_robust_hocbf(params, h1, h2), anchor,
                                 event_bounds(params), u_sign, grid)
    e2_lo = max(-params.w2, l_p - z_lo)
    b_hi = z_hi + params.w2 - l_p
    de2_lo = max(-params.nu21, -b_hi - (h2 + v_p - v_hi))
    if e2_lo > params.w2 or de2_lo > params.nu21:
        raise EmptyFeasibleBoxError("no point of the event box lies in C_1 ∩ C_2")
    drift = -h1 + float(resistance(v_lo, params.model_coeffs)) / M
    rem = h2 + v_p - v_hi + de2_lo
    alpha = rem + z_lo + e2_lo - l_p
    return LimitValues(drift, alpha, -params.nu22, rem, np.array([-1.0 / M]))


def constraint_value(params: AccParams, h1, h2, v_bar, z_bar, e2, e2dot, e2ddot, u):
    """Pointwise left side of the robust ACC condition (equals z'' + 2z' + z - l_p)."""
    drift = -h1 + resistance(v_bar, params.model_coeffs) / params.M
    a = h2 + params.v_p - v_bar + e2dot
    return drift - u / params.M + e2ddot + a + a + z_bar + e2 - params.l_p


def acc_synchronize(params: AccParams, model: AdaptiveModel, measurement: Measurement,
                    u_prev) -> AdaptiveModel:
    """Copy (v, z) into the model, then ``h1 -= ë2(t_k)`` and ``h2 += ė2(t_k)``."""
    new = model.copy()
    v, z = (float(c) for c in measurement.x)
    zdot = float(measurement.derivs[0][1])
    zddot = float(measurement.derivs[1][1])
    u_prev = float(np.atleast_1d(u_prev)[0])
    h1, h2 = new.correction
    new.state = np.array([v, z])
    e2dot = zdot - (h2 + params.v_p - v)
    e2ddot = zddot - (float(resistance(v, params.model_coeffs)) - u_prev) / params.M + h1
    new.correction = np.array([h1 - e2ddot, h2 + e2dot])
    new.accumulated = new.accumulated + np.array([-e2ddot, e2dot])
    new.n_updates += 1
    return new


# --------------------------------------------------------------------------
# scenario
# --------------------------------------------------------------------------

ACC_COLUMNS = ("t", "v", "z", "v_bar", "z_bar", "e2", "e2dot", "e2ddot", "u", "delta",
               "b", "psi1", "h1", "h2", "event_flag", "qp_status")
ACC_UNITS = ("s", "m/s", "m", "m/s", "m", "m", "m/s", "m/s^2", "N", "-",
             "m", "m", "m/s^2", "m/s", "-", "-")


@dataclass(frozen=True)
class DisturbanceConfig:
    resample_period: float = 2.5
    shape: str = "smooth"
    scale: float = 1.0


class AccScenario(Scenario):
    name = "acc"
    columns = ACC_COLUMNS
    units = ACC_UNITS
    relative_degree = 2

    def __init__(self, params: AccParams = None, disturbance: DisturbanceConfig = None,
                 sensor: SensorModel = None, limit_method: str = "closed_form"):
        params = params or AccParams()
        self.disturbance = disturbance or DisturbanceConfig()
        self.nominal_params = params
        self.params = params.scaled_disturbance(self.disturbance.scale)
        self.sensor = sensor or SensorModel(20.0, 2)
        if self.sensor.derivative_orders < 2:
            raise ValueError("ACC needs z and z'' from the sensor")
        if limit_method not in ("closed_form", "grid"):
            raise ValueError("limit_method must be 'closed_form' or 'grid'")
        self.limit_method = limit_method
        self.bounds = event_bounds(params)
        self.control_bounds = ControlBounds(np.array([params.u_min]), np.array([params.u_max]))
        self.clf = clf_spec(params)
        self.hocbf = hocbf_spec(params)
        self.x0 = np.array([params.v0, params.z0])
        self.horizon = params.T

    def make_plant(self, seed: int) -> PlantInstance:
        p = self.params
        rng = np.random.default_rng(seed)
        lows = [p.sigma1[0], p.sigma2[0], p.sigma3[0]]
        highs = [p.sigma1[1], p.sigma2[1], p.sigma3[1]]
        dist = DisturbanceProcess(lows, highs, self.disturbance.resample_period, rng,
                                  self.disturbance.shape)
        noise_rng = np.random.default_rng([seed, 1])
        return PlantInstance(true_field(p), self.x0, dist, true_second_derivative(p), noise_rng)

    def make_model(self) -> AdaptiveModel:
        return make_model(self.params)

    def robust_hocbf(self, model: AdaptiveModel) -> RobustHocbf:
        h1, h2 = model.correction
        return acc_robust_hocbf(self.params, h1, h2)

    def limit_values(self, model: AdaptiveModel, u_sign, grid: int = DEFAULT_GRID) -> LimitValues:
        h1, h2 = model.correction
        if self.limit_method == "grid":
            return limit_values_high(self.robust_hocbf(model), model.state, self.bounds, u_sign, grid)
        return acc_limit_values(self.params, model.state, h1, h2, u_sign, grid)

    def synchronize(self, model, measurement, u_prev):
        return acc_synchronize(self.params, model, measurement, u_prev)

    def log_row(self, truth, model, error, u, delta) -> dict:
        v, z = truth.x
        zdot = truth.derivs[0][1]
        b = z - self.params.l_p
        return {
            "v": float(v), "z": float(z),
            "v_bar": float(model.state[0]), "z_bar": float(model.state[1]),
            "e2": float(error.e[1]), "e2dot": float(error.derivatives[0][1]),
            "e2ddot": float(error.derivatives[1][1]),
            "u": float(u[0]), "delta": float(delta),
            "b": float(b), "psi1": float(zdot + b),
            "h1": float(model.correction[0]), "h2": float(model.correction[1]),
        }

    def energy_integrand(self, row: dict) -> float:
        # reporting only: uses the true resistance, which the controller never sees
        p = self.params
        return ((row["u"] - float(resistance(row["v"], p.true_coeffs))) / p.M) ** 2

    def describe(self) -> dict:
        return {"params": asdict(self.params), "disturbance": asdict(self.disturbance)}
