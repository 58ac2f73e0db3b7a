"""Event-triggered robust HOCBF control for plants with unknown dynamics.

The controller keeps an adaptive affine model ``xbar' = f_a(xbar) + g_a(xbar) u``
alongside the plant. At each event it copies the measured state into the
model, folds the measured derivative error into the model drift, bounds every
term of the HOCBF condition over the box of states and errors that can be
reached before the next event, and solves one small QP. Between events the
control is held and the loop only watches the error, its derivatives and the
model excursion against their thresholds.

Joint coordinates
-----------------
Limit values are taken over a *joint box* whose coordinates are laid out as
``[y (n), e (n), e^(1) (n), ..., e^(m) (n)]`` where ``y`` is the model state,
``e`` the state error and ``e^(i)`` its i-th time derivative. A robust term
is a vectorized function of that coordinate list and declares which indices
it reads.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .cbf_core import AffineDynamics, ClfSpec, ControlBounds, HocbfSpec, LinearRow, clf_row
from .numerics import DEFAULT_GRID, Box, box_extremize, integrate_step
from .plant import Measurement, PlantInstance, SensorModel, Truth, sample_sensor
from .qp import QpProblem, QpStatus, solve

log = logging.getLogger(__name__)

TERM_KINDS = ("drift", "control", "error", "remainder", "alpha")


class EmptyFeasibleBoxError(ValueError):
    """The joint box has no point inside C_1 ∩ ... ∩ C_m."""


class QpInfeasibleError(RuntimeError):
    def __init__(self, t: float, log_so_far=None):
        super().__init__(f"event QP infeasible at t={t:.6g}")
        self.t = t
        self.log = log_so_far


class Trigger(str, Enum):
    INITIAL = "initial"
    EVENT1 = "event1"
    EVENT2 = "event2"
    EVENT3 = "event3"
    PERIODIC = "periodic"

    @property
    def flag(self) -> int:
        return {"event1": 1, "event2": 2, "event3": 3}.get(self.value, 4)


# --------------------------------------------------------------------------
# model, errors, bounds
# --------------------------------------------------------------------------

@dataclass
class AdaptiveModel:
    """Controller-side affine model with an additive, event-updated drift correction."""

    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    state: np.ndarray
    correction: np.ndarray = None
    # running sum of the error-derivative vectors folded in at events
    accumulated: np.ndarray = None
    n_updates: int = 0
    # (xbar, u, correction, xbar_dot) -> xbar_ddot; finite differences when absent
    second_derivative: Optional[Callable] = None
    # scenario-specific extra state (e.g. named accumulators)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.state = np.array(self.state, dtype=float)
        n = self.state.size
        if self.correction is None:
            self.correction = np.zeros(n)
        if self.accumulated is None:
            self.accumulated = np.zeros(n)
        self.correction = np.array(self.correction, dtype=float)
        self.accumulated = np.array(self.accumulated, dtype=float)

    @property
    def n(self) -> int:
        return self.state.size

    def drift(self, x) -> np.ndarray:
        return self.f(x) + self.correction

    @property
    def dynamics(self) -> AffineDynamics:
        return AffineDynamics(self.drift, self.g)

    def field(self, x, u, t=0.0) -> np.ndarray:
        return self.f(x) + self.correction + self.g(x) @ u

    def derivative(self, order: int, u, x=None) -> np.ndarray:
        x = self.state if x is None else np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        xdot = self.field(x, u)
        if order == 1:
            return xdot
        if order != 2:
            raise ValueError("model derivatives are available up to order 2")
        if self.second_derivative is not None:
            return self.second_derivative(x, u, self.correction, xdot)
        h = 1e-6 * max(1.0, float(np.linalg.norm(x))) / max(1.0, float(np.linalg.norm(xdot)))
        return (self.field(x + h * xdot, u) - self.field(x - h * xdot, u)) / (2 * h)

    def step(self, u, dt: float) -> None:
        self.state = integrate_step(self.field, self.state, np.atleast_1d(u), 0.0, dt)

    def copy(self) -> "AdaptiveModel":
        return replace(self, state=self.state.copy(), correction=self.correction.copy(),
                       accumulated=self.accumulated.copy(), extras=dict(self.extras))


@dataclass(frozen=True)
class ErrorState:
    e: np.ndarray
    derivatives: tuple[np.ndarray, ...]
    # measurement-interval halfwidths per order (0 = state); zeros without noise
    uncertainty: tuple[np.ndarray, ...] = ()

    def worst(self, order: int) -> np.ndarray:
        """Largest magnitude consistent with the measurement intervals."""
        v = self.e if order == 0 else self.derivatives[order - 1]
        h = self.uncertainty[order] if order < len(self.uncertainty) else 0.0
        return np.abs(v) + h


@dataclass(frozen=True)
class EventBounds:
    """Thresholds: ``|e| < w``, ``|e^(i)| < nu[i-1]``, ``|xbar - xbar(t_k)| < s``.

    ``inf`` marks a component that is not monitored; robust terms may not
    depend on it.
    """

    w: np.ndarray
    nu: tuple[np.ndarray, ...]
    s: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        nu = tuple(np.atleast_1d(np.asarray(v, dtype=float)) for v in self.nu)
        s = np.atleast_1d(np.asarray(self.s, dtype=float))
        for v in (w, s, *nu):
            if v.shape != w.shape or np.any(~(v > 0)):
                raise ValueError("event bounds must be strictly positive vectors of equal length")
        if not np.all(np.isfinite(s)):
            raise ValueError("model excursion bounds s must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "s", s)

    @property
    def order(self) -> int:
        return len(self.nu)

    def scaled(self, k: float) -> "EventBounds":
        return EventBounds(self.w * k, tuple(v * k for v in self.nu), self.s * k)


@dataclass(frozen=True)
class LimitValues:
    b_f_min: float
    b_alpha_min: float
    b_e_min: float
    b_R_min: float
    b_g_lim: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b_g_lim", np.atleast_1d(np.asarray(self.b_g_lim, dtype=float)))
        vals = [self.b_f_min, self.b_alpha_min, self.b_e_min, self.b_R_min, *self.b_g_lim]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"limit values must be finite: {vals}")

    @property
    def constant(self) -> float:
        return self.b_f_min + self.b_e_min + self.b_alpha_min + self.b_R_min


@dataclass(frozen=True)
class RobustTerm:
    kind: str
    fn: Callable[[Sequence], object]
    depends: tuple[int, ...] = ()
    component: int = 0  # control component for kind == "control"

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")


@dataclass(frozen=True)
class RobustHocbf:
    """Term decomposition of the HOCBF condition in joint coordinates."""

    n: int
    m: int
    q: int
    terms: tuple[RobustTerm, ...]
    # psi_{i-1}(y + e) >= 0 membership tests, as (fn, depends) pairs
    membership: tuple[tuple[Callable, tuple[int, ...]], ...] = ()
    # sound box tightening implied by membership; identity when absent
    restrict: Optional[Callable[[Box], Box]] = None

    @property
    def dimension(self) -> int:
        return self.n * (self.m + 2)

    def evaluate(self, point) -> dict[str, float]:
        """Sum of each term kind at one joint point (control terms as coefficients)."""
        coords = list(np.asarray(point, dtype=float))
        out = {k: 0.0 for k in TERM_KINDS}
        ctrl = np.zeros(self.q)
        for term in self.terms:
            v = float(np.asarray(term.fn(coords)))
            if term.kind == "control":
                ctrl[term.component] += v
            else:
                out[term.kind] += v
        out["control"] = ctrl
        return out


def joint_point(y, e, derivs) -> np.ndarray:
    return np.concatenate([np.asarray(y, float), np.asarray(e, float),
                           *[np.asarray(d, float) for d in derivs]])


def joint_box(anchor, bounds: EventBounds, m: int) -> Box:
    """Unrestricted joint box; unmonitored (infinite) error components are pinned at 0."""
    anchor = np.asarray(anchor, dtype=float)
    if bounds.order < m:
        raise ValueError(f"need derivative bounds up to order {m}")
    half = [bounds.s, bounds.w, *bounds.nu[:m]]
    centers = [anchor] + [np.zeros_like(anchor)] * (m + 1)
    lo, hi = [], []
    for c, h in zip(centers, half):
        h = np.where(np.isfinite(h), h, 0.0)
        lo.append(c - h)
        hi.append(c + h)
    return Box(np.concatenate(lo), np.concatenate(hi))


def _pinned(bounds: EventBounds, m: int) -> set[int]:
    n = bounds.w.size
    flags = np.concatenate([np.zeros(n, bool), ~np.isfinite(bounds.w),
                            *[~np.isfinite(v) for v in bounds.nu[:m]]])
    return set(np.flatnonzero(flags).tolist())


def restricted_box(robust: RobustHocbf, anchor, bounds: EventBounds) -> Box:
    box = joint_box(anchor, bounds, robust.m)
    pinned = _pinned(bounds, robust.m)
    for term in robust.terms:
        bad = pinned.intersection(term.depends)
        if bad:
            raise ValueError(f"{term.kind} term depends on unmonitored joint coordinates {sorted(bad)}")
    if robust.restrict is not None:
        try:
            box = robust.restrict(box)
        except ValueError as exc:
            raise EmptyFeasibleBoxError(str(exc)) from exc
    for fn, depends in robust.membership:
        if _extremize(fn, depends, box, "max", DEFAULT_GRID) < 0:
            raise EmptyFeasibleBoxError("joint box does not intersect C_1 ∩ ... ∩ C_m")
    return box


def _extremize(fn, depends, box: Box, mode: str, grid: int) -> float:
    mid = 0.5 * (box.lower + box.upper)
    if not depends:
        return float(np.asarray(fn(list(mid))))
    idx = list(depends)
    sub = Box(box.lower[idx], box.upper[idx])

    def wrapped(sub_coords):
        coords = list(mid)
        for i, c in zip(idx, sub_coords):
            coords[i] = c
        return fn(coords)

    return box_extremize(wrapped, sub, mode, grid)


def _limit_values(robust: RobustHocbf, box: Box, u_sign, grid: int) -> LimitValues:
    mins = {k: 0.0 for k in ("drift", "error", "remainder", "alpha")}
    g_lim = np.zeros(robust.q)
    u_sign = np.broadcast_to(np.asarray(u_sign, dtype=float), (robust.q,))
    for term in robust.terms:
        if term.kind == "control":
            mode = "min" if u_sign[term.component] >= 0 else "max"
            g_lim[term.component] += _extremize(term.fn, term.depends, box, mode, grid)
        else:
            mins[term.kind] += _extremize(term.fn, term.depends, box, "min", grid)
    return LimitValues(mins["drift"], mins["alpha"], mins["error"], mins["remainder"], g_lim)


def limit_values_rd1(robust: RobustHocbf, anchor, bounds: EventBounds, u_sign,
                     grid: int = DEFAULT_GRID) -> LimitValues:
    """Worst-case HOCBF terms for a relative-degree-one barrier (no remainder)."""
    if robust.m != 1:
        raise ValueError("limit_values_rd1 needs a relative-degree-one decomposition")
    if any(t.kind == "remainder" for t in robust.terms):
        raise ValueError("relative-degree-one decompositions have no remainder term")
    return _limit_values(robust, restricted_box(robust, anchor, bounds), u_sign, grid)


def limit_values_high(robust: RobustHocbf, anchor, bounds: EventBounds, u_sign,
                      grid: int = DEFAULT_GRID) -> LimitValues:
    """Worst-case HOCBF terms over the high-order joint box (relative degree >= 2)."""
    if robust.m < 2:
        raise ValueError("limit_values_high needs relative degree >= 2")
    return _limit_values(robust, restricted_box(robust, anchor, bounds), u_sign, grid)


def relative_degree_one_terms(barrier, grad, model: AdaptiveModel, alpha) -> RobustHocbf:
    """Generic four-term split for ``b`` of relative degree one.

    ``barrier`` and ``grad`` act on single state vectors; evaluation over the
    grid is point by point, so keep this to low-dimensional states.
    """
    n = model.n
    q = model.g(model.state).shape[1]
    ys, es, ds = slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n)
    everything = tuple(range(3 * n))

    def pointwise(scalar_fn):
        def fn(coords):
            arrs = np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in coords])
            flat = np.stack([a.ravel() for a in arrs], axis=1)
            out = np.array([scalar_fn(p) for p in flat])
            return out.reshape(arrs[0].shape)
        return fn

    def drift(p):
        return float(grad(p[ys] + p[es]) @ model.drift(p[ys]))

    def error(p):
        return float(grad(p[ys] + p[es]) @ p[ds])

    def alpha_term(p):
        return float(alpha(barrier(p[ys] + p[es])))

    def control(i):
        return lambda p: float(grad(p[ys] + p[es]) @ model.g(p[ys])[:, i])

    terms = [
        RobustTerm("drift", pointwise(drift), tuple(range(2 * n))),
        RobustTerm("error", pointwise(error), everything),
        RobustTerm("alpha", pointwise(alpha_term), tuple(range(2 * n))),
    ]
    terms += [RobustTerm("control", pointwise(control(i)), tuple(range(2 * n)), i) for i in range(q)]
    member = (pointwise(lambda p: barrier(p[ys] + p[es])), tuple(range(2 * n)))
    return RobustHocbf(n, 1, q, tuple(terms), (member,))


def robust_constraint_row(lv: LimitValues) -> LinearRow:
    """``b_g_lim . u + (b_f + b_e + b_alpha + b_R) >= 0``; no slack."""
    return LinearRow(lv.b_g_lim, lv.constant, 0.0)


def build_event_qp(row_cbf: LinearRow, row_clf: Optional[LinearRow],
                   control_bounds: ControlBounds, p: float) -> QpProblem:
    """QP over ``(u, delta)``: ``min |u|^2 + p delta^2`` under the CBF, CLF and input bounds."""
    q = control_bounds.dimension
    H = np.diag(np.r_[np.full(q, 2.0), 2.0 * p])
    rows, rhs = [], []
    for row in (row_cbf, row_clf):
        if row is None:
            continue
        if row.u_coeffs.size != q:
            raise ValueError("constraint row does not match the control dimension")
        # a.z + c >= 0  ->  -a.z <= c
        rows.append(-np.r_[row.u_coeffs, row.delta_coeff])
        rhs.append(row.offset)
    lo = np.r_[control_bounds.u_min, -np.inf]
    hi = np.r_[control_bounds.u_max, np.inf]
    return QpProblem(H, np.zeros(q + 1), np.array(rows).reshape(-1, q + 1), np.array(rhs), lo, hi)


def compute_error(measurement: Measurement, model: AdaptiveModel, u_current,
                  orders: Optional[int] = None) -> ErrorState:
    x = np.asarray(measurement.x, dtype=float)
    if x.shape != model.state.shape:
        raise ValueError(f"measurement dimension {x.shape} does not match model {model.state.shape}")
    orders = len(measurement.derivs) if orders is None else orders
    derivs = []
    for i in range(1, orders + 1):
        d = np.asarray(measurement.derivs[i - 1], dtype=float)
        if d.shape != x.shape:
            raise ValueError("derivative measurement has the wrong dimension")
        derivs.append(d - model.derivative(i, u_current))
    unc = tuple(measurement.halfwidth(i) for i in range(orders + 1))
    return ErrorState(x - model.state, tuple(derivs), unc)


def detect_event(error: ErrorState, model: AdaptiveModel, bounds: EventBounds, anchor,
                 theta: float = 1.0) -> Optional[tuple[Trigger, int]]:
    """First violated threshold at this sample as ``(trigger, order)``, else ``None``."""
    if np.any(error.worst(0) >= theta * bounds.w):
        return Trigger.EVENT1, 0
    for i in range(1, min(bounds.order, len(error.derivatives)) + 1):
        if np.any(error.worst(i) >= theta * bounds.nu[i - 1]):
            return Trigger.EVENT2, i
    if np.any(np.abs(model.state - np.asarray(anchor)) >= theta * bounds.s):
        return Trigger.EVENT3, 0
    return None


def synchronize(model: AdaptiveModel, measurement: Measurement, u_prev) -> AdaptiveModel:
    """Copy the measured state into the model and fold the derivative error into its drift."""
    new = model.copy()
    new.state = np.array(measurement.x, dtype=float)
    edot = np.asarray(measurement.derivs[0], dtype=float) - new.derivative(1, u_prev)
    new.accumulated = new.accumulated + edot
    new.correction = new.correction + edot
    new.n_updates += 1
    return new


# --------------------------------------------------------------------------
# scenario contract and the event loop
# --------------------------------------------------------------------------

class Scenario:
    """Everything the loops need to know about one plant/controller pairing.

    Subclasses provide the plant, the model, the barrier decompositions and a
    log-row layout; the defaults here implement the generic event machinery.
    """

    name = "scenario"
    columns: tuple[str, ...] = ()
    relative_degree = 1
    sensor: SensorModel
    bounds: EventBounds
    control_bounds: ControlBounds
    clf: ClfSpec
    hocbf: HocbfSpec
    x0: np.ndarray
    horizon: float = 10.0

    def make_plant(self, seed: int) -> PlantInstance:
        raise NotImplementedError

    def make_model(self) -> AdaptiveModel:
        raise NotImplementedError

    def robust_hocbf(self, model: AdaptiveModel) -> RobustHocbf:
        raise NotImplementedError

    def limit_values(self, model: AdaptiveModel, u_sign, grid: int = DEFAULT_GRID) -> LimitValues:
        robust = self.robust_hocbf(model)
        fn = limit_values_rd1 if robust.m == 1 else limit_values_high
        return fn(robust, model.state, self.bounds, u_sign, grid)

    def synchronize(self, model: AdaptiveModel, measurement: Measurement, u_prev) -> AdaptiveModel:
        return synchronize(model, measurement, u_prev)

    def log_row(self, truth: Truth, model: AdaptiveModel, error: ErrorState,
                u, delta: float) -> dict:
        raise NotImplementedError

    def energy_integrand(self, row: dict) -> float:
        u = np.atleast_1d(row["u"])
        return float(u @ u)


@dataclass
class LoopConfig:
    horizon: Optional[float] = None
    dt_internal: float = 1e-3
    grid: int = DEFAULT_GRID
    theta: float = 1.0
    infeasible_policy: str = "halt"  # or "clamp"

    def __post_init__(self):
        if self.infeasible_policy not in ("halt", "clamp"):
            raise ValueError("infeasible_policy must be 'halt' or 'clamp'")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")


@dataclass(frozen=True)
class EventRecord:
    t_k: float
    trigger: Trigger
    order: int
    control: np.ndarray
    delta: float
    qp_status: QpStatus
    limit_values: Optional[LimitValues]
    anchor: np.ndarray
    robust_row: Optional[LinearRow] = None
    sign_violation: bool = False
    sample: int = 0


@dataclass
class TrajectoryLog:
    columns: tuple[str, ...]
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    mode: str = "event"
    scenario: str = ""
    seed: int = 0
    wall_time: float = 0.0
    halted: Optional[str] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def qp_count(self) -> int:
        return len(self.events)

    @property
    def infeasible_count(self) -> int:
        return sum(ev.qp_status is not QpStatus.OPTIMAL for ev in self.events)


def clamped_control(row: LinearRow, bounds: ControlBounds) -> np.ndarray:
    """Input in the box that maximizes the CBF row (closest to feasibility)."""
    return np.where(row.u_coeffs >= 0, bounds.u_max, bounds.u_min)


def solve_event_qp(scenario: Scenario, model: AdaptiveModel, u_prev, config: LoopConfig):
    """Limit values, robust row and QP at one event, re-solving once on a sign flip."""
    u_prev = np.atleast_1d(u_prev)
    sign = np.where(u_prev >= 0, 1.0, -1.0)
    clf = clf_row(scenario.clf, model.dynamics, model.state)
    violated = False
    for attempt in range(2):
        lv = scenario.limit_values(model, sign, config.grid)
        row = robust_constraint_row(lv)
        problem = build_event_qp(row, clf, scenario.control_bounds, scenario.clf.relax_weight)
        sol = solve(problem)
        if not sol.ok:
            break
        u = sol.optimizer[:-1]
        new_sign = np.where(u >= 0, 1.0, -1.0)
        flipped = new_sign != sign
        # b_g_lim only depends on the sign when the control coefficient varies over the box
        if attempt == 0 and np.any(flipped) and _sign_sensitive(scenario, model, config):
            violated = True
            log.debug("control sign changed at an event; recomputing b_g_lim")
            sign = new_sign
            continue
        break
    return lv, row, sol, violated


def _sign_sensitive(scenario: Scenario, model: AdaptiveModel, config: LoopConfig) -> bool:
    q = scenario.control_bounds.dimension
    lo = scenario.limit_values(model, np.ones(q), config.grid).b_g_lim
    hi = scenario.limit_values(model, -np.ones(q), config.grid).b_g_lim
    return bool(np.any(lo != hi))


def run_event_loop(scenario: Scenario, horizon: Optional[float] = None, seed: int = 0,
                   config: Optional[LoopConfig] = None) -> TrajectoryLog:
    """Event-triggered control loop over ``[0, horizon]`` at the sensor rate."""
    config = config or LoopConfig()
    T = horizon if horizon is not None else (config.horizon or scenario.horizon)
    sensor = scenario.sensor
    period = sensor.period
    substeps = int(round(period / config.dt_internal))
    if not math.isclose(substeps * config.dt_internal, period, rel_tol=1e-9):
        raise ValueError("internal step must divide the sensor period")
    n_samples = sensor.n_samples(T)
    plant = scenario.make_plant(seed)
    model = scenario.make_model()
    q = scenario.control_bounds.dimension
    u = np.zeros(q)
    delta = 0.0
    anchor = model.state.copy()
    m = scenario.relative_degree
    out = TrajectoryLog(scenario.columns, mode="event", scenario=scenario.name, seed=seed)
    started = time.perf_counter()
    for k in range(n_samples):
        meas = sample_sensor(plant, sensor, u)
        err = compute_error(meas, model, u, m)
        if k == 0:
            hit = (Trigger.INITIAL, 0)
        else:
            hit = detect_event(err, model, scenario.bounds, anchor, config.theta)
        flag, status = 0, ""
        if hit is not None:
            trigger, order = hit
            model = scenario.synchronize(model, meas, u)
            lv, row, sol, violated = solve_event_qp(scenario, model, u, config)
            if sol.ok:
                u, delta = sol.optimizer[:-1].copy(), float(sol.optimizer[-1])
            elif config.infeasible_policy == "clamp":
                u, delta = clamped_control(row, scenario.control_bounds), 0.0
                log.warning("infeasible event QP at t=%.3f; applying clamped control", meas.t)
            anchor = model.state.copy()
            out.events.append(EventRecord(meas.t, trigger, order, u.copy(), delta, sol.status,
                                          lv, anchor.copy(), row, violated, k))
            flag, status = trigger.flag, sol.status.value
            if not sol.ok and config.infeasible_policy == "halt":
                out.rows.append(log_sample(scenario, plant, model, meas, u, delta, flag, status, m))
                out.halted = "infeasible"
                out.wall_time = time.perf_counter() - started
                raise QpInfeasibleError(meas.t, out)
            meas = remeasure(plant, sensor, u, meas)
            err = compute_error(meas, model, u, m)
        out.rows.append(log_sample(scenario, plant, model, meas, u, delta, flag, status, m, err))
        if k + 1 < n_samples:
            for _ in range(substeps):
                plant.step(u, config.dt_internal)
                model.step(u, config.dt_internal)
    out.wall_time = time.perf_counter() - started
    return out


def remeasure(plant: PlantInstance, sensor: SensorModel, u, meas: Measurement) -> Measurement:
    """Derivatives re-read under a newly applied control; the state reading is kept."""
    fresh = sample_sensor(plant, sensor, u)
    return Measurement(meas.t, meas.x, fresh.derivs, meas.halfwidths[:1] + fresh.halfwidths[1:])


def log_sample(scenario, plant, model, meas, u, delta, flag, status, m, err=None) -> dict:
    truth = plant.truth(u, max(m, 1))
    if err is None:
        err = compute_error(meas, model, u, m)
    row = {"t": meas.t}
    row.update(scenario.log_row(truth, model, err, u, delta))
    row["event_flag"] = flag
    row["qp_status"] = status
    return row
