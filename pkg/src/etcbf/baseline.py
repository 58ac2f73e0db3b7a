"""Time-driven comparison controller: one plain HOCBF-CLF QP on the model every ``dt``."""

from __future__ import annotations

import logging
import math
import time
from typing import Optional

import numpy as np

from .cbf_core import clf_row, hocbf_row_known
from .event_engine import (
    EventRecord,
    LoopConfig,
    QpInfeasibleError,
    Scenario,
    TrajectoryLog,
    Trigger,
    clamped_control,
    log_sample,
    remeasure,
    build_event_qp,
    compute_error,
)
from .plant import sample_sensor
from .qp import solve

log = logging.getLogger(__name__)


def run_time_driven(scenario: Scenario, horizon: Optional[float] = None, seed: int = 0,
                    dt: float = 0.1, sync: str = "none",
                    config: Optional[LoopConfig] = None) -> TrajectoryLog:
    """Fixed-step CBF-QP loop; the plant is still logged at every sensor sample.

    ``sync`` is ``"none"`` (model integrated open loop from t = 0),
    ``"state"`` (model state reset to the measurement before every QP) or
    ``"full"`` (state reset plus the scenario's model-correction update).
    """
    if sync not in ("none", "state", "full"):
        raise ValueError("sync must be 'none', 'state' or 'full'")
    config = config or LoopConfig()
    T = horizon if horizon is not None else (config.horizon or scenario.horizon)
    sensor = scenario.sensor
    every = int(round(dt / sensor.period))
    if every < 1 or not math.isclose(every * sensor.period, dt, rel_tol=1e-9):
        raise ValueError("baseline dt must be a whole number of sensor periods")
    substeps = int(round(sensor.period / config.dt_internal))
    if not math.isclose(substeps * config.dt_internal, sensor.period, rel_tol=1e-9):
        raise ValueError("internal step must divide the sensor period")
    n_samples = sensor.n_samples(T)
    plant = scenario.make_plant(seed)
    model = scenario.make_model()
    q = scenario.control_bounds.dimension
    u = np.zeros(q)
    delta = 0.0
    m = scenario.relative_degree
    out = TrajectoryLog(scenario.columns, mode="time_driven", scenario=scenario.name, seed=seed)
    started = time.perf_counter()
    for k in range(n_samples):
        meas = sample_sensor(plant, sensor, u)
        flag, status = 0, ""
        if k % every == 0:
            if sync == "state":
                model.state = np.array(meas.x, dtype=float)
            elif sync == "full":
                model = scenario.synchronize(model, meas, u)
            row = hocbf_row_known(scenario.hocbf, model.dynamics, model.state)
            clf = clf_row(scenario.clf, model.dynamics, model.state)
            sol = solve(build_event_qp(row, clf, scenario.control_bounds, scenario.clf.relax_weight))
            if sol.ok:
                u, delta = sol.optimizer[:-1].copy(), float(sol.optimizer[-1])
            elif config.infeasible_policy == "clamp":
                u, delta = clamped_control(row, scenario.control_bounds), 0.0
                log.warning("infeasible baseline QP at t=%.3f; applying clamped control", meas.t)
            trigger = Trigger.INITIAL if k == 0 else Trigger.PERIODIC
            out.events.append(EventRecord(meas.t, trigger, 0, u.copy(), delta, sol.status,
                                          None, model.state.copy(), row, False, k))
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
