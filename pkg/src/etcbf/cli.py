"""Batch runner: ``etcbf run`` and ``etcbf compare``.

Exit codes: 0 clean run, 1 usage/config error, 2 QP infeasibility (halt
policy) or an empty event box, 3 simulation blow-up.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .acc import AccParams, AccScenario, DisturbanceConfig
from .baseline import run_time_driven
from .event_engine import (
    EmptyFeasibleBoxError,
    LoopConfig,
    QpInfeasibleError,
    Scenario,
    TrajectoryLog,
    run_event_loop,
)
from .plant import SHAPES, SensorModel, SimulationBlowUp
from .toy import ToyParams, ToyScenario

log = logging.getLogger("etcbf")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_BLOWUP = 0, 1, 2, 3
SCENARIOS = ("acc", "toy")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: str = "acc"
    mode: str = "event"
    sync_in_baseline: bool = False
    # with sync on, also apply the model-correction update at every baseline step
    baseline_sync_updates_model: bool = False
    dt_baseline: float = 0.1
    horizon: Optional[float] = None
    seed: int = 0
    sensor_rate: float = 20.0
    noise_halfwidths: Optional[list] = None
    disturbance_scale: float = 1.0
    disturbance_period: float = 2.5
    disturbance_shape: str = "smooth"
    dt_internal: float = 1e-3
    theta: float = 1.0
    infeasible_policy: str = "halt"
    limit_method: Optional[str] = None
    output: str = "out"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise UsageError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if self.mode not in ("event", "time_driven"):
            raise UsageError("mode must be 'event' or 'time_driven'")
        if not self.dt_baseline > 0:
            raise UsageError("dt_baseline must be positive")
        if self.horizon is not None and not self.horizon > 0:
            raise UsageError("horizon must be positive")
        if not self.sensor_rate > 0 or not self.dt_internal > 0:
            raise UsageError("sensor_rate and dt_internal must be positive")
        if self.disturbance_scale < 0 or not self.disturbance_period > 0:
            raise UsageError("disturbance_scale must be >= 0 and disturbance_period > 0")
        if self.disturbance_shape not in SHAPES:
            raise UsageError(f"disturbance_shape must be one of {', '.join(SHAPES)}")
        if self.infeasible_policy not in ("halt", "clamp"):
            raise UsageError("infeasible_policy must be 'halt' or 'clamp'")
        if not 0 < self.theta <= 1:
            raise UsageError("theta must lie in (0, 1]")
        if not isinstance(self.params, dict):
            raise UsageError("[params] must be a table")
        allowed = AccParams.field_names() if self.scenario == "acc" else ToyParams.field_names()
        unknown = set(self.params) - allowed
        if unknown:
            raise UsageError(f"unknown {self.scenario} parameter(s): {', '.join(sorted(unknown))}")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise UsageError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"malformed config {path}: {exc}") from exc
        return cls.from_dict(data)

    def build_scenario(self) -> Scenario:
        noise = None
        if self.noise_halfwidths is not None:
            noise = tuple(np.asarray(h, dtype=float) for h in self.noise_halfwidths)
        try:
            if self.scenario == "acc":
                params = AccParams(**_tuplify(self.params))
                sensor = SensorModel(self.sensor_rate, 2, noise)
                dist = DisturbanceConfig(self.disturbance_period, self.disturbance_shape,
                                         self.disturbance_scale)
                return AccScenario(params, dist, sensor, self.limit_method or "closed_form")
            params = ToyParams(**self.params)
            sensor = SensorModel(self.sensor_rate, 1, noise)
            return ToyScenario(params, self.disturbance_period, self.disturbance_shape,
                               self.disturbance_scale, sensor, self.limit_method or "terms")
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from exc

    def loop_config(self) -> LoopConfig:
        return LoopConfig(self.horizon, self.dt_internal, theta=self.theta,
                          infeasible_policy=self.infeasible_policy)


def _tuplify(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


@dataclass
class MetricsSummary:
    qp_count: int
    event_counts: dict
    min_b: float
    min_psi1: Optional[float]
    control_energy: float
    infeasible_count: int
    wall_time: float
    # the energy integrand uses the true resistance, unavailable to the controller
    control_energy_note: str = "trapezoid of ((u - F_r(v))/M)^2 with oracle F_r"

    def to_dict(self) -> dict:
        return asdict(self)


EVENT_FLAG_NAMES = {1: "event1", 2: "event2", 3: "event3", 4: "initial_or_periodic"}


def metrics_from_rows(rows: list[dict], scenario: Scenario, wall_time: float = 0.0) -> MetricsSummary:
    """Summary computed from logged rows only, so it can be recomputed from the CSV."""
    flags = [int(r["event_flag"]) for r in rows]
    counts = {name: sum(f == k for f in flags) for k, name in EVENT_FLAG_NAMES.items()}
    t = np.array([r["t"] for r in rows], dtype=float)
    integrand = np.array([scenario.energy_integrand(r) for r in rows])
    energy = float(np.trapezoid(integrand, t)) if len(rows) > 1 else 0.0
    psi1 = [r["psi1"] for r in rows if "psi1" in r]
    note = MetricsSummary.control_energy_note if scenario.name == "acc" else "trapezoid of u^2"
    return MetricsSummary(
        qp_count=sum(f != 0 for f in flags),
        event_counts=counts,
        min_b=float(min(r["b"] for r in rows)),
        min_psi1=float(min(psi1)) if psi1 else None,
        control_energy=energy,
        infeasible_count=sum(r["qp_status"] not in ("", "optimal") for r in rows),
        wall_time=wall_time,
        control_energy_note=note,
    )


def format_csv(trajectory: TrajectoryLog, units=None) -> str:
    buf = io.StringIO()
    if units:
        buf.write("# units: " + ", ".join(f"{c}[{u}]" for c, u in zip(trajectory.columns, units)) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trajectory.columns)
    for row in trajectory.rows:
        writer.writerow([_fmt(row[c]) for c in trajectory.columns])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        row = {}
        for k, v in rec.items():
            if k == "qp_status":
                row[k] = v
            elif k == "event_flag":
                row[k] = int(v)
            else:
                row[k] = float(v)
        rows.append(row)
    return rows


@dataclass
class RunResult:
    config: RunConfig
    scenario: Scenario
    trajectory: Optional[TrajectoryLog]
    metrics: Optional[MetricsSummary]
    exit_code: int
    message: str = ""


def simulate(config: RunConfig) -> RunResult:
    """Run one configuration in memory and classify the outcome."""
    scenario = config.build_scenario()
    loop = config.loop_config()
    try:
        if config.mode == "event":
            traj = run_event_loop(scenario, config.horizon, config.seed, loop)
        else:
            sync = "none"
            if config.sync_in_baseline:
                sync = "full" if config.baseline_sync_updates_model else "state"
            traj = run_time_driven(scenario, config.horizon, config.seed, config.dt_baseline,
                                   sync, loop)
    except QpInfeasibleError as exc:
        traj = exc.log
        code, msg = EXIT_INFEASIBLE, str(exc)
    except EmptyFeasibleBoxError as exc:
        return RunResult(config, scenario, None, None, EXIT_INFEASIBLE, f"empty event box: {exc}")
    except SimulationBlowUp as exc:
        return RunResult(config, scenario, None, None, EXIT_BLOWUP, str(exc))
    else:
        code, msg = EXIT_OK, ""
    metrics = metrics_from_rows(traj.rows, scenario, traj.wall_time)
    return RunResult(config, scenario, traj, metrics, code, msg)


def write_outputs(result: RunResult, out_dir, figures: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if result.trajectory is not None:
        p = out / "trajectory.csv"
        p.write_text(format_csv(result.trajectory, getattr(result.scenario, "units", None)))
        written.append(p)
    summary = {
        "scenario": result.config.scenario,
        "mode": result.config.mode,
        "seed": result.config.seed,
        "exit_code": result.exit_code,
        "message": result.message,
        "metrics": result.metrics.to_dict() if result.metrics else None,
        "config": asdict(result.config),
    }
    p = out / "metrics.json"
    p.write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    written.append(p)
    if figures and result.trajectory is not None:
        from .figures import render_figures

        written += render_figures(result.trajectory, out)
    return written


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def compare_metrics(a: MetricsSummary, b: MetricsSummary) -> dict:
    """Ratios ``a / b`` and deltas ``a - b`` for the numeric metrics."""

    def ratio(x, y):
        if x is None or y is None:
            return None
        if y == 0:
            return 1.0 if x == 0 else None
        return x / y

    report = {"ratio": {}, "delta": {}}
    for key in ("qp_count", "min_b", "min_psi1", "control_energy", "infeasible_count"):
        x, y = getattr(a, key), getattr(b, key)
        report["ratio"][key] = ratio(x, y)
        report["delta"][key] = None if x is None or y is None else x - y
    report["event_counts"] = {"a": a.event_counts, "b": b.event_counts}
    return report


def compare(config_a: RunConfig, config_b: RunConfig) -> dict:
    if config_a.scenario != config_b.scenario:
        raise UsageError("compare needs both configs to use the same scenario")
    if config_a.seed != config_b.seed:
        raise UsageError("compare needs both configs to use the same seed")
    ra, rb = simulate(config_a), simulate(config_b)
    report = {
        "scenario": config_a.scenario,
        "seed": config_a.seed,
        "a": {"mode": config_a.mode, "exit_code": ra.exit_code},
        "b": {"mode": config_b.mode, "exit_code": rb.exit_code},
    }
    if ra.metrics is None or rb.metrics is None:
        report["error"] = ra.message or rb.message
        return report
    report.update(compare_metrics(ra.metrics, rb.metrics))
    return report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etcbf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one configuration")
    run_p.add_argument("--config", required=True, help="TOML run configuration")
    run_p.add_argument("--seed", type=int, help="override the config seed")
    run_p.add_argument("--mode", choices=("event", "time_driven"), help="override the config mode")
    run_p.add_argument("--out", help="output directory (default: config 'output')")
    run_p.add_argument("--figures", action="store_true", help="also render PNG plots")
    cmp_p = sub.add_parser("compare", help="run two configurations and compare metrics")
    cmp_p.add_argument("--a", required=True, help="first TOML configuration")
    cmp_p.add_argument("--b", required=True, help="second TOML configuration")
    cmp_p.add_argument("--out", help="write the JSON report here instead of stdout")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("ETCBF_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "run":
            config = RunConfig.load(args.config)
            overrides = {}
            if args.seed is not None:
                overrides["seed"] = args.seed
            if args.mode is not None:
                overrides["mode"] = args.mode
            if overrides:
                config = RunConfig.from_dict({**asdict(config), **overrides})
            result = simulate(config)
            out = args.out or config.output
            write_outputs(result, out, args.figures)
            if result.exit_code != EXIT_OK:
                print(f"etcbf: {result.message}", file=sys.stderr)
            elif result.metrics is not None:
                m = result.metrics
                print(f"qp_count={m.qp_count} min_b={m.min_b:.6g} "
                      f"min_psi1={m.min_psi1 if m.min_psi1 is None else f'{m.min_psi1:.6g}'} -> {out}")
            return result.exit_code
        report = compare(RunConfig.load(args.a), RunConfig.load(args.b))
        text = json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    except UsageError as exc:
        print(f"etcbf: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
