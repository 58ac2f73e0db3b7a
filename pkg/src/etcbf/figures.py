"""PNG plots of a trajectory log, rendered off-screen next to the CSV."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .event_engine import TrajectoryLog  # noqa: E402


def _event_times(trajectory: TrajectoryLog) -> np.ndarray:
    return np.array([r["t"] for r in trajectory.rows if r["event_flag"]], dtype=float)


def render_figures(trajectory: TrajectoryLog, out_dir) -> list[Path]:
    out = Path(out_dir)
    t = trajectory.column("t")
    events = _event_times(trajectory)
    label = "QP instants" if trajectory.mode == "time_driven" else "events"
    written = []

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, trajectory.column("b"), label="b(x)")
    if "psi1" in trajectory.columns:
        ax.plot(t, trajectory.column("psi1"), label="psi_1(x)")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.plot(events, np.zeros_like(events), "|", color="tab:red", ms=8, label=label)
    ax.set_xlabel("t [s]")
    ax.set_title(f"{trajectory.scenario} ({trajectory.mode}, seed {trajectory.seed})")
    ax.legend(loc="best")
    fig.tight_layout()
    p = out / "barrier.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    state = "v" if "v" in trajectory.columns else "x"
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax1.plot(t, trajectory.column(state), label=state)
    ax1.plot(t, trajectory.column(f"{state}_bar"), "--", label=f"{state}_bar")
    ax1.legend(loc="best")
    ax2.step(t, trajectory.column("u"), where="post")
    ax2.set_ylabel("u")
    ax2.set_xlabel("t [s]")
    fig.tight_layout()
    p = out / "state_control.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)
    return written
