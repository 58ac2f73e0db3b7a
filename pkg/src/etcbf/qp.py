"""Dense dual active-set QP solver for the small per-event problems.

Solves ``min 1/2 z'Hz + c'z  s.t.  A z <= b,  lo <= z <= hi`` with the
Goldfarb-Idnani dual method: start at the unconstrained minimizer and add the
most violated constraint until the iterate is primal feasible. The reduced
inverse Hessian is recomputed from scratch at every step, which is cheap at
the sizes used here (a handful of variables and rows).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

KKT_TOL = 1e-8
_PSD_TOL = 1e-10
# Ridge added to semidefinite Hessians so the dual method has an inverse.
_RIDGE = 1e-12


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class QpProblem:
    hessian: np.ndarray
    linear_cost: np.ndarray
    ineq_matrix: np.ndarray = None
    ineq_bound: np.ndarray = None
    box_lower: Optional[np.ndarray] = None
    box_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        c = np.atleast_1d(np.asarray(self.linear_cost, dtype=float))
        n = c.size
        if H.shape != (n, n):
            raise ValueError(f"hessian shape {H.shape} does not match {n} variables")
        if not np.allclose(H, H.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise ValueError("hessian must be symmetric")
        if np.linalg.eigvalsh(H).min() < -_PSD_TOL:
            raise ValueError("hessian must be positive semidefinite")
        A = np.zeros((0, n)) if self.ineq_matrix is None else np.asarray(self.ineq_matrix, dtype=float)
        A = A.reshape(-1, n)
        b = np.zeros(0) if self.ineq_bound is None else np.atleast_1d(np.asarray(self.ineq_bound, dtype=float))
        if A.shape[0] != b.size:
            raise ValueError("ineq_matrix row count must equal ineq_bound length")
        object.__setattr__(self, "hessian", H)
        object.__setattr__(self, "linear_cost", c)
        object.__setattr__(self, "ineq_matrix", A)
        object.__setattr__(self, "ineq_bound", b)
        for name in ("box_lower", "box_upper"):
            v = getattr(self, name)
            if v is not None:
                v = np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
                object.__setattr__(self, name, v)

    @property
    def n_vars(self) -> int:
        return self.linear_cost.size

    def stacked_constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """All constraints as one ``A z <= b`` system: general rows, then upper, then lower bounds."""
        rows, rhs = [self.ineq_matrix], [self.ineq_bound]
        n = self.n_vars
        eye = np.eye(n)
        if self.box_upper is not None:
            keep = np.isfinite(self.box_upper)
            rows.append(eye[keep])
            rhs.append(self.box_upper[keep])
        if self.box_lower is not None:
            keep = np.isfinite(self.box_lower)
            rows.append(-eye[keep])
            rhs.append(-self.box_lower[keep])
        return np.vstack(rows), np.concatenate(rhs)

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.hessian @ z + self.linear_cost @ z)


@dataclass(frozen=True)
class QpSolution:
    optimizer: Optional[np.ndarray]
    objective: float
    status: QpStatus
    active_set: tuple[int, ...] = ()
    # One multiplier per row of stacked_constraints().
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal_feasibility: float
    complementarity: float

    @property
    def ok(self) -> bool:
        return max(self.stationarity, self.primal_feasibility, self.complementarity) <= KKT_TOL


def solve(problem: QpProblem, max_iter: int = 100) -> QpSolution:
    H = problem.hessian
    if np.linalg.eigvalsh(H).min() <= _PSD_TOL:
        H = H + _RIDGE * max(1.0, np.abs(H).max()) * np.eye(problem.n_vars)
    A, b = problem.stacked_constraints()
    m = A.shape[0]
    Hinv = np.linalg.inv(H)
    z = -Hinv @ problem.linear_cost
    active: list[int] = []
    lam = np.zeros(0)
    scale = 1.0 + np.abs(b)

    def infeasible():
        return QpSolution(None, float("nan"), QpStatus.INFEASIBLE, iterations=it)

    for it in range(1, max_iter + 1):
        slack = b - A @ z
        viol = np.where(np.isin(np.arange(m), active), 0.0, -slack / scale)
        if m == 0 or viol.max() <= 1e-12:
            mult = np.zeros(m)
            mult[active] = lam
            return QpSolution(
                z, problem.objective(z), QpStatus.OPTIMAL, tuple(sorted(active)), mult, it
            )
        p = int(np.argmax(viol))
        n_p = -A[p]  # constraint as n_p' z >= -b_p
        lam_p = 0.0
        while True:
            if active:
                N = -A[active].T
                M = N.T @ Hinv @ N
                try:
                    Nstar = np.linalg.solve(M, N.T @ Hinv)
                except np.linalg.LinAlgError:
                    return QpSolution(None, float("nan"), QpStatus.NUMERICAL_FAILURE, iterations=it)
                step = (Hinv - Hinv @ N @ Nstar) @ n_p
                r = Nstar @ n_p
            else:
                step = Hinv @ n_p
                r = np.zeros(0)
            # dual (partial) step length
            t1, drop = np.inf, -1
            for j in range(r.size):
                if r[j] > 1e-14:
                    ratio = lam[j] / r[j]
                    if ratio < t1:
                        t1, drop = ratio, j
            # primal (full) step length
            curvature = float(step @ n_p)
            s_p = float(n_p @ z + b[p])
            t2 = np.inf if abs(curvature) <= 1e-14 * max(1.0, n_p @ n_p) else -s_p / curvature
            if not np.isfinite(t1) and not np.isfinite(t2):
                return infeasible()
            if not np.isfinite(t2):
                lam = lam - t1 * r
                lam_p += t1
                del active[drop]
                lam = np.delete(lam, drop)
                continue
            t = min(t1, t2)
            z = z + t * step
            lam = lam - t * r
            lam_p += t
            if t2 <= t1:
                active.append(p)
                lam = np.append(np.maximum(lam, 0.0), lam_p)
                break
            del active[drop]
            lam = np.delete(lam, drop)
    return QpSolution(None, float("nan"), QpStatus.NUMERICAL_FAILURE, iterations=max_iter)


def verify_kkt(problem: QpProblem, solution: QpSolution) -> KktReport:
    z = np.asarray(solution.optimizer, dtype=float)
    A, b = problem.stacked_constraints()
    lam = np.asarray(solution.multipliers, dtype=float)
    if lam.size != A.shape[0]:
        lam = np.zeros(A.shape[0])
    grad = problem.hessian @ z + problem.linear_cost + A.T @ lam
    slack = b - A @ z
    primal = float(np.max(np.maximum(-slack, 0.0), initial=0.0))
    comp = float(np.max(np.abs(lam * slack), initial=0.0))
    return KktReport(float(np.max(np.abs(grad), initial=0.0)), primal, comp)
