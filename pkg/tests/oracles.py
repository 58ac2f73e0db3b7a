"""Independent reference computations shared by the unit and acceptance tests."""

import itertools

import numpy as np

from etcbf.qp import QpProblem


def random_problem(rng, n=3, m=5):
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.5 * np.eye(n)
    c = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    # feasible by construction: rows hold at a random interior point
    z0 = rng.uniform(-0.5, 0.5, n)
    b = A @ z0 + rng.uniform(0.0, 1.0, m)
    return QpProblem(H, c, A, b, -np.ones(n), np.ones(n))


def brute_force(problem, grid=41, refinements=6):
    """Best feasible grid point, refined around the incumbent."""
    A, b = problem.stacked_constraints()
    lo, hi = problem.box_lower.copy(), problem.box_upper.copy()
    best, best_z = np.inf, None
    for _ in range(refinements + 1):
        axes = [np.linspace(l, h, grid) for l, h in zip(lo, hi)]
        pts = np.array(list(itertools.product(*axes)))
        pts = pts[np.all(pts @ A.T <= b + 1e-12, axis=1)]
        if pts.size:
            vals = 0.5 * np.einsum("ij,jk,ik->i", pts, problem.hessian, pts) + pts @ problem.linear_cost
            i = int(np.argmin(vals))
            if vals[i] < best:
                best, best_z = vals[i], pts[i]
        if best_z is None:
            break
        width = (hi - lo) / (grid - 1) * 2
        lo = np.maximum(problem.box_lower, best_z - width)
        hi = np.minimum(problem.box_upper, best_z + width)
    return best, best_z


def active_set_enumeration(problem):
    """Exact minimizer: try every set of at most n active rows and keep the best feasible KKT point."""
    A, b = problem.stacked_constraints()
    H, c = problem.hessian, problem.linear_cost
    n = c.size
    best, best_z = np.inf, None
    for k in range(n + 1):
        for rows in itertools.combinations(range(A.shape[0]), k):
            Aw = A[list(rows)]
            kkt = np.block([[H, Aw.T], [Aw, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(kkt, np.r_[-c, b[list(rows)]])
            except np.linalg.LinAlgError:
                continue
            z = sol[:n]
            if np.all(A @ z <= b + 1e-9):
                val = problem.objective(z)
                if val < best:
                    best, best_z = val, z
    return best, best_z
