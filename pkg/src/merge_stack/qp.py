"""Dense convex quadratic programming with KKT-certified solutions.

Solves  min 0.5 x'Hx + g'x  s.t.  A_eq x = b_eq,  A_in x <= b_in
with a primal active-set method. Problems in this stack are tiny (a dozen
to a few dozen variables), so everything is dense and direct.

Feasibility phase: a single min-max-violation LP (scipy HiGHS). The
active-set phase and the KKT certificate are local.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

_REG = 1e-10          # Tikhonov bump when the KKT factorization fails
_MIN_EIG = -1e-8      # below this H is rejected as non-PSD


class QpError(ValueError):
    """Malformed problem: dimension mismatch or indefinite Hessian."""


class QpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass
class QuadraticProgram:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise QpError(f"H must be {n}x{n}, got {self.H.shape}")
        if self.A_eq is None or np.size(self.A_eq) == 0:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            self.b_eq = np.atleast_1d(np.asarray(self.b_eq, dtype=float))
        if self.A_in is None or np.size(self.A_in) == 0:
            self.A_in = np.zeros((0, n))
            self.b_in = np.zeros(0)
        else:
            self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float))
            self.b_in = np.atleast_1d(np.asarray(self.b_in, dtype=float))
        if self.A_eq.shape[1] != n or self.A_eq.shape[0] != self.b_eq.shape[0]:
            raise QpError("equality constraint dimensions inconsistent")
        if self.A_in.shape[1] != n or self.A_in.shape[0] != self.b_in.shape[0]:
            raise QpError("inequality constraint dimensions inconsistent")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-12 * max(
            1.0, float(np.max(np.abs(self.H), initial=0.0))
        ):
            raise QpError("H must be symmetric")

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass
class QpSolution:
    primal: np.ndarray
    dual_eq: np.ndarray
    dual_in: np.ndarray
    kkt_residual: float
    status: QpStatus
    iterations: int = 0
    active_set: tuple[int, ...] = field(default_factory=tuple)


def _check_psd(H: np.ndarray) -> None:
    eigs = np.linalg.eigvalsh(0.5 * (H + H.T))
    if eigs[0] < _MIN_EIG * max(1.0, float(eigs[-1])):
        raise QpError(f"H is not positive semidefinite (min eigenvalue {eigs[0]:.3e})")


def _phase1(qp: QuadraticProgram, tol: float) -> np.ndarray | None:
    """Feasible point via min-t LP with A_in x - t <= b_in, or None."""
    n = qp.dim
    if qp.A_in.shape[0] == 0 and qp.A_eq.shape[0] == 0:
        return np.zeros(n)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = None
    b_ub = None
    if qp.A_in.shape[0]:
        A_ub = np.hstack([qp.A_in, -np.ones((qp.A_in.shape[0], 1))])
        b_ub = qp.b_in
    A_eq = None
    b_eq = None
    if qp.A_eq.shape[0]:
        A_eq = np.hstack([qp.A_eq, np.zeros((qp.A_eq.shape[0], 1))])
        b_eq = qp.b_eq
    bounds = [(None, None)] * n + [(0.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if not res.success:
        return None
    if res.x[-1] > max(tol, 1e-8):
        return None
    return res.x[:n]


def _kkt_step(H: np.ndarray, grad: np.ndarray, A_act: np.ndarray):
    """Solve the equality-constrained subproblem; returns (step, multipliers)."""
    n = H.shape[0]
    m = A_act.shape[0]
    if m == 0:
        try:
            return np.linalg.solve(H, -grad), np.zeros(0)
        except np.linalg.LinAlgError:
            logger.debug("singular H, regularizing by %g*I", _REG)
            return np.linalg.solve(H + _REG * np.eye(n), -grad), np.zeros(0)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = A_act.T
    K[n:, :n] = A_act
    rhs = np.concatenate([-grad, np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        logger.debug("singular KKT system, regularizing H by %g*I", _REG)
        K[:n, :n] = H + _REG * np.eye(n)
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def kkt_residual(qp: QuadraticProgram, x: np.ndarray, lam: np.ndarray,
                 mu: np.ndarray) -> float:
    """Largest violation among stationarity, feasibility, slackness, dual sign."""
    stat = qp.H @ x + qp.g
    if qp.A_eq.shape[0]:
        stat = stat + qp.A_eq.T @ lam
    if qp.A_in.shape[0]:
        stat = stat + qp.A_in.T @ mu
    worst = float(np.max(np.abs(stat), initial=0.0))
    if qp.A_eq.shape[0]:
        worst = max(worst, float(np.max(np.abs(qp.A_eq @ x - qp.b_eq))))
    if qp.A_in.shape[0]:
        slack = qp.A_in @ x - qp.b_in
        worst = max(worst, float(np.max(slack, initial=0.0)))
        worst = max(worst, float(np.max(-mu, initial=0.0)))
        worst = max(worst, float(np.max(np.abs(mu * slack), initial=0.0)))
    return worst


def solve_qp(qp: QuadraticProgram, tolerance: float = 1e-9,
             max_iterations: int | None = None,
             x0: np.ndarray | None = None) -> QpSolution:
    """Primal active-set solve with Bland-style anti-cycling.

    x0, when given, must be feasible (it is verified); it skips the LP
    feasibility phase, which matters in the per-step MPC loop.
    """
    if tolerance <= 0:
        raise QpError("tolerance must be positive")
    _check_psd(qp.H)
    n = qp.dim
    n_in = qp.A_in.shape[0]
    if max_iterations is None:
        max_iterations = 50 + 10 * (n + n_in + qp.A_eq.shape[0])

    x = None
    if x0 is not None:
        cand = np.asarray(x0, dtype=float).copy()
        feas = 0.0
        if qp.A_eq.shape[0]:
            feas = max(feas, float(np.max(np.abs(qp.A_eq @ cand - qp.b_eq))))
        if n_in:
            feas = max(feas, float(np.max(qp.A_in @ cand - qp.b_in, initial=0.0)))
        if feas <= 10 * tolerance:
            x = cand
    if x is None:  # no hint, or the hint was infeasible
        x = _phase1(qp, tolerance)
        if x is None:
            return QpSolution(np.full(n, np.nan), np.zeros(qp.A_eq.shape[0]),
                              np.zeros(n_in), np.inf, QpStatus.INFEASIBLE)

    working: list[int] = []
    n_eq = qp.A_eq.shape[0]
    lam = np.zeros(n_eq)
    mu_full = np.zeros(n_in)

    for it in range(1, max_iterations + 1):
        rows = [qp.A_eq] if n_eq else []
        if working:
            rows.append(qp.A_in[working])
        A_act = np.vstack(rows) if rows else np.zeros((0, n))
        grad = qp.H @ x + qp.g
        p, mults = _kkt_step(qp.H, grad, A_act)

        if np.max(np.abs(p), initial=0.0) <= 1e-11 * (1.0 + np.max(np.abs(x))):
            lam = mults[:n_eq]
            mu_w = mults[n_eq:]
            mu_full = np.zeros(n_in)
            for idx, m in zip(working, mu_w):
                mu_full[idx] = m
            negative = [i for i, m in zip(working, mu_w) if m < -tolerance]
            if not negative:
                res = kkt_residual(qp, x, lam, mu_full)
                status = QpStatus.OPTIMAL if res <= tolerance else QpStatus.MAX_ITERATIONS
                return QpSolution(x, lam, mu_full, res, status, it, tuple(sorted(working)))
            working.remove(min(negative))  # Bland: smallest index leaves
            continue

        # step length to the nearest blocking constraint outside the working set
        alpha = 1.0
        blockers: list[int] = []
        if n_in:
            outside = [i for i in range(n_in) if i not in working]
            for i in outside:
                d = float(qp.A_in[i] @ p)
                if d > 1e-12 * (1.0 + np.linalg.norm(p)):
                    hit = (qp.b_in[i] - float(qp.A_in[i] @ x)) / d
                    hit = max(hit, 0.0)
                    if hit < alpha - 1e-12:
                        alpha = hit
                        blockers = [i]
                    elif abs(hit - alpha) <= 1e-12:
                        blockers.append(i)
        x = x + alpha * p
        if alpha < 1.0 and blockers:
            working.append(min(blockers))  # Bland: smallest index enters

    res = kkt_residual(qp, x, lam, mu_full)
    return QpSolution(x, lam, mu_full, res, QpStatus.MAX_ITERATIONS,
                      max_iterations, tuple(sorted(working)))
