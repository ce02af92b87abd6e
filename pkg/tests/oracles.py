"""Independent oracles used by the tests.

Everything here deliberately avoids the library's own assembly paths: the QP
oracle is first-order projected gradient, the finite-horizon oracle
differentiates a forward simulation by adjoint recursion, and geometry gets
checked by brute-force numeric integration.
"""
from __future__ import annotations

import numpy as np


def project_box_hyperplane(y, lb, ub, a=None, b=None, iters: int = 200):
    """Euclidean projection onto {lb <= x <= ub} (and a'x = b when given),
    by bisection on the hyperplane multiplier."""
    y = np.asarray(y, float)
    if a is None:
        return np.clip(y, lb, ub)
    a = np.asarray(a, float)

    def x_of(theta):
        return np.clip(y - theta * a, lb, ub)

    def gap(theta):
        return float(a @ x_of(theta) - b)

    lo, hi = -1.0, 1.0
    while gap(lo) < 0:
        lo *= 2.0
        if lo < -1e12:
            break
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            break
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    return x_of(0.5 * (lo + hi))


def projected_gradient_qp(H, g, lb, ub, a_eq=None, b_eq=None,
                          iters: int = 200_000, tol: float = 1e-10):
    """min 0.5 x'Hx + g'x over a box (plus one optional equality), by fixed
    small-step projected gradient. Meant for well-conditioned test problems."""
    H = np.asarray(H, float)
    g = np.asarray(g, float)
    n = g.shape[0]
    step = 1.0 / float(np.linalg.eigvalsh(H)[-1])
    x = project_box_hyperplane(np.zeros(n), lb, ub, a_eq, b_eq)
    for _ in range(iters):
        x_new = project_box_hyperplane(x - step * (H @ x + g), lb, ub, a_eq, b_eq)
        if np.max(np.abs(x_new - x)) < tol:
            return x_new
        x = x_new
    return x


def lon_cost_and_grad(controls, x0, pred_accel, q_state, r_control,
                      terminal_weight, time_step):
    """Finite-horizon cost of the platoon problem and its gradient in the
    control sequence, by forward simulation + adjoint recursion (no batch
    matrices anywhere)."""
    ts = time_step
    A = np.array([[1.0, ts, 0.0], [0.0, 1.0, -ts], [0.0, 0.0, 1.0]])
    B = np.array([0.0, 0.0, ts])
    D = np.array([0.0, ts, 0.0])
    n = controls.shape[0]          # horizon + 1
    horizon = n - 1
    states = np.empty((n, 3))
    states[0] = x0
    for k in range(horizon):
        states[k + 1] = A @ states[k] + B * controls[k] + D * pred_accel[k]
    w = np.ones(n)
    w[-1] = terminal_weight
    cost = float(np.sum(w * (np.sum(states * (q_state * states), axis=1)
                             + r_control * controls**2)))
    grad = 2.0 * w * r_control * controls
    lam = 2.0 * w[-1] * q_state * states[-1]
    for k in range(horizon - 1, -1, -1):
        grad[k] += float(B @ lam)
        lam = 2.0 * w[k] * q_state * states[k] + A.T @ lam
    return cost, grad


def lon_unconstrained_minimizer(x0, pred_accel, q_state, r_control,
                                terminal_weight, time_step,
                                iters: int = 60_000, tol: float = 1e-12):
    """Accelerated gradient descent on the simulated cost; strong convexity
    comes from the control weight, the smoothness constant from a power
    iteration on Hessian-vector products (gradient differences)."""
    n = pred_accel.shape[0]
    mu = 2.0 * r_control

    def grad(u):
        return lon_cost_and_grad(u, x0, pred_accel, q_state, r_control,
                                 terminal_weight, time_step)[1]

    g0 = grad(np.zeros(n))
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(n)
    L = 1.0
    for _ in range(80):
        hv = grad(v) - g0
        L = float(np.linalg.norm(hv) / np.linalg.norm(v))
        v = hv / np.linalg.norm(hv)
    L *= 1.05
    kappa = L / mu
    momentum = (np.sqrt(kappa) - 1.0) / (np.sqrt(kappa) + 1.0)
    x = np.zeros(n)
    y = x.copy()
    for _ in range(iters):
        g = grad(y)
        x_new = y - g / L
        y = x_new + momentum * (x_new - x)
        if np.max(np.abs(x_new - x)) < tol:
            return x_new
        x = x_new
    return x


def numeric_path_length(pose_fn, s_from: float, s_to: float,
                        n_samples: int = 20_000) -> float:
    """Arc length of a centerline between two parameter values by summing
    fine chords of the (x, y) trace."""
    grid = np.linspace(s_from, s_to, n_samples)
    pts = np.array([pose_fn(s)[:2] for s in grid])
    return float(np.sum(np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))))


def finite_difference_jacobians(step_fn, pose, control, eps: float = 1e-5):
    """Numeric Jacobians of a discrete step function with respect to the pose
    and the control."""
    pose = np.asarray(pose, float)
    control = np.asarray(control, float)
    base = step_fn(pose, control)
    J_x = np.empty((base.shape[0], pose.shape[0]))
    J_u = np.empty((base.shape[0], control.shape[0]))
    for j in range(pose.shape[0]):
        d = np.zeros_like(pose)
        d[j] = eps
        J_x[:, j] = (step_fn(pose + d, control) - step_fn(pose - d, control)) / (2 * eps)
    for j in range(control.shape[0]):
        d = np.zeros_like(control)
        d[j] = eps
        J_u[:, j] = (step_fn(pose, control + d) - step_fn(pose, control - d)) / (2 * eps)
    return J_x, J_u
