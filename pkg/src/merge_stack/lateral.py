"""Lateral path-tracking MPC on the kinematic bicycle model.

The controller re-linearizes the bicycle model around the reference
trajectory each step, condenses the time-varying affine dynamics into a
dense QP over the stacked (velocity, steering) inputs, pins the velocity
inputs to the longitudinal controller's predicted speeds, and bounds the
steering angle and its per-step increment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import LatWeights, VehicleLimits
from .qp import QpStatus, QuadraticProgram, solve_qp
from .scenario import RoadGeometry, RoadSide

QP_TOLERANCE = 1e-8


def wrap_angle(angle: float) -> float:
    """Shortest representation in (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass
class PoseState:
    x: float
    y: float
    heading: float  # rad, vs the +X axis

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading])


@dataclass
class LatControl:
    velocity: float  # m/s
    steer: float     # rad

    def as_array(self) -> np.ndarray:
        return np.array([self.velocity, self.steer])


def bicycle_derivative(pose: PoseState, control: LatControl,
                       wheelbase: float) -> np.ndarray:
    """Continuous kinematics (x_dot, y_dot, heading_dot)."""
    if wheelbase <= 0:
        raise ValueError("wheelbase must be positive")
    if abs(control.steer) >= math.pi / 2:
        raise ValueError("steering angle must be within (-pi/2, pi/2)")
    v, delta, theta = control.velocity, control.steer, pose.heading
    return np.array([v * math.cos(theta), v * math.sin(theta),
                     v * math.tan(delta) / wheelbase])


def bicycle_step(pose: PoseState, control: LatControl, wheelbase: float,
                 time_step: float) -> PoseState:
    """One Euler step of the nonlinear model (the simulation plant)."""
    d = bicycle_derivative(pose, control, wheelbase)
    return PoseState(pose.x + time_step * d[0], pose.y + time_step * d[1],
                     pose.heading + time_step * d[2])


def linearize_discretize(pose_ref: PoseState, control_ref: LatControl,
                         time_step: float, wheelbase: float
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-order expansion of the Euler-discretized bicycle model around a
    reference pose/control pair: pose+ = A_d pose + B_d control + D_d.

    Exact at the expansion point: plugging the pair back in reproduces the
    nonlinear Euler step.
    """
    theta, v, delta = pose_ref.heading, control_ref.velocity, control_ref.steer
    if abs(delta) >= math.pi / 2 - 1e-9:
        raise ValueError("reference steering too close to +-pi/2")
    ts = time_step
    sin_t, cos_t = math.sin(theta), math.cos(theta)
    sec2 = 1.0 / math.cos(delta) ** 2
    A_d = np.array([
        [1.0, 0.0, -v * ts * sin_t],
        [0.0, 1.0, v * ts * cos_t],
        [0.0, 0.0, 1.0],
    ])
    B_d = np.array([
        [ts * cos_t, 0.0],
        [ts * sin_t, 0.0],
        [ts * math.tan(delta) / wheelbase, ts * v * sec2 / wheelbase],
    ])
    D_d = np.array([
        ts * v * sin_t * theta,
        -ts * v * cos_t * theta,
        -ts * v * delta * sec2 / wheelbase,
    ])
    return A_d, B_d, D_d


@dataclass
class ReferenceTrajectory:
    poses: np.ndarray      # (steps, 3) reference poses, headings unwrapped
    controls: np.ndarray   # (steps, 2) linearization controls (speed, steer)
    arc_lengths: np.ndarray
    clamped: bool          # reference ran past the path end


def build_reference(geometry: RoadGeometry, side: RoadSide, pose: PoseState,
                    predicted_speeds: np.ndarray, time_step: float,
                    wheelbase: float, path_end: float = math.inf
                    ) -> ReferenceTrajectory:
    """Reference poses along the centerline, advanced by the longitudinal
    controller's predicted speeds from the projection of the current pose.

    The linearization pair is the reference itself with the geometric
    steering angle atan(wheelbase * curvature).
    """
    speeds = np.asarray(predicted_speeds, dtype=float)
    steps = speeds.shape[0]
    s0, _ = geometry.signed_position(side, pose.x, pose.y)
    arc = np.empty(steps)
    arc[0] = s0
    for k in range(steps - 1):
        arc[k + 1] = arc[k] + time_step * speeds[k]
    clamped = bool(arc[-1] > path_end)
    arc = np.minimum(arc, path_end)
    poses = np.empty((steps, 3))
    controls = np.empty((steps, 2))
    prev_heading = pose.heading
    for k in range(steps):
        px, py, heading = geometry.pose_at(side, arc[k])
        # unwrap relative to the evolving pose so heading errors stay small
        heading = prev_heading + wrap_angle(heading - prev_heading)
        poses[k] = (px, py, heading)
        curvature = geometry.curvature_at(side, arc[k])
        controls[k] = (speeds[k], math.atan(wheelbase * curvature))
        prev_heading = heading
    return ReferenceTrajectory(poses, controls, arc, clamped)


@dataclass
class LatPlan:
    steer: np.ndarray       # planned steering sequence
    velocity: np.ndarray    # pinned velocity inputs
    poses: np.ndarray       # predicted poses under the linear model
    objective: float
    degraded: bool = False

    @property
    def first_steer(self) -> float:
        return float(self.steer[0])


def solve_lat_mpc(pose: PoseState, reference: ReferenceTrajectory,
                  weights: LatWeights, limits: VehicleLimits,
                  time_step: float, wheelbase: float,
                  prev_steer: float = 0.0) -> LatPlan:
    """Track the reference over the horizon.

    Decision variables are the stacked (velocity, steer) pairs; velocities
    are pinned to the longitudinal prediction by equality rows, steering is
    boxed, and consecutive steering increments (anchored to the previously
    actuated angle) are rate-bounded. Infeasibility falls back to holding the
    previous steering angle, flagged degraded.
    """
    steps = reference.poses.shape[0]
    horizon = steps - 1
    n = 2 * steps
    q = weights.state
    r = weights.control

    # affine prediction: pose_k = M_k + sum_j G[k,j] mu_j (time-varying)
    mats = [linearize_discretize(
        PoseState(*reference.poses[k]), LatControl(*reference.controls[k]),
        time_step, wheelbase) for k in range(steps)]
    offsets = np.zeros((steps, 3))
    gains = np.zeros((steps, 3, n))
    state = pose.as_array().copy()
    # keep the initial heading near the reference branch
    state[2] = reference.poses[0, 2] + wrap_angle(state[2] - reference.poses[0, 2])
    offsets[0] = state
    for k in range(horizon):
        A_d, B_d, D_d = mats[k]
        offsets[k + 1] = A_d @ offsets[k] + D_d
        gains[k + 1] = A_d @ gains[k]
        gains[k + 1][:, 2 * k:2 * k + 2] += B_d

    H = np.zeros((n, n))
    g = np.zeros(n)
    for k in range(steps):
        H[2 * k, 2 * k] += 2.0 * r[0]
        H[2 * k + 1, 2 * k + 1] += 2.0 * r[1]
        err = offsets[k] - reference.poses[k]
        G_k = gains[k]
        H += 2.0 * G_k.T @ (q[:, None] * G_k)
        g += 2.0 * G_k.T @ (q * err)

    # velocity equalities
    A_eq = np.zeros((steps, n))
    A_eq[np.arange(steps), 2 * np.arange(steps)] = 1.0
    b_eq = reference.controls[:, 0].copy()

    # steering box and rate rows
    rows = []
    rhs = []
    for k in range(steps):
        box = np.zeros(n)
        box[2 * k + 1] = 1.0
        rows += [box, -box]
        rhs += [limits.steer_max, -limits.steer_min]
    rate0 = np.zeros(n)
    rate0[1] = 1.0
    rows += [rate0, -rate0]
    rhs += [prev_steer + limits.steer_rate_max, -(prev_steer - limits.steer_rate_max)]
    for k in range(horizon):
        diff = np.zeros(n)
        diff[2 * k + 3] = 1.0
        diff[2 * k + 1] = -1.0
        rows += [diff, -diff]
        rhs += [limits.steer_rate_max, limits.steer_rate_max]

    H = 0.5 * (H + H.T)  # symmetrize away accumulation noise
    qp = QuadraticProgram(H, g, A_eq, b_eq, np.vstack(rows), np.array(rhs))
    solution = solve_qp(qp, QP_TOLERANCE)
    if solution.status is QpStatus.INFEASIBLE:
        steer = np.full(steps, np.clip(prev_steer, limits.steer_min,
                                       limits.steer_max))
        mu = np.empty(n)
        mu[0::2] = b_eq
        mu[1::2] = steer
        poses = offsets + np.einsum("kij,j->ki", gains, mu)
        return LatPlan(steer, b_eq, poses, math.inf, degraded=True)
    mu = solution.primal
    poses = offsets + np.einsum("kij,j->ki", gains, mu)
    return LatPlan(mu[1::2].copy(), mu[0::2].copy(), poses,
                   qp.objective(mu), degraded=False)


def tracking_deviations(geometry: RoadGeometry, side: RoadSide,
                        pose: PoseState) -> tuple[float, float]:
    """(signed lateral offset, heading error vs the path tangent)."""
    s, lateral = geometry.signed_position(side, pose.x, pose.y)
    _, _, path_heading = geometry.pose_at(side, s)
    return lateral, wrap_angle(pose.heading - path_heading)
