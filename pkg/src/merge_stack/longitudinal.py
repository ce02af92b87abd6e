"""Serial distributed longitudinal MPC for the virtual car-following platoon.

Each follower tracks its sequence predecessor under a constant-distance
policy. Per control step, vehicles solve in platoon order; each consumes the
predecessor's freshly predicted acceleration/position/velocity sequences,
minimizes a quadratic stage cost with a terminal-stage magnification, and
must end the horizon with zero speed difference and the predecessor's
terminal acceleration. A proximity-triggered safety cost stiffens the
speed-difference penalty when the follower is closing in too deep.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .params import DrivelineParams, LonWeights, VehicleLimits
from .qp import QpStatus, QuadraticProgram, solve_qp
from .stability import BatchMatrices, batch_matrices, platoon_matrices

TERMINAL_PENALTY_FACTOR = 1e3     # soft-constraint weight scale in fallback
QP_TOLERANCE = 1e-7


@dataclass
class LonState:
    spacing_dev: float   # m, gap to predecessor minus desired gap
    speed_diff: float    # m/s, predecessor velocity minus own
    accel: float         # m/s^2, own acceleration

    def as_array(self) -> np.ndarray:
        return np.array([self.spacing_dev, self.speed_diff, self.accel])

    @classmethod
    def from_array(cls, x: np.ndarray) -> "LonState":
        return cls(float(x[0]), float(x[1]), float(x[2]))


def step_dynamics(x: LonState, jerk: float, accel_pred: float,
                  time_step: float) -> LonState:
    """One Euler step of the platoon model driven by own jerk input and the
    predecessor's current acceleration."""
    ts = time_step
    return LonState(
        x.spacing_dev + ts * x.speed_diff,
        x.speed_diff + ts * (accel_pred - x.accel),
        x.accel + ts * jerk,
    )


def driveline_accel_rate(torque_desired: float, torque_actual: float,
                         velocity: float, params: DrivelineParams) -> float:
    """Rate of change of acceleration produced by the driveline."""
    if velocity < 0:
        raise ValueError("velocity must be nonnegative")
    lag_gain = params.efficiency / (params.mass * params.tire_radius * params.time_lag)
    rolling = params.rolling_resistance * params.mass * params.gravity
    drag = 0.5 * params.air_density * params.drag_coeff * params.frontal_area * velocity**2
    return lag_gain * (torque_desired - torque_actual) - rolling - drag


def desired_torque(jerk: float, torque_actual: float, velocity: float,
                   params: DrivelineParams) -> float:
    """Torque command realizing a requested jerk; exact inverse of
    driveline_accel_rate in its first argument."""
    if velocity < 0:
        raise ValueError("velocity must be nonnegative")
    lag_gain = params.efficiency / (params.mass * params.tire_radius * params.time_lag)
    rolling = params.rolling_resistance * params.mass * params.gravity
    drag = 0.5 * params.air_density * params.drag_coeff * params.frontal_area * velocity**2
    return torque_actual + (jerk + rolling + drag) / lag_gain


@dataclass
class PredecessorPlan:
    """Broadcast prediction of the sequence predecessor, one sample per
    horizon step (length horizon+1)."""

    accel: np.ndarray
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self) -> None:
        self.accel = np.asarray(self.accel, dtype=float)
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        n = self.accel.shape[0]
        if self.position.shape != (n,) or self.velocity.shape != (n,):
            raise ValueError("plan sequences must share one length")

    @property
    def steps(self) -> int:
        return self.accel.shape[0] - 1

    def check_consistency(self, time_step: float, tol: float = 1e-6) -> None:
        drift = self.position[1:] - self.position[:-1] - time_step * self.velocity[:-1]
        if np.max(np.abs(drift), initial=0.0) > tol:
            raise ValueError("plan positions do not integrate the velocities")

    @classmethod
    def from_profile(cls, position: float, velocity: float,
                     accel_samples: np.ndarray, time_step: float) -> "PredecessorPlan":
        """Forward-integrate a known acceleration profile (the leader case)."""
        accel = np.asarray(accel_samples, dtype=float)
        n = accel.shape[0]
        vel = np.empty(n)
        pos = np.empty(n)
        vel[0] = velocity
        pos[0] = position
        for k in range(n - 1):
            vel[k + 1] = vel[k] + time_step * accel[k]
            pos[k + 1] = pos[k] + time_step * vel[k]
        return cls(accel, pos, vel)


def earliest_merge_step(pred_position: np.ndarray, current_spacing: float,
                        same_road: bool) -> float:
    """First predicted step at which the follower's assumed trajectory
    (predecessor positions shifted back by the current gap) reaches the
    merge point; 0 on a shared road, inf if the horizon never gets there."""
    if same_road:
        return 0
    assumed = np.asarray(pred_position, dtype=float) - current_spacing
    hits = np.nonzero(assumed >= 0.0)[0]
    return int(hits[0]) if hits.size else math.inf


def safety_active(x0: LonState, merge_step: float, horizon: int,
                  safe_spacing: float) -> bool:
    """The safety cost turns on only when closing in (speed_diff <= 0),
    already too deep (spacing_dev <= -safe_spacing), and the merge point is
    reachable within the horizon."""
    return (x0.speed_diff <= 0.0
            and x0.spacing_dev <= -safe_spacing
            and merge_step <= horizon)


def safety_coefficient(spacing_dev0: float, safe_spacing: float,
                       weight: float) -> float:
    """Extra speed-difference weight, exponential in how deep the gap is."""
    return weight * math.exp(spacing_dev0 / -safe_spacing)


@dataclass
class LonPlan:
    controls: np.ndarray        # jerk sequence, length horizon+1
    states: np.ndarray          # (horizon+1, 3) predicted states
    position: np.ndarray        # own broadcast sequences
    velocity: np.ndarray
    accel: np.ndarray
    objective: float
    degraded: bool = False
    safety_on: bool = False
    kkt_residual: float = 0.0

    def broadcast(self) -> PredecessorPlan:
        return PredecessorPlan(self.accel, self.position, self.velocity)

    @property
    def first_control(self) -> float:
        return float(self.controls[0])


@dataclass
class _CondensedProblem:
    matrices: BatchMatrices
    A_in: np.ndarray
    in_state_rows: np.ndarray    # selector into the stacked state vector
    in_signs: np.ndarray
    terminal_rows: np.ndarray    # (2, horizon+1)
    kkt_lu: tuple                # prefactored [2H C'; C 0]


def _condense(weights: LonWeights, limits: VehicleLimits, horizon: int,
              time_step: float, safety_coeff: float) -> _CondensedProblem:
    w = weights
    if safety_coeff > 0.0:
        w = replace(weights, state=weights.state + np.array([0.0, safety_coeff, 0.0]))
    mats = batch_matrices(w, horizon, time_step)
    steps = horizon + 1
    # state inequality rows for k >= 1 (the k = 0 rows have no decision
    # coefficients; the initial state is checked separately)
    comp_rows = []
    signs = []
    for k in range(1, steps):
        for comp in range(3):
            comp_rows.extend([3 * k + comp, 3 * k + comp])
            signs.extend([1.0, -1.0])
    rows = np.array(comp_rows, dtype=int)
    sgn = np.array(signs)
    A_state = sgn[:, None] * mats.S_u[rows]
    A_in = np.vstack([A_state, np.eye(steps), -np.eye(steps)])
    terminal = np.vstack([mats.S_u[3 * horizon + 1], mats.S_u[3 * horizon + 2]])
    n = steps
    K = np.zeros((n + 2, n + 2))
    K[:n, :n] = 2.0 * mats.H
    K[:n, n:] = terminal.T
    K[n:, :n] = terminal
    return _CondensedProblem(mats, A_in, rows, sgn, terminal, lu_factor(K))


def _state_bounds(limits: VehicleLimits, pred_velocity: np.ndarray,
                  horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-step lower/upper state bounds, (horizon+1, 3) each; the
    speed-difference band tracks the predecessor's predicted speed so the
    follower's own velocity stays inside [v_min, v_max]."""
    steps = horizon + 1
    lo = np.empty((steps, 3))
    hi = np.empty((steps, 3))
    lo[:, 0] = limits.spacing_dev_min
    hi[:, 0] = limits.spacing_dev_max
    lo[:, 1] = pred_velocity - limits.v_max
    hi[:, 1] = pred_velocity - limits.v_min
    lo[:, 2] = limits.a_min
    hi[:, 2] = limits.a_max
    return lo, hi


def build_mpc_qp(x0: LonState, plan: PredecessorPlan, weights: LonWeights,
                 limits: VehicleLimits, horizon: int, time_step: float,
                 terminal_constraints: bool = True,
                 safety_coeff: float = 0.0) -> QuadraticProgram:
    """Condensed QP over the jerk sequence.

    States are eliminated through the stacked prediction maps; the safety
    coefficient, frozen from the current state, enters as extra
    speed-difference weight at every stage (terminal stage included, where it
    picks up the terminal magnification like the rest of the stage cost).
    """
    if plan.steps != horizon:
        raise ValueError("predecessor plan length must match the horizon")
    prob = _condense(weights, limits, horizon, time_step, safety_coeff)
    mats = prob.matrices
    x = x0.as_array()
    base = mats.S_x @ x + mats.S_a @ plan.accel
    g = 2.0 * (mats.F.T @ x + mats.L.T @ plan.accel)
    lo, hi = _state_bounds(limits, plan.velocity, horizon)
    lo_flat = lo.reshape(-1)
    hi_flat = hi.reshape(-1)
    bounds = np.where(prob.in_signs > 0, hi_flat[prob.in_state_rows],
                      -lo_flat[prob.in_state_rows])
    b_state = bounds - prob.in_signs * base[prob.in_state_rows]
    steps = horizon + 1
    b_in = np.concatenate([
        b_state,
        np.full(steps, limits.jerk_max),
        np.full(steps, -limits.jerk_min),
    ])
    A_eq = b_eq = None
    if terminal_constraints:
        A_eq = prob.terminal_rows
        b_eq = np.array([
            0.0 - base[3 * horizon + 1],
            plan.accel[horizon] - base[3 * horizon + 2],
        ])
    return QuadraticProgram(2.0 * mats.H, g, A_eq, b_eq, prob.A_in, b_in)


def _reconstruct(mats: BatchMatrices, x0: np.ndarray, controls: np.ndarray,
                 plan: PredecessorPlan, desired_spacing: float,
                 objective: float, degraded: bool, safety_on: bool,
                 kkt_residual: float) -> LonPlan:
    stacked = mats.S_x @ x0 + mats.S_u @ controls + mats.S_a @ plan.accel
    states = stacked.reshape(-1, 3)
    velocity = plan.velocity - states[:, 1]
    position = plan.position - desired_spacing - states[:, 0]
    return LonPlan(controls, states, position, velocity, states[:, 2].copy(),
                   objective, degraded, safety_on, kkt_residual)


class LonController:
    """Per-vehicle longitudinal MPC with cached condensed matrices.

    The expensive pieces (stacked prediction maps, the prefactored
    equality-KKT system) depend only on weights, limits, horizon, time step,
    and the safety coefficient, so they are rebuilt only when the safety
    coefficient changes.
    """

    def __init__(self, weights: LonWeights, limits: VehicleLimits,
                 horizon: int, time_step: float,
                 terminal_constraints: bool = True):
        self.weights = weights
        self.limits = limits
        self.horizon = horizon
        self.time_step = time_step
        self.terminal_constraints = terminal_constraints
        self._cache: dict[float, _CondensedProblem] = {}
        self._last_controls: np.ndarray | None = None

    def _problem(self, safety_coeff: float) -> _CondensedProblem:
        key = round(float(safety_coeff), 12)
        if key not in self._cache:
            if len(self._cache) > 8:  # safety coefficient varies continuously
                self._cache.clear()
            self._cache[key] = _condense(self.weights, self.limits, self.horizon,
                                         self.time_step, safety_coeff)
        return self._cache[key]

    def solve(self, x0: LonState, plan: PredecessorPlan,
              same_road: bool = True, current_spacing: float | None = None,
              desired_spacing: float = 0.0) -> LonPlan:
        """One receding-horizon solve; falls back to soft terminal constraints
        and then to emergency braking if the problem is infeasible."""
        horizon = self.horizon
        if plan.steps != horizon:
            raise ValueError("predecessor plan length must match the horizon")
        if current_spacing is None:
            current_spacing = desired_spacing + x0.spacing_dev
        merge_step = earliest_merge_step(plan.position, current_spacing, same_road)
        on = safety_active(x0, merge_step, horizon, self.limits.safe_spacing)
        coeff = safety_coefficient(x0.spacing_dev, self.limits.safe_spacing,
                                   self.weights.safety) if on else 0.0
        prob = self._problem(coeff)
        mats = prob.matrices
        x = x0.as_array()
        base = mats.S_x @ x + mats.S_a @ plan.accel
        g = 2.0 * (mats.F.T @ x + mats.L.T @ plan.accel)
        lo, hi = _state_bounds(self.limits, plan.velocity, horizon)
        bounds = np.where(prob.in_signs > 0,
                          hi.reshape(-1)[prob.in_state_rows],
                          -lo.reshape(-1)[prob.in_state_rows])
        b_state = bounds - prob.in_signs * base[prob.in_state_rows]
        steps = horizon + 1
        b_in = np.concatenate([
            b_state,
            np.full(steps, self.limits.jerk_max),
            np.full(steps, -self.limits.jerk_min),
        ])
        d_eq = np.array([
            0.0 - base[3 * horizon + 1],
            plan.accel[horizon] - base[3 * horizon + 2],
        ])

        if self.terminal_constraints:
            # fast path: equality-constrained optimum, accepted when it
            # already satisfies every inequality
            rhs = np.concatenate([-g, d_eq])
            sol = lu_solve(prob.kkt_lu, rhs)
            controls = sol[:steps]
            if np.all(prob.A_in @ controls <= b_in + QP_TOLERANCE):
                objective = float(controls @ (mats.H @ controls) + g @ controls)
                stationarity = 2.0 * mats.H @ controls + g \
                    + prob.terminal_rows.T @ sol[steps:]
                residual = max(float(np.max(np.abs(stationarity))),
                               float(np.max(np.abs(prob.terminal_rows @ controls - d_eq))))
                self._last_controls = controls
                return _reconstruct(mats, x, controls, plan, desired_spacing,
                                    objective, False, on, residual)
            qp = QuadraticProgram(2.0 * mats.H, g, prob.terminal_rows, d_eq,
                                  prob.A_in, b_in)
        else:
            qp = QuadraticProgram(2.0 * mats.H, g, None, None, prob.A_in, b_in)

        hint = None
        if self._last_controls is not None:
            hint = np.append(self._last_controls[1:], 0.0)
        solution = solve_qp(qp, QP_TOLERANCE, x0=hint)
        if solution.status is not QpStatus.INFEASIBLE:
            controls = solution.primal
            self._last_controls = controls
            return _reconstruct(mats, x, controls, plan, desired_spacing,
                                qp.objective(controls), False, on,
                                solution.kkt_residual)

        # fallback 1: soften the terminal constraints into heavy penalties
        if self.terminal_constraints:
            weight = self.weights.terminal * TERMINAL_PENALTY_FACTOR
            H_soft = qp.H + 2.0 * weight * prob.terminal_rows.T @ prob.terminal_rows
            g_soft = g - 2.0 * weight * prob.terminal_rows.T @ d_eq
            soft = QuadraticProgram(H_soft, g_soft, None, None, prob.A_in, b_in)
            solution = solve_qp(soft, QP_TOLERANCE)
            if solution.status is not QpStatus.INFEASIBLE:
                controls = solution.primal
                self._last_controls = controls
                return _reconstruct(mats, x, controls, plan, desired_spacing,
                                    qp.objective(controls), True, on,
                                    solution.kkt_residual)

        # fallback 2: emergency braking toward the acceleration floor,
        # easing off at the velocity floor so the vehicle never reverses
        controls = np.empty(steps)
        accel = x0.accel
        vel = plan.velocity[0] - x0.speed_diff
        ts = self.time_step
        for k in range(steps):
            target = max(self.limits.a_min, (self.limits.v_min - vel) / ts)
            controls[k] = np.clip((target - accel) / ts,
                                  self.limits.jerk_min, self.limits.jerk_max)
            vel += ts * accel
            accel += ts * controls[k]
        self._last_controls = controls
        return _reconstruct(mats, x, controls, plan, desired_spacing,
                            qp.objective(controls), True, on, math.inf)


def solve_lon_mpc(x0: LonState, plan: PredecessorPlan, weights: LonWeights,
                  limits: VehicleLimits, horizon: int, time_step: float,
                  same_road: bool = True, current_spacing: float | None = None,
                  desired_spacing: float = 0.0,
                  terminal_constraints: bool = True) -> LonPlan:
    """One-shot solve (no cached controller state)."""
    controller = LonController(weights, limits, horizon, time_step,
                               terminal_constraints)
    return controller.solve(x0, plan, same_road, current_spacing, desired_spacing)


def stage_cost(x: np.ndarray, jerk: float, weights: LonWeights,
               safety_coeff: float = 0.0) -> float:
    """Running cost of one realized state/control sample."""
    x = np.asarray(x, dtype=float)
    cost = float(x @ (weights.state * x) + weights.control * jerk * jerk)
    return cost + safety_coeff * float(x[1]) ** 2


def terminal_weight_lower_bound(epsilon: float, limits: VehicleLimits,
                                weights: LonWeights, horizon: int,
                                time_step: float) -> float:
    """Smallest terminal-stage magnification that the local-stability
    argument certifies for tolerance epsilon.

    Uses the Lipschitz constants of the stage cost and dynamics over the box
    of reachable states and inputs; the speed-difference radius is taken as
    the full v_max - v_min band, the widest the speed constraint can allow.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    spacing_r = max(abs(limits.spacing_dev_min), abs(limits.spacing_dev_max))
    speed_r = limits.v_max - limits.v_min
    accel_r = max(abs(limits.a_min), abs(limits.a_max))
    jerk_r = max(abs(limits.jerk_min), abs(limits.jerk_max))
    radius = math.sqrt(spacing_r**2 + speed_r**2 + accel_r**2 + jerk_r**2)
    spectral = max(float(np.max(weights.state)), weights.control)
    alpha_cost = 2.0 * radius * spectral
    A, B, _ = platoon_matrices(time_step)
    alpha_dyn = float(np.linalg.norm(np.column_stack([A, B]), 2))
    input_range = limits.jerk_max - limits.jerk_min
    total = 0.0
    for k in range(horizon):
        total += alpha_cost * sum(alpha_dyn ** (k - j) for j in range(k + 1)) * input_range
    return total / epsilon


def serial_platoon_step(
    kinematics: list,              # CavKinematics in sequence order
    same_road: list[bool],         # per follower i (index 1..n-1): on predecessor's road?
    desired_spacing: np.ndarray,   # per follower, length n-1
    controllers: list[LonController],  # per follower
    leader_accel_samples: np.ndarray,  # length horizon+1
    time_step: float,
) -> list[LonPlan]:
    """One synchronized control step of the whole platoon.

    The leader broadcasts its scripted profile; followers solve in ascending
    sequence order, each against the plan its predecessor just produced.
    Returns one plan per vehicle (the leader's profile plan first).
    """
    n = len(kinematics)
    if n == 0:
        return []
    leader = kinematics[0]
    plans: list[LonPlan] = []
    pred_plan = PredecessorPlan.from_profile(
        leader.z_position, leader.velocity, leader_accel_samples, time_step)
    steps = pred_plan.accel.shape[0]
    leader_states = np.zeros((steps, 3))
    leader_states[:, 2] = pred_plan.accel
    plans.append(LonPlan(np.zeros(steps), leader_states, pred_plan.position,
                         pred_plan.velocity, pred_plan.accel, 0.0))
    for i in range(1, n):
        own = kinematics[i]
        pred = kinematics[i - 1]
        spacing = pred.z_position - own.z_position
        x0 = LonState(spacing - desired_spacing[i - 1],
                      pred.velocity - own.velocity, own.acceleration)
        plan = controllers[i - 1].solve(x0, pred_plan, same_road[i - 1],
                                        spacing, desired_spacing[i - 1])
        plans.append(plan)
        pred_plan = plan.broadcast()
    return plans
