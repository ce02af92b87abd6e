"""Closed-form analysis of the longitudinal controller.

Batch (condensed) form of the finite-horizon problem with the predecessor's
acceleration sequence as an exogenous input, the explicit feedback and
feedforward gains read off its unconstrained minimizer, and the l2
string-stability classification of the resulting continuous-time loop.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .params import LonWeights

logger = logging.getLogger(__name__)

SWEEP_OMEGAS = np.logspace(-3.0, 3.0, 10_000)
SWEEP_SLACK = 1e-6


def platoon_matrices(time_step: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-step platoon dynamics x+ = A x + B u + D a_pred for the state
    (spacing deviation, speed difference, own acceleration)."""
    ts = float(time_step)
    A = np.array([[1.0, ts, 0.0],
                  [0.0, 1.0, -ts],
                  [0.0, 0.0, 1.0]])
    B = np.array([0.0, 0.0, ts])
    D = np.array([0.0, ts, 0.0])
    return A, B, D


@dataclass
class BatchMatrices:
    """Stacked prediction maps and condensed quadratic-cost blocks.

    states = S_x x0 + S_u controls + S_a pred_accels, stacked over steps
    0..horizon; H, F, L are the quadratic, initial-state, and feedforward
    couplings of the cost in the control sequence.
    """

    S_x: np.ndarray
    S_u: np.ndarray
    S_a: np.ndarray
    Q_blocks: np.ndarray   # per-step state weights, shape (horizon+1, 3)
    R_diag: np.ndarray     # per-step control weights, shape (horizon+1,)
    H: np.ndarray
    F: np.ndarray
    L: np.ndarray
    horizon: int
    time_step: float


def batch_matrices(weights: LonWeights, horizon: int, time_step: float) -> BatchMatrices:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    A, B, D = platoon_matrices(time_step)
    steps = horizon + 1
    S_x = np.zeros((3 * steps, 3))
    S_u = np.zeros((3 * steps, steps))
    S_a = np.zeros((3 * steps, steps))
    power = np.eye(3)
    for k in range(steps):
        S_x[3 * k:3 * k + 3] = power
        power = power @ A
    for k in range(1, steps):
        # block row k: A^{k-1-j} B (and D) for j = 0..k-1
        power = np.eye(3)
        for j in range(k - 1, -1, -1):
            S_u[3 * k:3 * k + 3, j] = power @ B
            S_a[3 * k:3 * k + 3, j] = power @ D
            power = power @ A
    Q_blocks = np.tile(weights.state, (steps, 1))
    Q_blocks[-1] *= weights.terminal
    R_diag = np.full(steps, weights.control)
    R_diag[-1] *= weights.terminal
    q_flat = Q_blocks.reshape(-1)
    H = S_u.T @ (q_flat[:, None] * S_u) + np.diag(R_diag)
    F = S_x.T @ (q_flat[:, None] * S_u)
    L = S_a.T @ (q_flat[:, None] * S_u)
    return BatchMatrices(S_x, S_u, S_a, Q_blocks, R_diag, H, F, L,
                         horizon, float(time_step))


def _solve_h(matrices: BatchMatrices, rhs: np.ndarray) -> np.ndarray:
    H = matrices.H
    cond = np.linalg.cond(H)
    if cond > 1e10:
        logger.warning("condensed Hessian condition number %.3e", cond)
    try:
        c, low = _cho(H)
        from scipy.linalg import cho_solve
        return cho_solve((c, low), rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("condensed Hessian is singular") from exc


def _cho(H: np.ndarray):
    from scipy.linalg import cho_factor
    try:
        return cho_factor(H)
    except Exception as exc:  # scipy raises LinAlgError; normalize
        raise np.linalg.LinAlgError(str(exc)) from exc


def explicit_solution(x0: np.ndarray, pred_accel: np.ndarray,
                      matrices: BatchMatrices) -> np.ndarray:
    """Unconstrained optimal control sequence for initial state x0 and
    predecessor acceleration sequence pred_accel (length horizon+1)."""
    x0 = np.asarray(x0, dtype=float)
    pred_accel = np.asarray(pred_accel, dtype=float)
    if pred_accel.shape != (matrices.horizon + 1,):
        raise ValueError("pred_accel must have horizon+1 entries")
    rhs = matrices.F.T @ x0 + matrices.L.T @ pred_accel
    return -_solve_h(matrices, rhs)


@dataclass
class GainSet:
    """First-step control law: u0 = feedback . x0 + feedforward . pred_accels."""

    feedback: np.ndarray        # (gain_spacing, gain_speed, gain_accel)
    feedforward: np.ndarray     # one entry per predicted predecessor accel
    feedforward_total: float

    @property
    def gain_spacing(self) -> float:
        return float(self.feedback[0])

    @property
    def gain_speed(self) -> float:
        return float(self.feedback[1])

    @property
    def gain_accel(self) -> float:
        return float(self.feedback[2])


def explicit_gains(weights: LonWeights, horizon: int, time_step: float) -> GainSet:
    matrices = batch_matrices(weights, horizon, time_step)
    feedback_rows = -_solve_h(matrices, matrices.F.T)
    feedforward_rows = -_solve_h(matrices, matrices.L.T)
    feedback = feedback_rows[0]
    feedforward = feedforward_rows[0]
    return GainSet(feedback, feedforward, float(np.sum(feedforward)))


def transfer_magnitude(gains: GainSet, omega: float | np.ndarray) -> float | np.ndarray:
    """|spacing-deviation transfer| from predecessor to follower at frequency
    omega for the continuous-time loop implied by the first-step gains."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("omega must be positive")
    kd, kv, ka = gains.gain_spacing, gains.gain_speed, gains.gain_accel
    kf = gains.feedforward_total
    num = (-omega**2 * kf + kd) ** 2 + omega**2 * kv**2
    den = (omega**2 * ka + kd) ** 2 + (-omega**3 + kv * omega) ** 2
    with np.errstate(divide="ignore"):
        mag = np.sqrt(num / den)
    out = np.where(den == 0.0, np.inf, mag)
    return float(out) if out.ndim == 0 else out


@dataclass
class StringStabilityVerdict:
    p: float
    q: float
    stable: bool                # analytic classification
    worst_omega: float          # frequency-sweep peak location
    worst_magnitude: float
    sweep_stable: bool

    @property
    def agrees(self) -> bool:
        return self.stable == self.sweep_stable


def classify_string_stability(gains: GainSet) -> StringStabilityVerdict:
    """Analytic p-q classification plus an independent frequency sweep.

    The loop attenuates spacing deviations iff W^2 + p W + q/4 >= 0 for all
    W = omega^2 > 0: true when the quadratic has no real roots, or when both
    roots are nonpositive.
    """
    kd, kv, ka = gains.gain_spacing, gains.gain_speed, gains.gain_accel
    kf = gains.feedforward_total
    p = ka**2 - kf**2 - 2.0 * kv
    q = 8.0 * kd * (ka + kf)
    disc = p * p - q
    if disc <= 0.0:
        stable = True
    else:
        root_hi = (-p + np.sqrt(disc)) / 2.0
        stable = bool(root_hi <= 0.0)
    mags = transfer_magnitude(gains, SWEEP_OMEGAS)
    worst = int(np.argmax(mags))
    worst_magnitude = float(mags[worst])
    return StringStabilityVerdict(
        p=float(p), q=float(q), stable=stable,
        worst_omega=float(SWEEP_OMEGAS[worst]),
        worst_magnitude=worst_magnitude,
        sweep_stable=bool(worst_magnitude <= 1.0 + SWEEP_SLACK),
    )


def l2_ratio(spacing_dev: np.ndarray, spacing_dev_predecessor: np.ndarray,
             time_step: float = 1.0) -> float:
    """Energy ratio of a follower's spacing-deviation signal to its
    predecessor's; at or below one means the disturbance did not amplify."""
    a = np.asarray(spacing_dev, dtype=float)
    b = np.asarray(spacing_dev_predecessor, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 2:
        raise ValueError("series must be equal-length 1-D with at least 2 samples")
    denom = np.sqrt(np.sum(b * b) * time_step)
    if denom == 0.0:
        raise ValueError("predecessor series is identically zero")
    return float(np.sqrt(np.sum(a * a) * time_step) / denom)
