"""Merging-sequence optimization.

Assigns virtual car-following sequence IDs to mainline and ramp vehicles.
Feasible assignments are exactly the order-preserving interleavings of the
two road queues, so instead of a generic mixed-integer solver we run
depth-first branch-and-bound directly over interleavings; every completed
leaf is scored with the same evaluator the exhaustive oracle uses, which
makes the optimum bit-identical to enumeration.

The objective combines, per consecutive sequence pair, the absolute spacing
deviation and a 0/2 penalty for pairs whose current speed difference drives
that deviation further from zero, plus a macroscopic term that discourages
vehicles from the lower-density road from merging early.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .params import SequencerWeights

MAX_ENUMERATION_VEHICLES = 12


class InfeasibleAssignmentError(ValueError):
    """Assignment violates permutation or within-road order constraints."""


@dataclass
class AssignmentMatrix:
    """Binary n x n decision matrix: entry (i, j) is 1 when vehicle i
    (0-based; mainline block first) holds 1-based sequence ID j+1."""

    matrix: np.ndarray
    n_mainline: int

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_sequence(cls, sequence: list[int] | np.ndarray, n_mainline: int) -> "AssignmentMatrix":
        """sequence[j] = 0-based vehicle index holding sequence position j."""
        sequence = np.asarray(sequence, dtype=int)
        n = sequence.shape[0]
        matrix = np.zeros((n, n), dtype=int)
        matrix[sequence, np.arange(n)] = 1
        return cls(matrix, n_mainline)

    def sequence(self) -> np.ndarray:
        """Vehicle index at each sequence position."""
        return np.argmax(self.matrix, axis=0)

    def position_of(self) -> np.ndarray:
        """1-based sequence ID of each vehicle."""
        return np.argmax(self.matrix, axis=1) + 1

    def check(self) -> None:
        m = self.matrix
        n = self.n
        if m.shape != (n, n) or not np.all((m == 0) | (m == 1)):
            raise InfeasibleAssignmentError("matrix must be binary and square")
        if not np.all(m.sum(axis=0) == 1):
            raise InfeasibleAssignmentError("each sequence ID must go to exactly one vehicle")
        if not np.all(m.sum(axis=1) == 1):
            raise InfeasibleAssignmentError("each vehicle must get exactly one sequence ID")
        ids = self.position_of()
        for block in (range(self.n_mainline), range(self.n_mainline, n)):
            block = list(block)
            for prev, cur in zip(block, block[1:]):
                if ids[prev] >= ids[cur]:
                    raise InfeasibleAssignmentError(
                        f"within-road order violated between vehicles {prev} and {cur}")


@dataclass
class PairDiagnostics:
    """Per consecutive-pair terms of the objective."""

    spacing_dev: np.ndarray     # |deviation| per pair, length n-1
    sign_spacing: np.ndarray    # +-1
    sign_speed: np.ndarray      # +-1
    trend_penalty: np.ndarray   # 0 or 2


@dataclass
class SequencingSolution:
    assignment: AssignmentMatrix
    objective: float
    diagnostics: PairDiagnostics
    nodes_explored: int = 0
    wall_time: float = 0.0
    big_m: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)


def build_weight_matrix(m: int, r: int, mainline_density: float,
                        ramp_density: float) -> np.ndarray:
    """Macroscopic weight matrix: the lower-density road's columns carry the
    halving vector [1, 0.5, 0.25, ...]^T so its vehicles pay for early IDs.

    Equal densities (including an absent road, whose density is zero and is
    therefore the lower one) penalize nobody.
    """
    n = m + r
    if n < 1:
        raise ValueError("need at least one vehicle")
    if mainline_density < 0 or ramp_density < 0:
        raise ValueError("densities must be nonnegative")
    S = np.zeros((n, n))
    if math.isclose(mainline_density, ramp_density, rel_tol=1e-12, abs_tol=1e-15):
        return S
    column = 0.5 ** np.arange(n)
    if mainline_density < ramp_density:
        S[:, :m] = column[:, None]
    else:
        S[:, m:] = column[:, None]
    return S


def road_densities(positions: np.ndarray, m: int, r: int) -> tuple[float, float]:
    """Vehicles per meter of occupied control area, per road.

    The occupied length of a road is the distance from the merge point to its
    farthest vehicle (at least 1 m to keep the ratio finite).
    """
    positions = np.asarray(positions, dtype=float)

    def density(block: np.ndarray) -> float:
        if block.size == 0:
            return 0.0
        return block.size / max(float(np.max(-block)), 1.0)

    return density(positions[:m]), density(positions[m:])


def big_m_constants(positions: np.ndarray, velocities: np.ndarray,
                    d_star: np.ndarray) -> tuple[float, float, float, float]:
    """Per-instance big-M values for the sign-indicator linearization;
    10x the largest attainable magnitude keeps them safely dominating."""
    spread_p = float(np.max(positions) - np.min(positions)) if positions.size else 0.0
    spread_v = float(np.max(velocities) - np.min(velocities)) if velocities.size else 0.0
    d_max = float(np.max(d_star)) if np.size(d_star) else 0.0
    m_pos = 10.0 * (spread_p + d_max) + 1.0
    m_vel = 10.0 * (spread_v + d_max) + 1.0
    return (m_pos, m_pos, m_vel, m_vel)


def _sign(value: float) -> int:
    """Sign with +1 canonicalized at zero."""
    return 1 if value >= 0.0 else -1


def evaluate_assignment_cost(
    assignment: AssignmentMatrix,
    positions: np.ndarray,
    velocities: np.ndarray,
    d_star: np.ndarray,
    weights: SequencerWeights,
    S: np.ndarray,
) -> tuple[float, PairDiagnostics]:
    """Objective of one feasible assignment plus its per-pair terms.

    For the pair (ID j, ID j+1): deviation = p_j - p_{j+1} - d*_{j+1};
    the trend penalty is 2 when sign(deviation) differs from
    sign(v_{j+1} - v_j), i.e. when the gap error is currently growing.
    """
    assignment.check()
    seq = assignment.sequence()
    n = assignment.n
    positions = np.asarray(positions, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    d_star = np.asarray(d_star, dtype=float)
    if d_star.shape[0] != n - 1:
        raise ValueError("d_star must have one entry per follower (n-1)")

    dev = np.empty(n - 1)
    s_d = np.empty(n - 1, dtype=int)
    s_v = np.empty(n - 1, dtype=int)
    trend = np.empty(n - 1, dtype=int)
    objective = 0.0
    for j in range(n - 1):
        predecessor, follower = seq[j], seq[j + 1]
        deviation = positions[predecessor] - positions[follower] - d_star[j]
        speed_diff = velocities[follower] - velocities[predecessor]
        dev[j] = abs(deviation)
        s_d[j] = _sign(deviation)
        s_v[j] = _sign(speed_diff)
        trend[j] = abs(s_d[j] - s_v[j])
        objective += weights.spacing * dev[j] + weights.trend * trend[j]
    ids = assignment.position_of()
    for i in range(n):
        objective += float(S[ids[i] - 1, i])
    return objective, PairDiagnostics(dev, s_d, s_v, trend)


def enumerate_interleavings(m: int, r: int) -> list[AssignmentMatrix]:
    """All C(m+r, m) order-preserving interleavings of the two road queues."""
    n = m + r
    if n < 1:
        raise ValueError("need at least one vehicle")
    if n > MAX_ENUMERATION_VEHICLES:
        raise ValueError(
            f"enumeration guard: {n} vehicles exceeds {MAX_ENUMERATION_VEHICLES}")
    out = []
    for mainline_slots in combinations(range(n), m):
        seq = np.empty(n, dtype=int)
        slot_set = set(mainline_slots)
        next_main, next_ramp = 0, m
        for pos in range(n):
            if pos in slot_set:
                seq[pos] = next_main
                next_main += 1
            else:
                seq[pos] = next_ramp
                next_ramp += 1
        out.append(AssignmentMatrix.from_sequence(seq, m))
    return out


def fifo_sequence(positions: np.ndarray, m: int) -> AssignmentMatrix:
    """Distance-ordered baseline: closest to the merge gets ID 1; exact
    position ties go to the mainline vehicle."""
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    if n < 1:
        raise ValueError("need at least one vehicle")
    order = sorted(range(n), key=lambda i: (-positions[i], i))
    return AssignmentMatrix.from_sequence(np.array(order), m)


def solve_milp(
    positions: np.ndarray,
    velocities: np.ndarray,
    m: int,
    r: int,
    d_star: np.ndarray,
    weights: SequencerWeights,
    S: np.ndarray,
) -> SequencingSolution:
    """Optimal merging sequence by depth-first branch-and-bound.

    Branches on which road supplies the next sequence ID, mainline first, so
    among equal-objective leaves the first one found is the lexicographically
    smallest (mainline-favoring) sequence. The bound is the accumulated cost
    of the fixed prefix; all remaining terms are nonnegative.
    """
    start = time.perf_counter()
    n = m + r
    if n < 1:
        raise ValueError("need at least one vehicle")
    positions = np.asarray(positions, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    d_star = np.asarray(d_star, dtype=float)

    best_cost = math.inf
    best_seq: np.ndarray | None = None
    nodes = 0
    prefix = np.empty(n, dtype=int)

    def pair_cost(pos_idx: int, pred: int, foll: int) -> float:
        deviation = positions[pred] - positions[foll] - d_star[pos_idx]
        speed_diff = velocities[foll] - velocities[pred]
        trend = abs(_sign(deviation) - _sign(speed_diff))
        return weights.spacing * abs(deviation) + weights.trend * trend

    def descend(depth: int, next_main: int, next_ramp: int, cost: float) -> None:
        nonlocal best_cost, best_seq, nodes
        nodes += 1
        if cost > best_cost + 1e-9:
            return
        if depth == n:
            # score the leaf through the same evaluator the enumeration oracle
            # uses, so the reported optimum is bit-identical to enumeration
            leaf = AssignmentMatrix.from_sequence(prefix, m)
            objective, _ = evaluate_assignment_cost(
                leaf, positions, velocities, d_star, weights, S)
            if objective < best_cost:
                best_cost = objective
                best_seq = prefix.copy()
            return
        for vehicle in (next_main if next_main < m else None,
                        next_ramp if next_ramp < n else None):
            if vehicle is None:
                continue
            added = float(S[depth, vehicle])
            if depth > 0:
                added += pair_cost(depth - 1, prefix[depth - 1], vehicle)
            prefix[depth] = vehicle
            descend(depth + 1,
                    next_main + (vehicle < m),
                    next_ramp + (vehicle >= m),
                    cost + added)

    descend(0, 0, m, 0.0)
    assert best_seq is not None
    assignment = AssignmentMatrix.from_sequence(best_seq, m)
    # canonical objective: same evaluation path as the enumeration oracle
    objective, diagnostics = evaluate_assignment_cost(
        assignment, positions, velocities, d_star, weights, S)
    return SequencingSolution(
        assignment, objective, diagnostics, nodes,
        time.perf_counter() - start,
        big_m_constants(positions, velocities, d_star),
    )
