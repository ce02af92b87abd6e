"""Shared parameter containers and their stock values.

Every controller in the stack reads from these dataclasses; scenario files
override individual fields and everything else keeps the stock value.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class VehicleLimits:
    """Physical and design bounds for one CAV."""

    v_min: float = 0.0            # m/s
    v_max: float = 30.0           # m/s
    a_min: float = -5.0           # m/s^2
    a_max: float = 5.0            # m/s^2
    jerk_min: float = -5.0        # m/s^3, control input lower bound
    jerk_max: float = 5.0         # m/s^3, control input upper bound
    spacing_dev_min: float = -30.0   # m
    spacing_dev_max: float = 30.0    # m
    safe_spacing: float = 5.0     # m, |spacing deviation| band treated as "close enough"
    steer_min: float = -0.8       # rad
    steer_max: float = 0.8        # rad
    steer_rate_max: float = 0.04  # rad per control step

    def validate(self) -> None:
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be < v_max")
        if self.a_min >= self.a_max:
            raise ValueError("a_min must be < a_max")
        if self.jerk_min > self.jerk_max:
            raise ValueError("jerk_min must be <= jerk_max")
        if self.spacing_dev_min >= self.spacing_dev_max:
            raise ValueError("spacing_dev_min must be < spacing_dev_max")
        if self.safe_spacing <= 0:
            raise ValueError("safe_spacing must be positive")


@dataclass
class DrivelineParams:
    """First-order driveline constants for the torque <-> jerk map."""

    efficiency: float = 0.8
    mass: float = 1500.0          # kg
    tire_radius: float = 0.25     # m
    time_lag: float = 0.4         # s
    rolling_resistance: float = 0.015
    gravity: float = 9.8          # N/kg
    air_density: float = 1.2      # kg/m^3
    drag_coeff: float = 0.25
    frontal_area: float = 2.0     # m^2

    def validate(self) -> None:
        for name, value in vars(self).items():
            if value <= 0:
                raise ValueError(f"driveline parameter {name} must be positive")


@dataclass
class LonWeights:
    """Longitudinal MPC weights: state (diagonal), control, safety, terminal."""

    state: np.ndarray = field(default_factory=lambda: np.array([0.01, 0.02, 0.01]))
    control: float = 0.01
    safety: float = 10.0
    terminal: float = 1600.0      # scaling of the final stage cost

    def __post_init__(self) -> None:
        self.state = np.asarray(self.state, dtype=float)

    def validate(self) -> None:
        if self.state.shape != (3,) or np.any(self.state <= 0):
            raise ValueError("longitudinal state weights must be 3 positive entries")
        if self.control <= 0:
            raise ValueError("longitudinal control weight must be positive")
        if self.safety < 0:
            raise ValueError("safety weight must be nonnegative")
        if self.terminal < 1.0:
            raise ValueError("terminal weight must be >= 1")

    def state_matrix(self) -> np.ndarray:
        return np.diag(self.state)


@dataclass
class SequencerWeights:
    """Merging-sequence objective weights.

    spacing scales the absolute spacing deviation of each consecutive pair;
    trend scales the count of pairs whose current speed difference drives the
    spacing deviation further from zero.
    """

    spacing: float = 1.0
    trend: float = 1.0

    def validate(self) -> None:
        if self.spacing < 0 or self.trend < 0:
            raise ValueError("sequencer weights must be nonnegative")


@dataclass
class LatWeights:
    """Lateral MPC weights: pose tracking (diagonal) and input effort."""

    state: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 8.0]))
    control: np.ndarray = field(default_factory=lambda: np.array([0.001, 20.0]))

    def __post_init__(self) -> None:
        self.state = np.asarray(self.state, dtype=float)
        self.control = np.asarray(self.control, dtype=float)

    def validate(self) -> None:
        if self.state.shape != (3,) or np.any(self.state < 0):
            raise ValueError("lateral state weights must be 3 nonnegative entries")
        if self.control.shape != (2,) or np.any(self.control < 0):
            raise ValueError("lateral control weights must be 2 nonnegative entries")
        if self.control[1] <= 0:
            raise ValueError("steering effort weight must be positive")

    def state_matrix(self) -> np.ndarray:
        return np.diag(self.state)

    def control_matrix(self) -> np.ndarray:
        return np.diag(self.control)
