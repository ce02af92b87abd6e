"""Scenario runner: sequencing, serial longitudinal solves, lateral solves,
logging, metrics, and leader acceleration profiles.

One simulation is strictly sequential (the serial MPC scheme is a dependency
chain); ensembles run one seed per simulation with independent RNG streams.
Identical config + seed reproduces the log bit for bit.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .lateral import (
    LatControl,
    PoseState,
    bicycle_step,
    build_reference,
    solve_lat_mpc,
    tracking_deviations,
)
from .longitudinal import (
    LonController,
    LonPlan,
    LonState,
    PredecessorPlan,
    stage_cost,
)
from .params import LonWeights
from .scenario import CavKinematics, RoadSide, ScenarioConfig, emit_scenario
from .sequencing import (
    AssignmentMatrix,
    build_weight_matrix,
    fifo_sequence,
    road_densities,
    solve_milp,
)
from .stability import l2_ratio

CSV_COLUMNS = [
    "step", "time_s", "cav", "road", "seq", "z_m", "v_mps", "a_mps2",
    "spacing_dev_m", "speed_diff_mps", "jerk_mps3", "safety", "degraded",
    "x_m", "y_m", "heading_rad", "lat_dev_m", "head_dev_rad", "steer_rad",
]

MILP = "milp"
FIFO = "fifo"


class SimulationError(RuntimeError):
    pass


@dataclass
class VehicleRecord:
    """Time series of one vehicle, one entry per step."""

    cav: int                   # 0-based index into mainline+ramp stacking
    road: str
    seq: int                   # 1-based sequence ID
    z: list = field(default_factory=list)
    v: list = field(default_factory=list)
    a: list = field(default_factory=list)
    spacing_dev: list = field(default_factory=list)
    speed_diff: list = field(default_factory=list)
    jerk: list = field(default_factory=list)
    safety: list = field(default_factory=list)
    degraded: list = field(default_factory=list)
    pose: list = field(default_factory=list)       # (x, y, heading) or None
    lat_dev: list = field(default_factory=list)
    head_dev: list = field(default_factory=list)
    steer: list = field(default_factory=list)


@dataclass
class SimulationLog:
    time_step: float
    seed: int
    config_hash: str
    sequencer: str
    version: str
    vehicles: list[VehicleRecord] = field(default_factory=list)   # sequence order
    assignment: AssignmentMatrix | None = None
    broadcasts: list[dict] = field(default_factory=list)
    degraded_events: int = 0
    min_same_lane_gap: float = math.inf

    @property
    def n_steps(self) -> int:
        return len(self.vehicles[0].z) if self.vehicles else 0

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)


def synthetic_disturbance_profile(time_step: float = 0.1) -> np.ndarray:
    """Shipped leader disturbance: 10 s sinusoid burst, +-1.5 m/s^2, then
    quiet. Deterministic; also stored as data/disturbance_pulse.csv."""
    t = np.arange(0, 10.0 + 1e-9, time_step)
    return 1.5 * np.sin(2.0 * np.pi * t / 5.0)


def load_accel_profile(source, time_step: float, a_min: float, a_max: float
                       ) -> tuple[np.ndarray, int]:
    """Read a CSV acceleration trace (columns time_s, accel_mps2), resample
    to the control grid by linear interpolation, and clip to the
    acceleration limits. Returns (samples, clipped_count)."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if rows and rows[0][0].strip().lower() in ("time_s", "time"):
        rows = rows[1:]
    if not rows:
        raise ValueError("acceleration profile is empty")
    times = np.array([float(r[0]) for r in rows])
    accels = np.array([float(r[1]) for r in rows])
    if np.any(np.diff(times) <= 0):
        raise ValueError("acceleration profile time column must be increasing")
    grid = np.arange(0.0, times[-1] + 1e-9, time_step)
    resampled = np.interp(grid, times, accels)
    clipped = int(np.sum((resampled < a_min) | (resampled > a_max)))
    return np.clip(resampled, a_min, a_max), clipped


def save_accel_profile(samples: np.ndarray, time_step: float, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "accel_mps2"])
        for k, a in enumerate(samples):
            writer.writerow([repr(k * time_step), repr(float(a))])


def _resolve_profile(config: ScenarioConfig) -> np.ndarray:
    if config.leader.policy == "constant_speed":
        return np.zeros(0)
    name = config.leader.profile
    if name.startswith("builtin:"):
        if name == "builtin:pulse":
            profile = synthetic_disturbance_profile(config.time_step)
        else:
            raise SimulationError(f"unknown builtin profile {name!r}")
        return np.clip(profile, config.limits.a_min, config.limits.a_max)
    samples, _ = load_accel_profile(name, config.time_step,
                                    config.limits.a_min, config.limits.a_max)
    return samples


def perturbed_vehicles(config: ScenarioConfig, rng: np.random.Generator
                       ) -> tuple[list[CavKinematics], list[CavKinematics]]:
    """Apply the scenario's uniform jitter; kinematic limits are preserved by
    clipping so a jittered scenario is still a valid one."""
    amounts = config.randomization
    lim = config.limits

    def jitter(vehicles):
        out = []
        for veh in vehicles:
            z = veh.z_position + rng.uniform(-amounts.position_jitter, amounts.position_jitter)
            v = veh.velocity + rng.uniform(-amounts.velocity_jitter, amounts.velocity_jitter)
            a = veh.acceleration + rng.uniform(-amounts.accel_jitter, amounts.accel_jitter)
            out.append(CavKinematics(
                z,
                float(np.clip(v, lim.v_min, lim.v_max)),
                float(np.clip(a, lim.a_min, lim.a_max)),
            ))
        return out

    return jitter(config.mainline), jitter(config.ramp)


def assign_sequence(config: ScenarioConfig, positions: np.ndarray,
                    velocities: np.ndarray, sequencer: str) -> AssignmentMatrix:
    m, r = len(config.mainline), len(config.ramp)
    if sequencer == FIFO:
        return fifo_sequence(positions, m)
    if sequencer != MILP:
        raise SimulationError(f"unknown sequencer {sequencer!r}")
    dens_main, dens_ramp = road_densities(positions, m, r)
    S = build_weight_matrix(m, r, dens_main, dens_ramp)
    d_star = config.spacing_vector()
    return solve_milp(positions, velocities, m, r, d_star,
                      config.seq_weights, S).assignment


@dataclass
class _SimVehicle:
    cav: int
    side: RoadSide
    z: float
    v: float
    a: float
    pose: PoseState | None = None
    prev_steer: float = 0.0

    @property
    def z_position(self):
        return self.z

    @property
    def velocity(self):
        return self.v

    @property
    def acceleration(self):
        return self.a


def run_scenario(config: ScenarioConfig, sequencer: str = MILP,
                 duration: float | None = None, seed: int | None = None,
                 collect_broadcasts: bool = False) -> SimulationLog:
    """Simulate one scenario and return the full log.

    The plant uses the same Euler platoon model the controllers predict
    with, so one-step predictions are exact. Vehicles past the merge point
    stay in the virtual platoon; with geometry on, their lateral layer keeps
    tracking the (now mainline) centerline.
    """
    config.validate()
    if duration is None:
        duration = config.duration
    if seed is None:
        seed = config.seed
    config_hash = hashlib.sha256(emit_scenario(config).encode()).hexdigest()[:16]
    log = SimulationLog(config.time_step, seed, config_hash, sequencer, __version__)
    if config.n_vehicles == 0:
        return log

    rng = np.random.default_rng(seed)
    mainline, ramp = perturbed_vehicles(config, rng)
    stacked = list(mainline) + list(ramp)
    m = len(mainline)
    positions = np.array([veh.z_position for veh in stacked])
    velocities = np.array([veh.velocity for veh in stacked])
    assignment = assign_sequence(config, positions, velocities, sequencer)
    log.assignment = assignment
    order = assignment.sequence()

    geometry = config.geometry
    vehicles: list[_SimVehicle] = []
    for seq_pos, idx in enumerate(order):
        idx = int(idx)
        src = stacked[idx]
        side = RoadSide.MAINLINE if idx < m else RoadSide.RAMP
        veh = _SimVehicle(idx, side, src.z_position, src.velocity, src.acceleration)
        if geometry is not None:
            px, py, heading = geometry.pose_at(side, veh.z)
            if side is RoadSide.RAMP:
                nx, ny = -math.sin(heading), math.cos(heading)
                px += config.initial_lateral_dev * nx
                py += config.initial_lateral_dev * ny
                heading += config.initial_heading_dev
            veh.pose = PoseState(px, py, heading)
        vehicles.append(veh)
        log.vehicles.append(VehicleRecord(
            idx, stacked_side(idx, m), seq_pos + 1))

    n = len(vehicles)
    horizon = config.horizon
    ts = config.time_step
    d_star = np.array([config.desired_spacing_for(j) for j in range(2, n + 1)])
    same_road = [vehicles[i].side is vehicles[i - 1].side for i in range(1, n)]
    controllers = [LonController(config.lon_weights, config.limits, horizon, ts)
                   for _ in range(n - 1)]
    profile = _resolve_profile(config)
    n_steps = int(round(duration / ts))
    leader_future = np.zeros(n_steps + horizon + 2)
    leader_future[:profile.shape[0]] = profile[:n_steps + horizon + 2]
    # the leader's scripted profile overrides any jittered initial acceleration
    vehicles[0].a = float(leader_future[0])

    for step in range(n_steps):
        # longitudinal: leader broadcasts, followers solve in sequence order
        plans: list[LonPlan] = []
        pred_plan = PredecessorPlan.from_profile(
            vehicles[0].z, vehicles[0].v,
            leader_future[step:step + horizon + 1], ts)
        leader_states = np.zeros((horizon + 1, 3))
        leader_states[:, 2] = pred_plan.accel
        plans.append(LonPlan(np.zeros(horizon + 1), leader_states,
                             pred_plan.position, pred_plan.velocity,
                             pred_plan.accel, 0.0))
        for i in range(1, n):
            own, pred = vehicles[i], vehicles[i - 1]
            spacing = pred.z - own.z
            x0 = LonState(spacing - d_star[i - 1], pred.v - own.v, own.a)
            plan = controllers[i - 1].solve(x0, pred_plan, same_road[i - 1],
                                            spacing, d_star[i - 1])
            plans.append(plan)
            pred_plan = plan.broadcast()

        # lateral layer (only with geometry): track own centerline
        steers = [math.nan] * n
        lat_devs = [math.nan] * n
        head_devs = [math.nan] * n
        if geometry is not None:
            for i, veh in enumerate(vehicles):
                ref = build_reference(geometry, veh.side, veh.pose,
                                      plans[i].velocity, ts, config.wheelbase)
                lat_plan = solve_lat_mpc(veh.pose, ref, config.lat_weights,
                                         config.limits, ts, config.wheelbase,
                                         veh.prev_steer)
                if lat_plan.degraded:
                    log.degraded_events += 1
                steers[i] = lat_plan.first_steer
                lat_devs[i], head_devs[i] = tracking_deviations(
                    geometry, veh.side, veh.pose)

        # log current state, then integrate the plant
        for i, (veh, plan) in enumerate(zip(vehicles, plans)):
            rec = log.vehicles[i]
            rec.z.append(veh.z)
            rec.v.append(veh.v)
            rec.a.append(veh.a)
            if i == 0:
                rec.spacing_dev.append(math.nan)
                rec.speed_diff.append(math.nan)
            else:
                rec.spacing_dev.append(float(vehicles[i - 1].z - veh.z - d_star[i - 1]))
                rec.speed_diff.append(vehicles[i - 1].v - veh.v)
            rec.jerk.append(plan.first_control if i else math.nan)
            rec.safety.append(bool(plan.safety_on))
            rec.degraded.append(bool(plan.degraded))
            rec.pose.append(None if veh.pose is None else
                            (veh.pose.x, veh.pose.y, veh.pose.heading))
            rec.lat_dev.append(lat_devs[i])
            rec.head_dev.append(head_devs[i])
            rec.steer.append(steers[i])
            if plan.degraded:
                log.degraded_events += 1
            if collect_broadcasts and i:
                log.broadcasts.append({
                    "cav_id": int(veh.cav), "step": step,
                    "gamma_seq": [float(x) for x in plan.controls],
                    "pos_seq": [float(x) for x in plan.position],
                    "vel_seq": [float(x) for x in plan.velocity],
                    "accel_seq": [float(x) for x in plan.accel],
                    "degraded_flag": bool(plan.degraded),
                })

        log.min_same_lane_gap = min(log.min_same_lane_gap,
                                    _min_same_lane_gap(vehicles))

        for i, (veh, plan) in enumerate(zip(vehicles, plans)):
            if config.plant == "refined":
                jerk = (leader_future[step + 1] - leader_future[step]) / ts \
                    if i == 0 else plan.first_control
                _refined_step(veh, jerk, config.driveline, ts)
            else:
                veh.z += ts * veh.v
                veh.v += ts * veh.a
                if i:
                    veh.a += ts * plan.first_control
            if i == 0:
                veh.a = float(leader_future[step + 1])
            if not (math.isfinite(veh.z) and math.isfinite(veh.v)
                    and math.isfinite(veh.a)):
                raise SimulationError(
                    f"non-finite state for vehicle {veh.cav} at step {step}")
            if veh.pose is not None:
                veh.pose = bicycle_step(veh.pose, LatControl(veh.v, steers[i]),
                                        config.wheelbase, ts)
                veh.prev_steer = steers[i]
    return log


def stacked_side(index: int, n_mainline: int) -> str:
    return "mainline" if index < n_mainline else "ramp"


def _refined_step(veh: "_SimVehicle", jerk: float, driveline, ts: float,
                  substeps: int = 10) -> None:
    """Finer-than-controller plant: RK4 at ts/substeps on the continuous
    chain with the air-drag feedback of the driveline. The torque command is
    fixed from the step-start velocity, so as the true velocity moves the
    realized jerk picks up the drag mismatch; this deliberately breaks the
    exact model-plant match of the Euler plant for robustness studies."""
    drag_gain = 0.5 * driveline.air_density * driveline.drag_coeff * driveline.frontal_area
    drag0 = drag_gain * veh.v**2

    def deriv(state):
        z, v, a = state
        return np.array([v, a, jerk + drag0 - drag_gain * v * v])

    y = np.array([veh.z, veh.v, veh.a])
    h = ts / substeps
    for _ in range(substeps):
        k1 = deriv(y)
        k2 = deriv(y + 0.5 * h * k1)
        k3 = deriv(y + 0.5 * h * k2)
        k4 = deriv(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    veh.z, veh.v, veh.a = float(y[0]), float(y[1]), float(y[2])


def _min_same_lane_gap(vehicles: list[_SimVehicle]) -> float:
    """Smallest bumper gap among pairs that share a physical lane: same road
    upstream of the merge, or anything downstream of it."""
    gap = math.inf
    for i in range(len(vehicles)):
        for j in range(i + 1, len(vehicles)):
            a, b = vehicles[i], vehicles[j]
            shared = (a.side is b.side) or (a.z > 0 and b.z > 0)
            if shared:
                gap = min(gap, abs(a.z - b.z))
    return gap


@dataclass
class MergeMetrics:
    convergence_time: dict[int, float]     # per cav id, inf when never
    accumulated_cost: dict[int, float]
    l2_ratios: dict[int, float]            # follower cav id -> ratio vs its predecessor


def compute_metrics(log: SimulationLog, weights: LonWeights,
                    safe_spacing: float) -> MergeMetrics:
    """Per-follower convergence time (first instant after which the spacing
    deviation stays inside the safe band), the stage cost accumulated before
    that instant (safety term included at steps where it was active), and
    spacing-deviation energy ratios per consecutive follower pair."""
    from .longitudinal import safety_coefficient

    ts = log.time_step
    conv: dict[int, float] = {}
    cost: dict[int, float] = {}
    ratios: dict[int, float] = {}
    for idx, rec in enumerate(log.vehicles):
        if idx == 0:
            continue
        dev = np.asarray(rec.spacing_dev)
        inside = np.abs(dev) <= safe_spacing
        outside = np.nonzero(~inside)[0]
        first = 0 if outside.size == 0 else int(outside[-1]) + 1
        conv[rec.cav] = math.inf if first >= dev.shape[0] else first * ts
        total = 0.0
        for k in range(min(first, dev.shape[0])):
            x = np.array([dev[k], rec.speed_diff[k], rec.a[k]])
            active = bool(rec.safety[k]) if k < len(rec.safety) else False
            coeff = safety_coefficient(dev[k], safe_spacing, weights.safety) \
                if active else 0.0
            total += stage_cost(x, rec.jerk[k], weights, coeff)
        cost[rec.cav] = total
        if idx >= 2:
            prev = np.asarray(log.vehicles[idx - 1].spacing_dev)
            if np.any(prev != 0.0):
                ratios[rec.cav] = l2_ratio(dev, prev, ts)
    return MergeMetrics(conv, cost, ratios)


def ensemble_run(config: ScenarioConfig, seeds, sequencer: str = MILP,
                 duration: float | None = None) -> list[SimulationLog]:
    return [run_scenario(config, sequencer, duration, seed) for seed in seeds]


# ---------------------------------------------------------------------------
# persistence


def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        value = float(value)  # numpy scalars repr differently
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(log: SimulationLog, fh) -> None:
    """Tidy long-form CSV, one row per vehicle-step; schema frozen by a
    golden-file test."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for step in range(log.n_steps):
        for rec in log.vehicles:
            pose = rec.pose[step]
            writer.writerow([
                step,
                _csv_value(step * log.time_step),
                rec.cav,
                rec.road,
                rec.seq,
                _csv_value(rec.z[step]),
                _csv_value(rec.v[step]),
                _csv_value(rec.a[step]),
                _csv_value(rec.spacing_dev[step]),
                _csv_value(rec.speed_diff[step]),
                _csv_value(rec.jerk[step]),
                _csv_value(rec.safety[step]),
                _csv_value(rec.degraded[step]),
                _csv_value(pose[0] if pose else None),
                _csv_value(pose[1] if pose else None),
                _csv_value(pose[2] if pose else None),
                _csv_value(rec.lat_dev[step]),
                _csv_value(rec.head_dev[step]),
                _csv_value(rec.steer[step]),
            ])


def csv_text(log: SimulationLog) -> str:
    buf = io.StringIO()
    write_csv(log, buf)
    return buf.getvalue()


def write_jsonl(log: SimulationLog, fh) -> None:
    """Metadata line, then one line per broadcast record (when collected)."""
    meta = {
        "config_hash": log.config_hash,
        "seed": log.seed,
        "sequencer": log.sequencer,
        "time_step": log.time_step,
        "version": log.version,
        "n_vehicles": log.n_vehicles,
        "n_steps": log.n_steps,
        "degraded_events": log.degraded_events,
        "sequence": [int(x) for x in log.assignment.sequence()]
        if log.assignment is not None else [],
    }
    fh.write(json.dumps(meta, sort_keys=True) + "\n")
    for record in log.broadcasts:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
