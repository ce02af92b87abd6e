"""Scenario types, the virtual Z-axis mapping, and config ingestion.

Mainline and on-ramp vehicles live on separate physical roads but share one
longitudinal coordinate: signed arc length to the merge point (zero at the
merge point, negative upstream). All longitudinal control happens on that
axis; 2-D geometry only matters to the lateral controller.

Scenario files are TOML (sections [limits], [weights], [geometry],
[vehicles.mainline], [vehicles.ramp], plus [sim], [vehicle], [leader],
[randomization]). Field names are frozen by a golden-file test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .params import (
    DrivelineParams,
    LatWeights,
    LonWeights,
    SequencerWeights,
    VehicleLimits,
)


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario document; message carries the field path."""


class RoadSide(Enum):
    MAINLINE = "mainline"
    RAMP = "ramp"


@dataclass(frozen=True)
class CavId:
    index: int  # 1-based; 1 is the platoon leader after sequencing

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("CavId index is 1-based")


@dataclass
class CavKinematics:
    z_position: float   # m on the virtual axis, negative upstream of the merge
    velocity: float     # m/s
    acceleration: float = 0.0  # m/s^2


def map_to_virtual_axis(road_side: RoadSide, arc_length_from_merge: float) -> float:
    """Signed virtual-axis position of a point `arc_length_from_merge` meters
    upstream of the merge point, measured along its own road's centerline.

    Both roads map the same way: distance-to-merge d >= 0 becomes -d.
    Points past the merge use positive mainline arc length directly (see
    RoadGeometry.signed_position).
    """
    if not isinstance(road_side, RoadSide):
        raise TypeError("road_side must be a RoadSide")
    if arc_length_from_merge < 0:
        raise ValueError("arc length upstream of the merge must be nonnegative")
    return -float(arc_length_from_merge)


@dataclass
class RoadGeometry:
    """Merge-area centerlines: straight mainline along +X through the origin,
    and a ramp made of a straight approach plus a circular arc that ends at
    the origin tangent to the mainline.

    The ramp joins from below (Y < 0) turning right; curvature changes are
    instantaneous at the two junctions (C0 joins).
    """

    ramp_straight: float = 97.5   # m
    arc_radius: float = 47.75     # m
    arc_sweep: float = 12.5 / 47.75  # rad

    def __post_init__(self) -> None:
        if self.arc_radius <= 0:
            raise ValueError("arc radius must be positive")
        if self.arc_sweep < 0 or self.ramp_straight < 0:
            raise ValueError("ramp segment lengths must be nonnegative")

    @property
    def arc_length(self) -> float:
        return self.arc_radius * self.arc_sweep

    @property
    def ramp_length(self) -> float:
        return self.ramp_straight + self.arc_length

    def _arc_join(self) -> tuple[float, float]:
        r, w = self.arc_radius, self.arc_sweep
        return (-r * math.sin(w), -r * (1.0 - math.cos(w)))

    def pose_at(self, side: RoadSide, s: float) -> tuple[float, float, float]:
        """(X, Y, heading) of the centerline point with signed arc length s."""
        if side is RoadSide.MAINLINE or s >= 0.0:
            return (s, 0.0, 0.0)
        r = self.arc_radius
        if s >= -self.arc_length:
            return (r * math.sin(s / r), -r * (1.0 - math.cos(s / r)), -s / r)
        xj, yj = self._arc_join()
        w = self.arc_sweep
        back = s + self.arc_length  # negative
        return (xj + back * math.cos(w), yj + back * math.sin(w), w)

    def curvature_at(self, side: RoadSide, s: float) -> float:
        if side is RoadSide.MAINLINE or s >= 0.0 or s < -self.arc_length:
            return 0.0
        return -1.0 / self.arc_radius  # right-hand turn

    def signed_position(self, side: RoadSide, x: float, y: float) -> tuple[float, float]:
        """Project (x, y) onto the side's centerline.

        Returns (s, lateral): signed arc length of the foot point and signed
        lateral offset, positive to the left of the travel direction.
        """
        if side is RoadSide.MAINLINE:
            return (x, y)
        candidates = []
        # mainline continuation past the merge
        if x >= 0.0:
            candidates.append((math.hypot(0.0, y), x, y, 0.0))
        # circular arc: angle around the center (0, -R), measured from +Y
        r, w = self.arc_radius, self.arc_sweep
        phi = math.atan2(x, y + r)
        phi = min(0.0, max(-w, phi))
        s_arc = r * phi
        px, py, heading = self.pose_at(side, s_arc)
        lat = math.cos(heading) * (y - py) - math.sin(heading) * (x - px)
        candidates.append((math.hypot(x - px, y - py), s_arc, lat, heading))
        # straight approach
        xj, yj = self._arc_join()
        t = (math.cos(w), math.sin(w))
        along = (x - xj) * t[0] + (y - yj) * t[1]
        along = min(0.0, max(-self.ramp_straight, along))
        px, py = xj + along * t[0], yj + along * t[1]
        lat = t[0] * (y - py) - t[1] * (x - px)
        candidates.append((math.hypot(x - px, y - py), -self.arc_length + along, lat, w))
        best = min(candidates, key=lambda c: c[0])
        return (best[1], best[2])


@dataclass
class RandomizationSpec:
    position_jitter: float = 0.0   # m, uniform +-
    velocity_jitter: float = 0.0   # m/s
    accel_jitter: float = 0.0      # m/s^2


@dataclass
class LeaderSpec:
    policy: str = "constant_speed"   # or "accel_profile"
    profile: str = ""                # CSV path or "builtin:<name>"

    def validate(self) -> None:
        if self.policy not in ("constant_speed", "accel_profile"):
            raise ScenarioError(f"leader.policy: unknown policy {self.policy!r}")
        if self.policy == "accel_profile" and not self.profile:
            raise ScenarioError("leader.profile: required when policy is accel_profile")


@dataclass
class ScenarioConfig:
    mainline: list[CavKinematics] = field(default_factory=list)
    ramp: list[CavKinematics] = field(default_factory=list)
    time_step: float = 0.1
    horizon: int = 12
    desired_spacing: float = 20.0
    plant: str = "euler"    # "refined" integrates at time_step/10 with RK4
    spacing_overrides: dict[int, float] = field(default_factory=dict)
    limits: VehicleLimits = field(default_factory=VehicleLimits)
    driveline: DrivelineParams = field(default_factory=DrivelineParams)
    wheelbase: float = 2.7
    lon_weights: LonWeights = field(default_factory=LonWeights)
    seq_weights: SequencerWeights = field(default_factory=SequencerWeights)
    lat_weights: LatWeights = field(default_factory=LatWeights)
    leader: LeaderSpec = field(default_factory=LeaderSpec)
    randomization: RandomizationSpec = field(default_factory=RandomizationSpec)
    geometry: RoadGeometry | None = None
    initial_lateral_dev: float = 0.0    # m, applied to ramp vehicles' start pose
    initial_heading_dev: float = 0.0    # rad
    seed: int = 0
    duration: float = 60.0
    name: str = "scenario"

    @property
    def n_vehicles(self) -> int:
        return len(self.mainline) + len(self.ramp)

    def desired_spacing_for(self, seq_position: int) -> float:
        """Desired gap of the follower holding 1-based sequence ID `seq_position`."""
        return self.spacing_overrides.get(seq_position, self.desired_spacing)

    def spacing_vector(self) -> np.ndarray:
        """d* for sequence IDs 2..n (follower gaps)."""
        return np.array([self.desired_spacing_for(j) for j in range(2, self.n_vehicles + 1)])

    def validate(self) -> None:
        if self.time_step <= 0:
            raise ScenarioError("sim.time_step: must be positive")
        if self.horizon < 3:
            raise ScenarioError("sim.horizon: must be >= 3")
        if self.desired_spacing <= 0:
            raise ScenarioError("sim.desired_spacing: must be positive")
        for j, d in self.spacing_overrides.items():
            if d <= 0:
                raise ScenarioError(f"sim.desired_spacing_overrides.{j}: must be positive")
        if self.duration < 0:
            raise ScenarioError("duration: must be nonnegative")
        if self.plant not in ("euler", "refined"):
            raise ScenarioError(f"sim.plant: unknown integrator {self.plant!r}")
        if self.wheelbase <= 0:
            raise ScenarioError("vehicle.wheelbase: must be positive")
        self.limits.validate()
        self.driveline.validate()
        self.lon_weights.validate()
        self.seq_weights.validate()
        self.lat_weights.validate()
        self.leader.validate()
        for side, vehicles in (("mainline", self.mainline), ("ramp", self.ramp)):
            last = math.inf
            for k, veh in enumerate(vehicles):
                path = f"vehicles.{side}[{k}]"
                if veh.z_position >= last:
                    raise ScenarioError(
                        f"{path}.position: vehicles must be sorted nearest-first "
                        "(strictly decreasing virtual position)")
                last = veh.z_position
                if not self.limits.v_min <= veh.velocity <= self.limits.v_max:
                    raise ScenarioError(f"{path}.velocity: {veh.velocity} outside "
                                        f"[{self.limits.v_min}, {self.limits.v_max}]")
                if not self.limits.a_min <= veh.acceleration <= self.limits.a_max:
                    raise ScenarioError(f"{path}.acceleration: {veh.acceleration} outside "
                                        f"[{self.limits.a_min}, {self.limits.a_max}]")


def build_info_vectors(config: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Stacked position and velocity vectors: mainline nearest-first, then ramp."""
    if config.n_vehicles == 0:
        raise ScenarioError("vehicles: scenario has nothing to sequence")
    vehicles = list(config.mainline) + list(config.ramp)
    p = np.array([v.z_position for v in vehicles], dtype=float)
    v = np.array([v.velocity for v in vehicles], dtype=float)
    return p, v


# ---------------------------------------------------------------------------
# document parsing


def _take(table: dict, path: str, key: str, kind, default):
    if key not in table:
        if default is _REQUIRED:
            raise ScenarioError(f"{path}.{key}: required field missing")
        return default
    value = table.pop(key)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ScenarioError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


class _Required:
    pass


_REQUIRED = _Required()


def _reject_unknown(table: dict, path: str) -> None:
    if table:
        raise ScenarioError(f"{path}.{next(iter(table))}: unknown field")


def _float_list(table: dict, path: str, key: str, default=None):
    if key not in table:
        return default
    raw = table.pop(key)
    if not isinstance(raw, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in raw
    ):
        raise ScenarioError(f"{path}.{key}: expected a list of numbers")
    return [float(x) for x in raw]


def _parse_vehicles(table: dict, path: str) -> list[CavKinematics]:
    positions = _float_list(table, path, "positions")
    if positions is not None:
        velocities = _float_list(table, path, "velocities")
        if velocities is None or len(velocities) != len(positions):
            raise ScenarioError(f"{path}.velocities: must match positions in length")
        accels = _float_list(table, path, "accelerations",
                             default=[0.0] * len(positions))
        if len(accels) != len(positions):
            raise ScenarioError(f"{path}.accelerations: must match positions in length")
        _reject_unknown(table, path)
        return [CavKinematics(p, v, a) for p, v, a in zip(positions, velocities, accels)]
    count = _take(table, path, "count", int, 0)
    if count == 0:
        _reject_unknown(table, path)
        return []
    start = _take(table, path, "start", float, _REQUIRED)
    spacing = _take(table, path, "spacing", float, _REQUIRED)
    if spacing <= 0:
        raise ScenarioError(f"{path}.spacing: must be positive")
    velocity = _take(table, path, "velocity", float, 15.0)
    velocity_step = _take(table, path, "velocity_step", float, 0.0)
    accel = _take(table, path, "acceleration", float, 0.0)
    _reject_unknown(table, path)
    return [
        CavKinematics(start - k * spacing, velocity + k * velocity_step, accel)
        for k in range(count)
    ]


def _apply_fields(obj, table: dict, path: str, float_fields: tuple[str, ...],
                  array_fields: tuple[str, ...] = ()) -> None:
    for name in float_fields:
        if name in table:
            setattr(obj, name, _take(table, path, name, float, _REQUIRED))
    for name in array_fields:
        values = _float_list(table, path, name)
        if values is not None:
            setattr(obj, name, np.asarray(values, dtype=float))
    _reject_unknown(table, path)


def load_scenario(text: str) -> ScenarioConfig:
    """Parse a scenario document; unset fields keep their stock values."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"document: not valid TOML ({exc})") from exc

    cfg = ScenarioConfig()
    cfg.name = _take(doc, "", "name", str, cfg.name)
    cfg.seed = _take(doc, "", "seed", int, cfg.seed)
    cfg.duration = _take(doc, "", "duration", float, cfg.duration)

    sim = doc.pop("sim", {})
    cfg.time_step = _take(sim, "sim", "time_step", float, cfg.time_step)
    cfg.horizon = _take(sim, "sim", "horizon", int, cfg.horizon)
    cfg.desired_spacing = _take(sim, "sim", "desired_spacing", float, cfg.desired_spacing)
    cfg.plant = _take(sim, "sim", "plant", str, cfg.plant)
    overrides = sim.pop("desired_spacing_overrides", {})
    if not isinstance(overrides, dict):
        raise ScenarioError("sim.desired_spacing_overrides: expected a table")
    for key, value in overrides.items():
        try:
            j = int(key)
        except ValueError as exc:
            raise ScenarioError(
                f"sim.desired_spacing_overrides.{key}: key must be a sequence ID") from exc
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ScenarioError(f"sim.desired_spacing_overrides.{key}: expected a number")
        cfg.spacing_overrides[j] = float(value)
    _reject_unknown(sim, "sim")

    _apply_fields(cfg.limits, doc.pop("limits", {}), "limits", (
        "v_min", "v_max", "a_min", "a_max", "jerk_min", "jerk_max",
        "spacing_dev_min", "spacing_dev_max", "safe_spacing",
        "steer_min", "steer_max", "steer_rate_max"))

    vehicle = doc.pop("vehicle", {})
    cfg.wheelbase = _take(vehicle, "vehicle", "wheelbase", float, cfg.wheelbase)
    _apply_fields(cfg.driveline, vehicle, "vehicle", (
        "efficiency", "mass", "tire_radius", "time_lag", "rolling_resistance",
        "gravity", "air_density", "drag_coeff", "frontal_area"))

    weights = doc.pop("weights", {})
    lon = weights.pop("longitudinal", {})
    _apply_fields(cfg.lon_weights, lon, "weights.longitudinal",
                  ("control", "safety", "terminal"), ("state",))
    seq = weights.pop("sequencer", {})
    _apply_fields(cfg.seq_weights, seq, "weights.sequencer", ("spacing", "trend"))
    lat = weights.pop("lateral", {})
    _apply_fields(cfg.lat_weights, lat, "weights.lateral", (), ("state", "control"))
    _reject_unknown(weights, "weights")

    leader = doc.pop("leader", {})
    cfg.leader.policy = _take(leader, "leader", "policy", str, cfg.leader.policy)
    cfg.leader.profile = _take(leader, "leader", "profile", str, cfg.leader.profile)
    _reject_unknown(leader, "leader")

    rand = doc.pop("randomization", {})
    cfg.randomization.position_jitter = _take(
        rand, "randomization", "position_jitter", float, 0.0)
    cfg.randomization.velocity_jitter = _take(
        rand, "randomization", "velocity_jitter", float, 0.0)
    cfg.randomization.accel_jitter = _take(
        rand, "randomization", "accel_jitter", float, 0.0)
    _reject_unknown(rand, "randomization")

    geometry = doc.pop("geometry", None)
    if geometry is not None:
        ramp_straight = _take(geometry, "geometry", "ramp_straight", float, 97.5)
        arc_radius = _take(geometry, "geometry", "arc_radius", float, 47.75)
        arc_sweep = _take(geometry, "geometry", "arc_sweep", float, 12.5 / 47.75)
        cfg.initial_lateral_dev = _take(
            geometry, "geometry", "initial_lateral_dev", float, 0.0)
        cfg.initial_heading_dev = _take(
            geometry, "geometry", "initial_heading_dev", float, 0.0)
        _reject_unknown(geometry, "geometry")
        try:
            cfg.geometry = RoadGeometry(ramp_straight, arc_radius, arc_sweep)
        except ValueError as exc:
            raise ScenarioError(f"geometry: {exc}") from exc

    vehicles = doc.pop("vehicles", {})
    cfg.mainline = _parse_vehicles(vehicles.pop("mainline", {}), "vehicles.mainline")
    cfg.ramp = _parse_vehicles(vehicles.pop("ramp", {}), "vehicles.ramp")
    _reject_unknown(vehicles, "vehicles")
    _reject_unknown(doc, "")

    cfg.validate()
    return cfg


def load_scenario_file(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, np.ndarray):
        return "[" + ", ".join(repr(float(x)) for x in value) + "]"
    if isinstance(value, str):
        return '"' + value + '"'
    return str(value)


def emit_scenario(config: ScenarioConfig) -> str:
    """Serialize a config to the document format load_scenario reads.

    load_scenario(emit_scenario(cfg)) reproduces cfg exactly.
    """
    lines = [
        f"name = {_fmt(config.name)}",
        f"seed = {config.seed}",
        f"duration = {_fmt(config.duration)}",
        "",
        "[sim]",
        f"time_step = {_fmt(config.time_step)}",
        f"horizon = {config.horizon}",
        f"desired_spacing = {_fmt(config.desired_spacing)}",
        f"plant = {_fmt(config.plant)}",
    ]
    if config.spacing_overrides:
        inner = ", ".join(f'"{j}" = {_fmt(d)}' for j, d in sorted(config.spacing_overrides.items()))
        lines.append("desired_spacing_overrides = {" + inner + "}")
    lines += ["", "[limits]"]
    lines += [f"{k} = {_fmt(getattr(config.limits, k))}" for k in (
        "v_min", "v_max", "a_min", "a_max", "jerk_min", "jerk_max",
        "spacing_dev_min", "spacing_dev_max", "safe_spacing",
        "steer_min", "steer_max", "steer_rate_max")]
    lines += ["", "[vehicle]", f"wheelbase = {_fmt(config.wheelbase)}"]
    lines += [f"{k} = {_fmt(getattr(config.driveline, k))}" for k in (
        "efficiency", "mass", "tire_radius", "time_lag", "rolling_resistance",
        "gravity", "air_density", "drag_coeff", "frontal_area")]
    lines += [
        "",
        "[weights.longitudinal]",
        f"state = {_fmt(config.lon_weights.state)}",
        f"control = {_fmt(config.lon_weights.control)}",
        f"safety = {_fmt(config.lon_weights.safety)}",
        f"terminal = {_fmt(config.lon_weights.terminal)}",
        "",
        "[weights.sequencer]",
        f"spacing = {_fmt(config.seq_weights.spacing)}",
        f"trend = {_fmt(config.seq_weights.trend)}",
        "",
        "[weights.lateral]",
        f"state = {_fmt(config.lat_weights.state)}",
        f"control = {_fmt(config.lat_weights.control)}",
        "",
        "[leader]",
        f"policy = {_fmt(config.leader.policy)}",
        f"profile = {_fmt(config.leader.profile)}",
        "",
        "[randomization]",
        f"position_jitter = {_fmt(config.randomization.position_jitter)}",
        f"velocity_jitter = {_fmt(config.randomization.velocity_jitter)}",
        f"accel_jitter = {_fmt(config.randomization.accel_jitter)}",
    ]
    if config.geometry is not None:
        lines += [
            "",
            "[geometry]",
            f"ramp_straight = {_fmt(config.geometry.ramp_straight)}",
            f"arc_radius = {_fmt(config.geometry.arc_radius)}",
            f"arc_sweep = {_fmt(config.geometry.arc_sweep)}",
            f"initial_lateral_dev = {_fmt(config.initial_lateral_dev)}",
            f"initial_heading_dev = {_fmt(config.initial_heading_dev)}",
        ]
    for side, vehicles in (("mainline", config.mainline), ("ramp", config.ramp)):
        lines += ["", f"[vehicles.{side}]"]
        if vehicles:
            lines.append("positions = [" + ", ".join(repr(v.z_position) for v in vehicles) + "]")
            lines.append("velocities = [" + ", ".join(repr(v.velocity) for v in vehicles) + "]")
            lines.append("accelerations = ["
                         + ", ".join(repr(v.acceleration) for v in vehicles) + "]")
    return "\n".join(lines) + "\n"
