"""Deterministic 2D traffic world: scenario staging, scripted HDV behaviors,
world stepping, ground-truth collision detection, and episode trace CSV I/O.

The staged situation is a two-lane overtake gone wrong: an errant HDV closes
on a lead vehicle in the adjacent lane, cuts into the ego's lane without
seeing it, then settles there. A rear HDV tailgates the ego so that braking
alone cannot save it. Under a constant keep command the ego always crashes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .vehicle import (
    ControlCommand,
    KEEP_COMMAND,
    Vec2,
    VehicleState,
    clamp,
    step_vehicle,
)


class Role(str, Enum):
    EGO = "ego"
    ERRANT = "errant_hdv"
    LEAD = "lead_hdv"
    REAR = "rear_hdv"


ROLE_ORDER = (Role.EGO, Role.ERRANT, Role.LEAD, Role.REAR)

TRACE_HEADER = [
    "tick", "role", "x", "y", "vx", "vy", "ax", "ay",
    "heading", "steering", "throttle", "brake",
]

# Lane-hold feedback gains for the errant vehicle's re-straighten phase.
_KEEP_HEADING_GAIN = 4.0   # per rad of heading error
_KEEP_LATERAL_GAIN = 0.5   # per m of lateral error
_THROTTLE_RAMP = 0.5       # m/s of speed headroom over which throttle ramps off


@dataclass(frozen=True)
class StaticObstacle:
    position: Vec2
    radius: float = 0.0

    def __post_init__(self):
        if self.radius < 0.0:
            raise ValueError(f"obstacle radius must be >= 0, got {self.radius}")


@dataclass(frozen=True)
class ManeuverProfile:
    """Parameterization of the errant HDV's scripted overtake-and-cut-in.

    The errant throttles toward the lead vehicle until the longitudinal gap
    drops below trigger_gap, then (after a per-episode jitter delay) swings a
    half-sine steering pulse toward the ego's lane and finally lane-keeps
    there at its boosted pursuit speed.
    """

    trigger_gap: float = 15.5        # m, longitudinal gap to lead that arms the cut
    lateral_duration: float = 1.4    # s, length of the steering pulse
    peak_steering: float = 0.07      # pulse peak, in [-1, 1] wheel units
    target_lane_offset: float = 3.5  # m, lateral distance swept by the cut
    overtake_throttle: float = 0.5   # throttle while closing on the lead
    speed_boost: float = 5.0         # m/s over the scenario mean, the pursuit cap
    trigger_jitter: float = 0.2      # s; per-episode delay drawn from U(0, 2*jitter)

    def __post_init__(self):
        if self.trigger_gap <= 0.0 or self.lateral_duration <= 0.0:
            raise ValueError("trigger_gap and lateral_duration must be > 0")
        if not (0.0 <= self.trigger_jitter):
            raise ValueError("trigger_jitter must be >= 0")


def _default_radii() -> dict:
    return {role.value: 1.2 for role in ROLE_ORDER}


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to stage and run one crash-imminent episode."""

    scenario_kind: str = "overtake_from_left"
    mean_initial_speed: float = 15.0   # m/s
    speed_noise_sigma: float = 1.0     # m/s
    lane_width: float = 3.5            # m
    vehicle_radii: dict = field(default_factory=_default_radii)
    hdv_maneuver: ManeuverProfile = field(default_factory=ManeuverProfile)
    static_obstacle_spacing: float = 12.0  # m along each roadside row
    roadside_clearance: float = 12.0       # m clear zone from road edge to the obstacle rows
    max_steps: int = 200
    dt: float = 0.05                   # s
    seed: int = 0
    # longitudinal staging, relative to the ego (design defaults; tunable)
    rear_gap: float = 11.0             # m, ego center to rear HDV center
    errant_offset: float = -5.0        # m, errant relative to ego
    lead_gap: float = 15.0             # m, errant center to lead center

    def __post_init__(self):
        if self.scenario_kind not in ("overtake_from_left", "overtake_from_right"):
            raise ValueError(f"unknown scenario_kind {self.scenario_kind!r}")
        if self.dt <= 0.0 or self.max_steps <= 0:
            raise ValueError("dt and max_steps must be > 0")
        if self.speed_noise_sigma < 0.0 or self.mean_initial_speed < 0.0:
            raise ValueError("speeds and noise sigma must be >= 0")
        missing = [r.value for r in ROLE_ORDER if r.value not in self.vehicle_radii]
        if missing:
            raise ValueError(f"vehicle_radii missing roles: {missing}")
        if any(r <= 0.0 for r in self.vehicle_radii.values()):
            raise ValueError("vehicle radii must be > 0")
        if self.lane_width <= 2.0 * max(self.vehicle_radii.values()):
            raise ValueError("lane_width must exceed twice the largest vehicle radius")
        if self.static_obstacle_spacing <= 0.0 or self.roadside_clearance < 0.0:
            raise ValueError("obstacle spacing must be > 0 and clearance >= 0")

    @property
    def cut_sign(self) -> float:
        """+1 cuts rightward (+y), -1 leftward."""
        return 1.0 if self.scenario_kind == "overtake_from_left" else -1.0

    @property
    def ego_lane_center(self) -> float:
        return self.cut_sign * self.lane_width / 2.0

    @property
    def errant_lane_center(self) -> float:
        return -self.cut_sign * self.lane_width / 2.0


@dataclass(frozen=True)
class WorldState:
    """One tick of the joint environment. Vehicle order is stable for an episode."""

    tick: int
    vehicles: tuple  # of (Role, VehicleState), exactly one ego, ego first
    obstacles: tuple  # of StaticObstacle
    cut_in_start_tick: Optional[int] = None
    trigger_delay_ticks: int = 0

    def __post_init__(self):
        if self.tick < 0:
            raise ValueError("tick must be >= 0")
        egos = [r for r, _ in self.vehicles if r is Role.EGO]
        if len(egos) != 1:
            raise ValueError(f"world must contain exactly one ego, got {len(egos)}")

    def vehicle(self, role: Role) -> VehicleState:
        for r, v in self.vehicles:
            if r is role:
                return v
        raise KeyError(role)

    @property
    def ego(self) -> VehicleState:
        return self.vehicle(Role.EGO)


def _resolved_cut_start(world: WorldState, config: ScenarioConfig) -> Optional[int]:
    """Tick at which the errant's steering pulse begins, once armed."""
    if world.cut_in_start_tick is not None:
        return world.cut_in_start_tick
    try:
        errant = world.vehicle(Role.ERRANT)
        lead = world.vehicle(Role.LEAD)
    except KeyError:
        return None
    gap = lead.position.x - errant.position.x
    if gap < config.hdv_maneuver.trigger_gap:
        return world.tick + world.trigger_delay_ticks
    return None


def _speed_hold_throttle(speed: float, target: float, level: float) -> float:
    """Throttle that ramps off as speed approaches target (never brakes)."""
    return level * clamp((target - speed) / _THROTTLE_RAMP, 0.0, 1.0)


def _lane_keep_steering(state: VehicleState, lane_center_y: float) -> float:
    """Wheel position that damps lateral and heading error toward a lane center."""
    speed = max(state.speed, 1.0)
    y_err = state.position.y - lane_center_y
    wheel = -(2.7 / speed) * (
        _KEEP_HEADING_GAIN * state.heading + _KEEP_LATERAL_GAIN * y_err
    )
    return clamp(wheel / 0.5236, -0.5, 0.5)


def scripted_hdv_command(
    config: ScenarioConfig, role: Role, world: WorldState
) -> ControlCommand:
    """Behavior script for one non-ego vehicle at the world's current tick."""
    if role is Role.EGO:
        raise ValueError("the ego is not scripted")
    if role in (Role.LEAD, Role.REAR):
        # lane- and speed-holders; the plant is drag-free, so zero pedals hold speed
        return KEEP_COMMAND

    profile = config.hdv_maneuver
    errant = world.vehicle(Role.ERRANT)
    start = _resolved_cut_start(world, config)
    boost_target = config.mean_initial_speed + profile.speed_boost

    if start is None or world.tick < start:
        # approach: close on the lead, stay in lane
        return ControlCommand(
            throttle=_speed_hold_throttle(errant.speed, boost_target, profile.overtake_throttle),
            steering=0.0,
        )

    phase = (world.tick - start) * config.dt
    if phase <= profile.lateral_duration:
        # cut: half-sine steering pulse toward the ego's lane
        steering = config.cut_sign * profile.peak_steering * math.sin(
            math.pi * phase / profile.lateral_duration
        )
        return ControlCommand(
            throttle=_speed_hold_throttle(errant.speed, boost_target, profile.overtake_throttle),
            steering=steering,
        )

    # settle: re-straighten one lane offset over from where the cut began,
    # still at overtaking pace
    target_y = config.errant_lane_center + config.cut_sign * profile.target_lane_offset
    steering = _lane_keep_steering(errant, target_y)
    return ControlCommand(
        throttle=_speed_hold_throttle(errant.speed, boost_target, profile.overtake_throttle),
        steering=steering,
    )


def step_world(
    world: WorldState, config: ScenarioConfig, ego_cmd: ControlCommand
) -> WorldState:
    """Advance every vehicle one tick; obstacles are fixed."""
    start = _resolved_cut_start(world, config)
    advanced = []
    for role, state in world.vehicles:
        cmd = ego_cmd if role is Role.EGO else scripted_hdv_command(config, role, world)
        advanced.append((role, step_vehicle(state, cmd, config.dt)))
    return replace(
        world,
        tick=world.tick + 1,
        vehicles=tuple(advanced),
        cut_in_start_tick=start,
    )


def detect_collision(world: WorldState):
    """First overlapping pair in stable order, or None.

    Checks every vehicle pair and ego-obstacle pairs; overlap means center
    distance strictly below the radius sum (touching circles do not count).
    Entities are named by role value, obstacles as "obstacle_<index>".
    """
    vehicles = world.vehicles
    for i in range(len(vehicles)):
        role_i, vi = vehicles[i]
        for j in range(i + 1, len(vehicles)):
            role_j, vj = vehicles[j]
            if (vi.position - vj.position).norm() < vi.radius + vj.radius:
                return (role_i.value, role_j.value)
    ego = world.ego
    for k, obs in enumerate(world.obstacles):
        if (ego.position - obs.position).norm() < ego.radius + obs.radius:
            return (Role.EGO.value, f"obstacle_{k}")
    return None


def roadside_obstacles(config: ScenarioConfig) -> tuple:
    """Deterministic obstacle rows along both roadsides."""
    span = config.max_steps * config.dt
    x_end = config.mean_initial_speed * span + 0.5 * 4.0 * span * span + 40.0
    edge = config.lane_width + config.roadside_clearance
    xs = np.arange(-40.0, x_end, config.static_obstacle_spacing)
    rows = []
    for y in (-edge, edge):
        rows.extend(StaticObstacle(Vec2(float(x), y)) for x in xs)
    return tuple(rows)


def init_scenario(config: ScenarioConfig, rng: np.random.Generator) -> WorldState:
    """Stage the four-vehicle cut-in arrangement with noisy initial speeds.

    Speeds are drawn in role order (ego, errant, lead, rear) as
    mean + N(0, sigma^2), floored at zero; the cut-in trigger jitter is
    drawn last. Obstacle placement is a pure function of the config.
    """
    placements = {
        Role.EGO: (0.0, config.ego_lane_center),
        Role.ERRANT: (config.errant_offset, config.errant_lane_center),
        Role.LEAD: (config.errant_offset + config.lead_gap, config.errant_lane_center),
        Role.REAR: (-config.rear_gap, config.ego_lane_center),
    }
    vehicles = []
    for role in ROLE_ORDER:
        x, y = placements[role]
        speed = config.mean_initial_speed
        if config.speed_noise_sigma > 0.0:
            speed += config.speed_noise_sigma * rng.standard_normal()
        speed = max(0.0, speed)
        vehicles.append(
            (
                role,
                VehicleState(
                    position=Vec2(x, y),
                    velocity=Vec2(speed, 0.0),
                    radius=config.vehicle_radii[role.value],
                ),
            )
        )
    jitter_ticks = 0
    if config.hdv_maneuver.trigger_jitter > 0.0:
        max_ticks = int(round(2.0 * config.hdv_maneuver.trigger_jitter / config.dt))
        jitter_ticks = int(rng.integers(0, max_ticks + 1))
    return WorldState(
        tick=0,
        vehicles=tuple(vehicles),
        obstacles=roadside_obstacles(config),
        trigger_delay_ticks=jitter_ticks,
    )


# --- trace I/O ----------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trace(path, config: ScenarioConfig, trace, ego_commands) -> None:
    """Episode trace CSV: one row per vehicle per tick, tick-major, role-ordered.

    Control columns hold the command executed at that tick (ego commands as
    planned, HDV commands recomputed from the behavior script); the final
    snapshot, where nothing was executed, gets zero controls.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for t, world in enumerate(trace):
            for role, state in world.vehicles:
                if t >= len(ego_commands):
                    cmd = KEEP_COMMAND
                elif role is Role.EGO:
                    cmd = ego_commands[t]
                else:
                    cmd = scripted_hdv_command(config, role, world)
                writer.writerow(
                    [
                        world.tick,
                        role.value,
                        _fmt(state.position.x),
                        _fmt(state.position.y),
                        _fmt(state.velocity.x),
                        _fmt(state.velocity.y),
                        _fmt(state.acceleration.x),
                        _fmt(state.acceleration.y),
                        _fmt(state.heading),
                        _fmt(cmd.steering),
                        _fmt(cmd.throttle),
                        _fmt(cmd.brake),
                    ]
                )


def read_trace(path):
    """Parse a trace CSV back into per-tick {role: row dict} mappings."""
    ticks: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER:
            raise ValueError(f"unexpected trace header: {reader.fieldnames}")
        for line in reader:
            try:
                tick = int(line["tick"])
                role = Role(line["role"])
                values = {k: float(line[k]) for k in TRACE_HEADER[2:]}
            except (TypeError, KeyError, ValueError) as exc:
                raise ValueError(f"malformed trace row: {line}") from exc
            ticks.setdefault(tick, {})[role] = values
    if not ticks:
        raise ValueError("empty trace")
    ordered = sorted(ticks)
    if ordered != list(range(ordered[0], ordered[0] + len(ordered))):
        raise ValueError("trace ticks are not contiguous")
    roles = set(ticks[ordered[0]])
    for t in ordered:
        if set(ticks[t]) != roles:
            raise ValueError(f"trace truncated or role set changes at tick {t}")
    return [ticks[t] for t in ordered]
