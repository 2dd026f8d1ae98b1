"""Single-vehicle plant: state containers and the kinematic bicycle step.

Coordinate convention used throughout the package: +x is the nominal
direction of travel, +y points to the *right* of +x, and heading is the
angle from +x toward +y. Positive steering therefore turns the vehicle
to the right, matching the -1 (full left) .. +1 (full right) wheel range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Plant constants (sedan-like defaults).
A_MAX_GAS = 4.0      # m/s^2 at full throttle
A_MAX_BRAKE = 8.0    # m/s^2 at full brake
DELTA_MAX = 0.5236   # rad, front wheel angle at |steering| = 1 (30 deg)
WHEELBASE = 2.7      # m


def clamp(x: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, x))


@dataclass(frozen=True)
class Vec2:
    """A 2D quantity (m, m/s or m/s^2 by context). Components must be finite."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite Vec2 components ({self.x}, {self.y})")

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def scaled(self, k: float) -> "Vec2":
        return Vec2(self.x * k, self.y * k)

    def dot(self, other: "Vec2") -> float:
        return self.x * other.x + self.y * other.y

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class ControlCommand:
    """Normalized pedal/wheel positions. Throttle and brake are exclusive."""

    throttle: float = 0.0
    brake: float = 0.0
    steering: float = 0.0

    def __post_init__(self):
        for name, v, lo, hi in (
            ("throttle", self.throttle, 0.0, 1.0),
            ("brake", self.brake, 0.0, 1.0),
            ("steering", self.steering, -1.0, 1.0),
        ):
            if not math.isfinite(v) or not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        if self.throttle * self.brake != 0.0:
            raise ValueError(
                f"throttle ({self.throttle}) and brake ({self.brake}) are exclusive"
            )


KEEP_COMMAND = ControlCommand()


@dataclass(frozen=True)
class VehicleState:
    """Pose, motion and actuator position of one vehicle at one tick."""

    position: Vec2
    velocity: Vec2
    acceleration: Vec2 = Vec2(0.0, 0.0)
    heading: float = 0.0
    steering_position: float = 0.0
    radius: float = 1.2  # m, collision circle

    def __post_init__(self):
        if not math.isfinite(self.heading):
            raise ValueError("non-finite heading")
        if self.radius <= 0.0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        # steering_position is clamped on write rather than rejected
        object.__setattr__(
            self, "steering_position", clamp(float(self.steering_position), -1.0, 1.0)
        )

    @property
    def speed(self) -> float:
        return self.velocity.norm()


def step_vehicle(state: VehicleState, cmd: ControlCommand, dt: float) -> VehicleState:
    """Advance one vehicle by dt under a control command.

    Kinematic bicycle with direct wheel-position actuation:
      a      = A_MAX_GAS * throttle - A_MAX_BRAKE * brake
      v'     = max(0, v + a * dt)              (no reverse gear)
      psi'   = psi + (v' / WHEELBASE) * tan(steering * DELTA_MAX) * dt
      p'     = p + v' * (cos psi', sin psi') * dt
    The stored acceleration is the realized per-axis (v' - v) / dt, so
    brake saturation at standstill is reflected in the state.
    """
    if not (math.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be positive and finite, got {dt}")

    a_long = A_MAX_GAS * cmd.throttle - A_MAX_BRAKE * cmd.brake
    speed_new = max(0.0, state.speed + a_long * dt)

    wheel = cmd.steering * DELTA_MAX
    heading_new = state.heading + (speed_new / WHEELBASE) * math.tan(wheel) * dt

    velocity_new = Vec2(
        speed_new * math.cos(heading_new), speed_new * math.sin(heading_new)
    )
    position_new = state.position + velocity_new.scaled(dt)
    accel_realized = (velocity_new - state.velocity).scaled(1.0 / dt)

    return VehicleState(
        position=position_new,
        velocity=velocity_new,
        acceleration=accel_realized,
        heading=heading_new,
        steering_position=cmd.steering,
        radius=state.radius,
    )
