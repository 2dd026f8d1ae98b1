#!/usr/bin/env python3
"""Stage the blind-spot cut-in and watch it end badly.

A four-vehicle overtake scenario is assembled with noisy initial speeds: the
errant vehicle closes on its lead, swings into the ego's lane without seeing
it, and keeps pushing. The ego here does nothing (constant keep command), so
every run ends in a collision. The script writes the episode trace CSV and a
bird's-eye plot of the trajectories.

Run:  python demos/stage_a_crash.py
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ttcshield.vehicle import ControlCommand
from ttcshield.world import (
    Role,
    ScenarioConfig,
    detect_collision,
    init_scenario,
    step_world,
    write_trace,
)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

SPEED = 15.0  # m/s mean initial speed; try 20 or 25
SEED = 3

config = ScenarioConfig(mean_initial_speed=SPEED)
world = init_scenario(config, np.random.default_rng(SEED))

print(f"Initial arrangement (mean speed {SPEED} m/s, seed {SEED}):")
for role, v in world.vehicles:
    print(f"  {role.value:11s} x={v.position.x:6.1f} m  y={v.position.y:5.2f} m  v={v.speed:5.2f} m/s")

trace = [world]
commands = []
collision = None
for _ in range(config.max_steps):
    cmd = ControlCommand(steering=world.ego.steering_position)  # do nothing
    world = step_world(world, config, cmd)
    trace.append(world)
    commands.append(cmd)
    collision = detect_collision(world)
    if collision:
        break

assert collision is not None, "the staged scenario is calibrated to be lethal"
print(f"\nCollision between {collision[0]} and {collision[1]} "
      f"at tick {world.tick} (t = {world.tick * config.dt:.2f} s)")

trace_path = OUT / "crash_trace.csv"
write_trace(trace_path, config, trace, commands)
print(f"Trace written to {trace_path}")
print("Audit it with:  ttcshield replay --trace", trace_path)

# --- plot -------------------------------------------------------------------

fig, ax = plt.subplots(figsize=(11, 3.2))
colors = {Role.EGO: "tab:red", Role.ERRANT: "tab:orange",
          Role.LEAD: "tab:gray", Role.REAR: "tab:blue"}
for role in colors:
    xs = [w.vehicle(role).position.x for w in trace]
    ys = [w.vehicle(role).position.y for w in trace]
    ax.plot(xs, ys, color=colors[role], label=role.value, lw=1.8)
    ax.plot(xs[0], ys[0], "o", color=colors[role], ms=5)

edge = config.lane_width
for y in (-edge, 0.0, edge):
    ax.axhline(y, color="k", lw=0.6, ls="--" if y == 0 else "-", alpha=0.5)
hit = trace[-1]
for name in collision:
    if not name.startswith("obstacle"):
        v = hit.vehicle(Role(name))
        ax.add_patch(plt.Circle((v.position.x, v.position.y), v.radius,
                                fill=False, color="red", lw=2))
ax.set_xlabel("x [m]")
ax.set_ylabel("y [m]")
ax.invert_yaxis()  # +y points right of travel; draw it downward like a map
ax.legend(loc="upper left", ncols=4, fontsize=8)
ax.set_title(f"Keep-command ego, {SPEED:.0f} m/s: collision at t = {world.tick * config.dt:.2f} s")
fig.tight_layout()
fig.savefig(OUT / "crash_scene.png", dpi=140)
print(f"Plot written to {OUT / 'crash_scene.png'}")
