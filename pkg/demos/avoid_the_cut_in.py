#!/usr/bin/env python3
"""The whole loop: collect, train, then let the planner drive the ego.

Same staged cut-in as stage_a_crash.py, but the ego is now controlled by the
random-shooting MPC: at every tick it samples candidate action sequences,
rolls them through the learned predictors, scores each predicted future with
the thresholded inverse-TTC cost, and executes the first action of the
cheapest sequence. Typical outcome: the ego guns it and slides clear while
the errant vehicle sweeps through the space it vacated.

Run:  python demos/avoid_the_cut_in.py
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ttcshield.pipeline import (
    TrainConfig,
    episode_rng,
    run_episode,
    train_models,
    warmup_collect,
)
from ttcshield.planner import PlannerConfig
from ttcshield.prediction import ReplayMemory
from ttcshield.safety import TtcParams
from ttcshield.world import Role, ScenarioConfig, write_trace

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

SPEEDS = (15.0, 20.0, 25.0)
RUNS = 10
PLANNER = PlannerConfig(num_trajectories=30, horizon=3)

print("Phase 1 — warm-up data collection (random ego actions)")
rng = np.random.default_rng(99)
r_cav, r_hdv = ReplayMemory(100_000), ReplayMemory(100_000)
for speed in SPEEDS:
    c, h = warmup_collect(ScenarioConfig(mean_initial_speed=speed), 4000, rng)
    r_cav.extend(c)
    r_hdv.extend(h)
print(f"  {len(r_cav)} ego / {len(r_hdv)} surrounding transitions")

print("Phase 2 — closed-form training of the linear predictors")
models = train_models(r_cav, r_hdv, TrainConfig(kind="linear")).models

print(f"Phase 3 — MPC crash avoidance, n={PLANNER.num_trajectories}, h={PLANNER.horizon}")
ttc = TtcParams()
kept_trace = None
for speed in SPEEDS:
    config = ScenarioConfig(mean_initial_speed=speed)
    wins = 0
    min_ttcs = []
    for run in range(RUNS):
        result = run_episode(
            config, models, PLANNER, ttc,
            episode_rng(99, speed, PLANNER.num_trajectories, PLANNER.horizon, run),
        )
        wins += int(result.success)
        min_ttcs.append(result.min_ttc_observed)
        if speed == 15.0 and run == 0:
            kept_trace = (config, result)
    print(f"  {speed:4.0f} m/s: {wins}/{RUNS} successful, "
          f"worst min-TTC {min(min_ttcs):.2f} s")

config, result = kept_trace
trace_path = OUT / "avoidance_trace.csv"
write_trace(trace_path, config, result.trace, result.ego_commands)
print(f"\nSample episode ({result.termination}) written to {trace_path}")

# --- plot the sample episode ---------------------------------------------------

fig, (ax, ax2) = plt.subplots(2, 1, figsize=(11, 5.4), height_ratios=[2, 1])
colors = {Role.EGO: "tab:red", Role.ERRANT: "tab:orange",
          Role.LEAD: "tab:gray", Role.REAR: "tab:blue"}
for role in colors:
    xs = [w.vehicle(role).position.x for w in result.trace]
    ys = [w.vehicle(role).position.y for w in result.trace]
    ax.plot(xs, ys, color=colors[role], label=role.value, lw=1.8)
    ax.plot(xs[0], ys[0], "o", color=colors[role], ms=5)
for y in (-config.lane_width, 0.0, config.lane_width):
    ax.axhline(y, color="k", lw=0.6, ls="--" if y == 0 else "-", alpha=0.5)
ax.invert_yaxis()
ax.set_ylabel("y [m]")
ax.legend(loc="upper left", ncols=4, fontsize=8)
ax.set_title(f"Planned escape at {config.mean_initial_speed:.0f} m/s "
             f"({result.termination}, {result.ticks_elapsed} ticks)")

t = np.arange(len(result.ego_commands)) * config.dt
ax2.step(t, [c.throttle for c in result.ego_commands], label="throttle", where="post")
ax2.step(t, [c.brake for c in result.ego_commands], label="brake", where="post")
ax2.step(t, [c.steering for c in result.ego_commands], label="steering", where="post")
ax2.set_xlabel("time [s]")
ax2.set_ylabel("ego command")
ax2.legend(fontsize=8, ncols=3)
fig.tight_layout()
fig.savefig(OUT / "avoidance_episode.png", dpi=140)
print(f"Plot written to {OUT / 'avoidance_episode.png'}")
