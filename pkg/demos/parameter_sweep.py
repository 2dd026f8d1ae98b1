#!/usr/bin/env python3
"""Map success rate against the planner's two knobs.

Sweeps the number of sampled trajectories n and the planning horizon h at one
initial speed and draws the success-rate grid. More trajectories generally
help (more futures examined); horizons much longer than a few steps stop
helping because the predictors are extrapolating an errant driver who is
about to do something their history does not reveal.

The full protocol (3 speeds x 4 n x 5 h x 20 runs) is the `ttcshield sweep`
subcommand; this demo runs a reduced grid to stay in coffee-break territory.

Run:  python demos/parameter_sweep.py
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ttcshield.pipeline import (
    SweepSpec,
    TrainConfig,
    evaluate_sweep,
    train_models,
    warmup_collect,
    write_sweep_csv,
)
from ttcshield.prediction import ReplayMemory
from ttcshield.safety import TtcParams
from ttcshield.world import ScenarioConfig

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

SPEC = SweepSpec(speeds=(20.0,), ns=(5, 10, 30), hs=(1, 3, 10), runs_per_cell=8, base_seed=21)

print("Training models ...")
rng = np.random.default_rng(7)
r_cav, r_hdv = ReplayMemory(100_000), ReplayMemory(100_000)
for speed in (15.0, 20.0, 25.0):
    c, h = warmup_collect(ScenarioConfig(mean_initial_speed=speed), 4000, rng)
    r_cav.extend(c)
    r_hdv.extend(h)
models = train_models(r_cav, r_hdv, TrainConfig(kind="linear")).models

print(f"Sweeping {len(SPEC.ns) * len(SPEC.hs)} cells x {SPEC.runs_per_cell} runs "
      f"at {SPEC.speeds[0]:.0f} m/s ...")
rows = evaluate_sweep(SPEC, ScenarioConfig(), models, TtcParams())
csv_path = OUT / "sweep.csv"
write_sweep_csv(csv_path, rows)
for r in rows:
    print(f"  n={r['n']:2d} h={r['h']:2d}: {r['successes']}/{r['runs']}")
print(f"Table written to {csv_path}")

grid = np.zeros((len(SPEC.ns), len(SPEC.hs)))
for r in rows:
    grid[SPEC.ns.index(r["n"]), SPEC.hs.index(r["h"])] = r["success_rate"]

fig, ax = plt.subplots(figsize=(5.4, 4.2))
im = ax.imshow(grid, vmin=0, vmax=1, cmap="RdYlGn", origin="lower")
ax.set_xticks(range(len(SPEC.hs)), SPEC.hs)
ax.set_yticks(range(len(SPEC.ns)), SPEC.ns)
ax.set_xlabel("planning horizon h")
ax.set_ylabel("sampled trajectories n")
for i in range(len(SPEC.ns)):
    for j in range(len(SPEC.hs)):
        ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center", fontsize=9)
ax.set_title(f"Success rate at {SPEC.speeds[0]:.0f} m/s ({SPEC.runs_per_cell} runs/cell)")
fig.colorbar(im, ax=ax, shrink=0.85)
fig.tight_layout()
fig.savefig(OUT / "sweep_grid.png", dpi=140)
print(f"Plot written to {OUT / 'sweep_grid.png'}")
