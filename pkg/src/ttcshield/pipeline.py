"""End-to-end orchestration: warm-up data collection under random ego actions,
model training with a held-out split, MPC-controlled episodes with success
adjudication, the speed/n/h parameter sweep, and the retraining loop.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .planner import PlannerConfig, action_to_command, obstacle_array, plan_step, random_action
from .prediction import (
    HistoryWindow,
    Predictor,
    ReplayMemory,
    StateRow,
    TransitionCAV,
    TransitionHDV,
    WINDOW,
    command_to_array,
    fit_linear_matrices,
    init_predictor,
    memory_matrices,
    mse_loss,
    train_step,
)
from .safety import TtcParams, pair_ttc_array, static_ttc_array
from .vehicle import ControlCommand, VehicleState
from .world import (
    Role,
    ScenarioConfig,
    WorldState,
    detect_collision,
    init_scenario,
    step_world,
    write_trace,
)

DEFAULT_MEMORY_CAPACITY = 100_000
FULL_STOP_SPEED = 0.1  # m/s; below this the ego counts as fully stopped

SWEEP_HEADER = ["speed", "n", "h", "runs", "successes", "success_rate"]


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "linear"            # "linear" or "mlp3"
    ridge: float = 1e-6
    batch_size: int = 64
    learning_rate: float = 0.01
    lr_decay: float = 0.95          # multiplicative, per epoch
    epochs: int = 200
    min_improvement: float = 1e-6   # epoch-loss improvement stopping threshold
    holdout_fraction: float = 0.1
    hidden: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("linear", "mlp3"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not (0.0 < self.holdout_fraction < 1.0):
            raise ValueError("holdout_fraction must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass(frozen=True)
class TrainingResult:
    cav: Predictor
    hdv: Predictor
    metrics: dict

    @property
    def models(self) -> tuple:
        return (self.cav, self.hdv)


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    termination: str                    # "collision", "full_stop" or "max_steps"
    collision_pair: Optional[tuple]
    min_ttc_observed: float
    ticks_elapsed: int
    trace: tuple                        # WorldState snapshots, initial state included
    new_cav_transitions: tuple
    new_hdv_transitions: tuple
    ego_commands: tuple


@dataclass(frozen=True)
class SweepSpec:
    speeds: tuple = (15.0, 20.0, 25.0)
    ns: tuple = (5, 10, 20, 30)
    hs: tuple = (1, 3, 5, 7, 10)
    runs_per_cell: int = 20
    base_seed: int = 0

    def __post_init__(self):
        if not (self.speeds and self.ns and self.hs):
            raise ValueError("sweep lists must be non-empty")
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be >= 1")


def state_row(v: VehicleState) -> np.ndarray:
    return np.array(
        [v.position.x, v.position.y, v.velocity.x, v.velocity.y,
         v.acceleration.x, v.acceleration.y]
    )


class _History:
    """Rolling per-agent observation log that can emit padded history windows."""

    def __init__(self, with_controls: bool):
        self.rows: list = []
        self.controls: list = [] if with_controls else None

    def observe(self, state: VehicleState, producing_cmd=None) -> None:
        self.rows.append(state_row(state))
        if self.controls is not None:
            self.controls.append(
                np.zeros(3) if producing_cmd is None else command_to_array(producing_cmd)
            )

    @property
    def full(self) -> bool:
        return len(self.rows) >= WINDOW

    def window(self) -> HistoryWindow:
        """Last WINDOW rows; short histories are left-padded with the first row."""
        rows = self.rows[-WINDOW:]
        pad = WINDOW - len(rows)
        rows = [self.rows[0]] * pad + rows
        if self.controls is None:
            return HistoryWindow(np.stack(rows))
        controls = self.controls[-WINDOW:]
        controls = [self.controls[0]] * pad + controls
        return HistoryWindow(np.stack(rows), np.stack(controls))


def _fresh_histories(world: WorldState) -> dict:
    histories = {}
    for role, state in world.vehicles:
        h = _History(with_controls=(role is Role.EGO))
        h.observe(state)
        histories[role] = h
    return histories


def _hdv_roles(world: WorldState):
    return [role for role, _ in world.vehicles if role is not Role.EGO]


def warmup_collect(
    config: ScenarioConfig,
    total_steps: int,
    rng: np.random.Generator,
    capacity: int = DEFAULT_MEMORY_CAPACITY,
    planner_cfg: PlannerConfig = PlannerConfig(),
):
    """Drive the ego with uniform random actions until total_steps are consumed.

    Episodes restart on collision or max_steps. Every genuine (unpadded)
    window yields one ego transition and one transition per HDV; the stored
    next rows are always the simulator's actual successors.
    """
    r_cav = ReplayMemory(capacity)
    r_hdv = ReplayMemory(capacity)
    steps_done = 0
    while steps_done < total_steps:
        world = init_scenario(config, rng)
        histories = _fresh_histories(world)
        while steps_done < total_steps:
            ego = world.ego
            action = random_action(rng)
            cmd = action_to_command(action, ego.steering_position, planner_cfg)
            snapshots = {
                role: histories[role].window()
                for role, _ in world.vehicles
                if histories[role].full
            }
            world = step_world(world, config, cmd)
            steps_done += 1
            for role, state in world.vehicles:
                histories[role].observe(
                    state, producing_cmd=cmd if role is Role.EGO else None
                )
                if role in snapshots:
                    nxt = StateRow.from_array(state_row(state))
                    if role is Role.EGO:
                        r_cav.push(TransitionCAV(snapshots[role], cmd, nxt))
                    else:
                        r_hdv.push(TransitionHDV(snapshots[role], nxt))
            if detect_collision(world) is not None or world.tick >= config.max_steps:
                break
    return r_cav, r_hdv


def _split_indices(n: int, holdout_fraction: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_hold = max(1, int(round(holdout_fraction * n)))
    return perm[n_hold:], perm[:n_hold]


def _holdout_metrics(model: Predictor, features, targets) -> dict:
    pred = model.forward(features)
    err = pred - targets
    return {
        "holdout_mse": float(np.mean(np.sum(err**2, axis=1))),
        "position_rmse_x": float(np.sqrt(np.mean(err[:, 0] ** 2))),
        "position_rmse_y": float(np.sqrt(np.mean(err[:, 1] ** 2))),
    }


def _train_mlp(features, targets, tc: TrainConfig, rng: np.random.Generator):
    from .prediction import normalization_from

    model = init_predictor("mlp3", features.shape[1], rng, hidden=tc.hidden)
    mu, scale = normalization_from(features)
    model = replace(model, mu=mu, scale=scale)
    n = features.shape[0]
    lr = tc.learning_rate
    epoch_losses = []
    for _ in range(tc.epochs):
        order = rng.permutation(n)
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            model, _ = train_step(model, (features[idx], targets[idx]), lr)
        epoch_losses.append(mse_loss(model.forward(features), targets))
        if len(epoch_losses) > 1 and epoch_losses[-2] - epoch_losses[-1] < tc.min_improvement:
            break
        lr *= tc.lr_decay
    return model, epoch_losses


def _train_one(memory: ReplayMemory, tc: TrainConfig, rng: np.random.Generator):
    features, targets = memory_matrices(memory)
    n, d = features.shape
    train_idx, hold_idx = _split_indices(n, tc.holdout_fraction, rng)
    if len(train_idx) < d:
        raise ValueError(
            f"insufficient data: {n} transitions for {d} features plus holdout"
        )
    if tc.kind == "linear":
        eval_model = fit_linear_matrices(features[train_idx], targets[train_idx], tc.ridge)
        metrics = _holdout_metrics(eval_model, features[hold_idx], targets[hold_idx])
        # the returned model uses every sample; the held-out numbers above
        # come from a fit that never saw them
        model = fit_linear_matrices(features, targets, tc.ridge)
        return model, metrics
    model, epoch_losses = _train_mlp(features[train_idx], targets[train_idx], tc, rng)
    metrics = _holdout_metrics(model, features[hold_idx], targets[hold_idx])
    metrics["epoch_loss_curve"] = epoch_losses
    return model, metrics


def train_models(r_cav: ReplayMemory, r_hdv: ReplayMemory, tc: TrainConfig) -> TrainingResult:
    """Fit the conditioned ego predictor and the shared HDV predictor."""
    rng = np.random.default_rng(tc.seed)
    cav, cav_metrics = _train_one(r_cav, tc, rng)
    hdv, hdv_metrics = _train_one(r_hdv, tc, rng)
    return TrainingResult(cav=cav, hdv=hdv, metrics={"cav": cav_metrics, "hdv": hdv_metrics})


def tick_min_ttc(world: WorldState, obs_xy: np.ndarray, p: TtcParams) -> float:
    ego = world.ego
    ego_pos = np.array([ego.position.x, ego.position.y])
    ego_vel = np.array([ego.velocity.x, ego.velocity.y])
    hdvs = [v for role, v in world.vehicles if role is not Role.EGO]
    best = float("inf")
    if hdvs:
        pos = np.array([[v.position.x, v.position.y] for v in hdvs])
        vel = np.array([[v.velocity.x, v.velocity.y] for v in hdvs])
        ttc, _ = pair_ttc_array(ego_pos, ego_vel, pos, vel, p)
        best = min(best, float(np.min(ttc)))
    if len(obs_xy):
        ttc, _ = static_ttc_array(ego_pos, ego_vel, obs_xy, p)
        best = min(best, float(np.min(ttc)))
    return best


def run_episode(
    config: ScenarioConfig,
    models: tuple,
    planner_cfg: PlannerConfig,
    ttc_params: TtcParams,
    rng: np.random.Generator,
    initial_world: Optional[WorldState] = None,
) -> EpisodeResult:
    """One MPC-controlled episode, staged fresh unless an initial world is given.

    Terminates on ground-truth collision (failure), on the ego coming to a
    full stop, or on the step cap (both success). Every observed transition
    is returned for the retraining loop.
    """
    cav_model, hdv_model = models
    if not (cav_model.trained and hdv_model.trained):
        raise ValueError("run_episode requires trained predictors")
    world = init_scenario(config, rng) if initial_world is None else initial_world
    histories = _fresh_histories(world)
    hdv_roles = _hdv_roles(world)
    obs_xy = obstacle_array(world.obstacles)
    trace = [world]
    ego_commands: list = []
    new_cav: list = []
    new_hdv: list = []
    min_ttc = tick_min_ttc(world, obs_xy, ttc_params)

    termination = "max_steps"
    collision_pair = None
    for _ in range(config.max_steps):
        ego_window = histories[Role.EGO].window()
        hdv_windows = [histories[r].window() for r in hdv_roles]
        result = plan_step(
            ego_window, hdv_windows, obs_xy, models, planner_cfg, ttc_params, rng
        )
        cmd = result.chosen_command
        snapshots = {
            role: histories[role].window()
            for role, _ in world.vehicles
            if histories[role].full
        }
        world = step_world(world, config, cmd)
        trace.append(world)
        ego_commands.append(cmd)
        for role, state in world.vehicles:
            histories[role].observe(
                state, producing_cmd=cmd if role is Role.EGO else None
            )
            if role in snapshots:
                nxt = StateRow.from_array(state_row(state))
                if role is Role.EGO:
                    new_cav.append(TransitionCAV(snapshots[role], cmd, nxt))
                else:
                    new_hdv.append(TransitionHDV(snapshots[role], nxt))
        min_ttc = min(min_ttc, tick_min_ttc(world, obs_xy, ttc_params))
        collision_pair = detect_collision(world)
        if collision_pair is not None:
            termination = "collision"
            break
        if world.ego.speed < FULL_STOP_SPEED:
            termination = "full_stop"
            break

    return EpisodeResult(
        success=termination != "collision",
        termination=termination,
        collision_pair=collision_pair,
        min_ttc_observed=min_ttc,
        ticks_elapsed=world.tick,
        trace=tuple(trace),
        new_cav_transitions=tuple(new_cav),
        new_hdv_transitions=tuple(new_hdv),
        ego_commands=tuple(ego_commands),
    )


def episode_rng(base_seed: int, speed: float, n: int, h: int, run_index: int):
    """Stable per-episode stream; independent of cell enumeration order."""
    ss = np.random.SeedSequence(
        [int(base_seed), int(round(speed * 1000)), int(n), int(h), int(run_index)]
    )
    return np.random.default_rng(ss)


def _run_cell(args):
    config, models, ttc_params, base_planner, base_seed, speed, n, h, runs, traces_dir = args
    cell_config = replace(config, mean_initial_speed=speed)
    planner_cfg = replace(base_planner, num_trajectories=n, horizon=h)
    successes = 0
    for run in range(runs):
        rng = episode_rng(base_seed, speed, n, h, run)
        result = run_episode(cell_config, models, planner_cfg, ttc_params, rng)
        successes += int(result.success)
        if traces_dir is not None:
            path = Path(traces_dir) / f"{speed!r}_{n}_{h}_{run}.csv"
            write_trace(path, cell_config, result.trace, result.ego_commands)
    return (speed, n, h, runs, successes)


def evaluate_sweep(
    spec: SweepSpec,
    config: ScenarioConfig,
    models: tuple,
    ttc_params: TtcParams,
    base_planner: PlannerConfig = PlannerConfig(),
    traces_dir=None,
    jobs: int = 1,
) -> list:
    """Success rates over the (speed, n, h) grid, runs_per_cell episodes each.

    Per-episode seeds derive from (base_seed, cell coordinates, run index),
    so any cell can be reproduced in isolation and the table is independent
    of enumeration order and of the jobs count.
    """
    if traces_dir is not None:
        Path(traces_dir).mkdir(parents=True, exist_ok=True)
    cells = [
        (config, models, ttc_params, base_planner, spec.base_seed,
         speed, n, h, spec.runs_per_cell, traces_dir)
        for speed in sorted(spec.speeds)
        for n in sorted(spec.ns)
        for h in sorted(spec.hs)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    rows = []
    for speed, n, h, runs, successes in sorted(results, key=lambda r: (r[0], r[1], r[2])):
        rows.append(
            {
                "speed": speed,
                "n": n,
                "h": h,
                "runs": runs,
                "successes": successes,
                "success_rate": successes / runs,
            }
        )
    return rows


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow(
                [
                    repr(float(row["speed"])),
                    row["n"],
                    row["h"],
                    row["runs"],
                    row["successes"],
                    repr(float(row["success_rate"])),
                ]
            )


def retrain(
    r_cav: ReplayMemory,
    r_hdv: ReplayMemory,
    new_cav_transitions,
    new_hdv_transitions,
    tc: TrainConfig,
) -> TrainingResult:
    """Push freshly observed transitions (FIFO eviction) and refit both models.

    For the linear kind the refit is the closed-form optimum over the merged
    buffer, so its training MSE can only match or improve on any stale model.
    """
    r_cav.extend(new_cav_transitions)
    r_hdv.extend(new_hdv_transitions)
    return train_models(r_cav, r_hdv, tc)


# --- buffer serialization -------------------------------------------------------

BUFFERS_FORMAT = "ttcshield-buffers-v1"


def save_buffers(directory, r_cav: ReplayMemory, r_hdv: ReplayMemory) -> None:
    """Write both replay memories as plain .npy arrays plus a tagged header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cav = list(r_cav)
    hdv = list(r_hdv)
    np.save(directory / "cav_rows.npy", np.stack([t.window.rows for t in cav]) if cav else np.empty((0, WINDOW, 6)))
    np.save(directory / "cav_controls.npy", np.stack([t.window.controls for t in cav]) if cav else np.empty((0, WINDOW, 3)))
    np.save(directory / "cav_applied.npy", np.stack([command_to_array(t.applied_action_command) for t in cav]) if cav else np.empty((0, 3)))
    np.save(directory / "cav_next.npy", np.stack([t.next.as_array() for t in cav]) if cav else np.empty((0, 6)))
    np.save(directory / "hdv_rows.npy", np.stack([t.window.rows for t in hdv]) if hdv else np.empty((0, WINDOW, 6)))
    np.save(directory / "hdv_next.npy", np.stack([t.next.as_array() for t in hdv]) if hdv else np.empty((0, 6)))
    header = {
        "format": BUFFERS_FORMAT,
        "cav_count": len(cav),
        "hdv_count": len(hdv),
        "cav_capacity": r_cav.capacity,
        "hdv_capacity": r_hdv.capacity,
    }
    with open(directory / "buffers.json", "w") as fh:
        json.dump(header, fh, sort_keys=True)


def load_buffers(directory):
    directory = Path(directory)
    header_path = directory / "buffers.json"
    if not header_path.exists():
        raise ValueError(f"missing buffer header file: {header_path}")
    with open(header_path) as fh:
        header = json.load(fh)
    if header.get("format") != BUFFERS_FORMAT:
        raise ValueError(
            f"buffer format {header.get('format')!r} does not match {BUFFERS_FORMAT!r}"
        )
    arrays = {}
    for name in ("cav_rows", "cav_controls", "cav_applied", "cav_next", "hdv_rows", "hdv_next"):
        path = directory / f"{name}.npy"
        if not path.exists():
            raise ValueError(f"missing buffer file: {path}")
        arrays[name] = np.load(path)
    r_cav = ReplayMemory(int(header["cav_capacity"]))
    for rows, controls, applied, nxt in zip(
        arrays["cav_rows"], arrays["cav_controls"], arrays["cav_applied"], arrays["cav_next"]
    ):
        cmd = ControlCommand(throttle=float(applied[0]), steering=float(applied[1]), brake=float(applied[2]))
        r_cav.push(TransitionCAV(HistoryWindow(rows, controls), cmd, StateRow.from_array(nxt)))
    r_hdv = ReplayMemory(int(header["hdv_capacity"]))
    for rows, nxt in zip(arrays["hdv_rows"], arrays["hdv_next"]):
        r_hdv.push(TransitionHDV(HistoryWindow(rows), StateRow.from_array(nxt)))
    return r_cav, r_hdv
