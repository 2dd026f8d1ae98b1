"""Random-shooting MPC over a 9-way discrete action alphabet.

Each tick the planner samples candidate action sequences, rolls every one
of them through the learned predictors, scores the predicted configurations
with the TTC risk functional, and executes only the first action of the
cheapest sequence before re-planning from scratch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .safety import TtcParams, state_cost_arrays
from .vehicle import ControlCommand, clamp

LONG_BRAKE, LONG_KEEP, LONG_GAS = 0, 1, 2
LAT_LEFT, LAT_KEEP, LAT_RIGHT = 0, 1, 2


@dataclass(frozen=True)
class Action:
    """Pair of ternary controls: longitudinal {brake, keep, gas} x
    latitudinal {left, keep, right}."""

    longitudinal: int
    latitudinal: int

    def __post_init__(self):
        if self.longitudinal not in (0, 1, 2) or self.latitudinal not in (0, 1, 2):
            raise ValueError(f"action fields must be in {{0,1,2}}, got {self}")


ACTION_KEEP = Action(LONG_KEEP, LAT_KEEP)
ACTION_BRAKE_STRAIGHT = Action(LONG_BRAKE, LAT_KEEP)


@dataclass(frozen=True)
class PlannerConfig:
    num_trajectories: int = 30
    horizon: int = 3
    steer_increment: float = 0.1
    gas_level: float = 0.8
    brake_level: float = 1.0
    include_fallbacks: bool = False

    def __post_init__(self):
        if self.num_trajectories < 1 or self.horizon < 1:
            raise ValueError("num_trajectories and horizon must be >= 1")
        if not (0.0 < self.steer_increment <= 1.0):
            raise ValueError("steer_increment must lie in (0, 1]")
        if not (0.0 < self.gas_level <= 1.0 and 0.0 < self.brake_level <= 1.0):
            raise ValueError("gas_level and brake_level must lie in (0, 1]")


@dataclass(frozen=True)
class PlanResult:
    chosen_action: Action
    chosen_command: ControlCommand
    costs: np.ndarray          # cumulative cost per candidate sequence
    chosen_index: int          # argmin, ties broken toward the lowest index
    fallback: bool = False     # True when every candidate overflowed
    cost_terms: int = 0        # per-entity cost terms evaluated in this call


def action_to_command(
    action: Action, current_steering: float, cfg: PlannerConfig = PlannerConfig()
) -> ControlCommand:
    """Fixed transfer logic from the categorical action to pedal/wheel positions.

    The latitudinal field nudges the wheel by one steer_increment (left is
    negative) from its current position; longitudinal picks exactly one of
    brake/none/gas, so pedal exclusivity holds by construction.
    """
    steering = current_steering + (action.latitudinal - 1) * cfg.steer_increment
    steering = clamp(steering, -1.0, 1.0)
    if action.longitudinal == LONG_BRAKE:
        return ControlCommand(brake=cfg.brake_level, steering=steering)
    if action.longitudinal == LONG_GAS:
        return ControlCommand(throttle=cfg.gas_level, steering=steering)
    return ControlCommand(steering=steering)


def random_action(rng: np.random.Generator) -> Action:
    lon, lat = rng.integers(0, 3, size=2)
    return Action(int(lon), int(lat))


def sample_action_sequences(cfg: PlannerConfig, rng: np.random.Generator):
    """num_trajectories sequences of horizon actions, i.i.d. uniform over the 9."""
    draws = rng.integers(0, 3, size=(cfg.num_trajectories, cfg.horizon, 2))
    sequences = [
        tuple(Action(int(a), int(b)) for a, b in seq) for seq in draws
    ]
    if cfg.include_fallbacks:
        sequences[0] = (ACTION_KEEP,) * cfg.horizon
        if cfg.num_trajectories > 1:
            sequences[1] = (ACTION_BRAKE_STRAIGHT,) * cfg.horizon
    return sequences


def _slide(rows: np.ndarray, new_row: np.ndarray) -> np.ndarray:
    out = np.empty_like(rows)
    out[:-1] = rows[1:]
    out[-1] = new_row
    return out


def predict_hdv_trajectory(hdv_windows, hdv_model, horizon: int):
    """Compound the shared HDV model per agent for horizon steps.

    Returns one (positions (k, 2), velocities (k, 2)) pair per step. HDV
    motion does not depend on the ego's candidate actions, so this runs once
    per planning call and is shared across all candidate sequences.
    """
    rows = [np.asarray(w.rows, dtype=float).copy() for w in hdv_windows]
    steps = []
    for _ in range(horizon):
        nxt = [hdv_model.predict_row(r) for r in rows]
        rows = [_slide(r, n) for r, n in zip(rows, nxt)]
        if nxt:
            stacked = np.stack(nxt)
            if not np.all(np.isfinite(stacked)):
                raise FloatingPointError("non-finite surrounding-vehicle prediction")
            steps.append((stacked[:, 0:2], stacked[:, 2:4]))
        else:
            empty = np.empty((0, 2))
            steps.append((empty, empty))
    return steps


def _rollout_ego(ego_window, obstacle_xy, sequence, cav_model, hdv_steps, cfg, p):
    """Score one candidate sequence against a precomputed HDV trajectory.

    A non-finite prediction anywhere poisons the whole sequence (infinite
    cost) rather than silently comparing as risk-free.
    """
    rows = np.asarray(ego_window.rows, dtype=float).copy()
    controls = np.asarray(ego_window.controls, dtype=float).copy()
    cur_steer = float(controls[-1, 1])
    total = 0.0
    terms = 0
    for action, (hdv_pos, hdv_vel) in zip(sequence, hdv_steps):
        cmd = action_to_command(action, cur_steer, cfg)
        cmd_arr = np.array([cmd.throttle, cmd.steering, cmd.brake])
        nxt = cav_model.predict_row(rows, controls, cmd_arr)
        if not np.all(np.isfinite(nxt)):
            return math.inf, terms
        rows = _slide(rows, nxt)
        controls = _slide(controls, cmd_arr)
        cur_steer = cmd.steering
        total += state_cost_arrays(nxt[0:2], nxt[2:4], hdv_pos, hdv_vel, obstacle_xy, p)
        terms += 1 + hdv_pos.shape[0] + obstacle_xy.shape[0]
    return total, terms


def obstacle_array(obstacles) -> np.ndarray:
    if len(obstacles) == 0:
        return np.empty((0, 2))
    return np.array([[o.position.x, o.position.y] for o in obstacles])


def rollout(ego_window, hdv_windows, obstacles, sequence, models, cfg, p: TtcParams) -> float:
    """Cumulative predicted TTC cost of one action sequence.

    Pure function of its inputs: every step maps the action to a command
    (steering tracked open-loop from the executed candidates), predicts the
    ego via the conditioned model and every HDV via the shared model, slides
    the windows with the predicted rows, and accumulates the state cost of
    the predicted configuration.
    """
    cav_model, hdv_model = models
    try:
        hdv_steps = predict_hdv_trajectory(hdv_windows, hdv_model, len(sequence))
    except FloatingPointError:
        return math.inf
    cost, _ = _rollout_ego(
        ego_window, obstacle_array(obstacles), sequence, cav_model, hdv_steps, cfg, p
    )
    return cost


def plan_step(
    ego_window,
    hdv_windows,
    obstacles,
    models,
    cfg: PlannerConfig,
    p: TtcParams,
    rng: np.random.Generator,
) -> PlanResult:
    """One MPC re-planning step: sample, roll out, pick the cheapest first action.

    The candidate set is re-sampled on every call. Non-finite rollout costs
    sort after all finite ones; if every candidate overflows, the straight
    brake action is executed instead.
    """
    cav_model, hdv_model = models
    if not (getattr(cav_model, "trained", True) and getattr(hdv_model, "trained", True)):
        raise ValueError("plan_step requires trained predictors")
    sequences = sample_action_sequences(cfg, rng)
    obs_xy = obstacles if isinstance(obstacles, np.ndarray) else obstacle_array(obstacles)
    try:
        hdv_steps = predict_hdv_trajectory(hdv_windows, hdv_model, cfg.horizon)
    except FloatingPointError:
        hdv_steps = None

    costs = np.full(len(sequences), math.inf)
    terms_total = 0
    if hdv_steps is not None:
        for i, seq in enumerate(sequences):
            cost, terms = _rollout_ego(ego_window, obs_xy, seq, cav_model, hdv_steps, cfg, p)
            costs[i] = cost if math.isfinite(cost) else math.inf
            terms_total += terms

    cur_steer = float(np.asarray(ego_window.controls)[-1, 1])
    if not np.any(np.isfinite(costs)):
        action = ACTION_BRAKE_STRAIGHT
        return PlanResult(
            chosen_action=action,
            chosen_command=action_to_command(action, cur_steer, cfg),
            costs=costs,
            chosen_index=0,
            fallback=True,
            cost_terms=terms_total,
        )
    idx = int(np.argmin(costs))
    action = sequences[idx][0]
    return PlanResult(
        chosen_action=action,
        chosen_command=action_to_command(action, cur_steer, cfg),
        costs=costs,
        chosen_index=idx,
        cost_terms=terms_total,
    )
