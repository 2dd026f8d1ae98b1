"""Crash-imminent cut-in avoidance for a connected autonomous vehicle.

A deterministic 2D kinematic traffic simulator stages blind-spot cut-in
scenarios; learned one-step dynamics models predict vehicle motion; and a
time-to-collision-cost random-shooting MPC planner steers the ego vehicle
clear of collisions caused by errant human-driven vehicles.
"""

__version__ = "0.1.0"

from .planner import Action, PlannerConfig, PlanResult, action_to_command, plan_step, rollout
from .prediction import (
    HistoryWindow,
    Predictor,
    ReplayMemory,
    StateRow,
    TransitionCAV,
    TransitionHDV,
    featurize_cav,
    featurize_hdv,
    fit_linear_closed_form,
    load_checkpoint,
    mse_loss,
    predict,
    save_checkpoint,
    train_step,
)
from .pipeline import (
    EpisodeResult,
    SweepSpec,
    TrainConfig,
    TrainingResult,
    evaluate_sweep,
    retrain,
    run_episode,
    train_models,
    warmup_collect,
)
from .safety import TtcParams, state_cost, threshold_ttc, ttc_pair, ttc_quadratic_oracle, ttc_static
from .vehicle import ControlCommand, Vec2, VehicleState, step_vehicle
from .world import (
    ManeuverProfile,
    Role,
    ScenarioConfig,
    StaticObstacle,
    WorldState,
    detect_collision,
    init_scenario,
    scripted_hdv_command,
    step_world,
)
