"""Command-line front end: collect / train / eval / sweep / replay.

All subcommands share one JSON config document; flags override file values
which override defaults. Exit codes: 0 success, 2 validation or usage
error, 3 I/O failure while writing outputs. TTCSHIELD_SEED provides a
default seed when neither a flag nor the config supplies one.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import AppConfig, ConfigError, load_app_config, load_sweep_spec
from .pipeline import (
    SweepSpec,
    episode_rng,
    evaluate_sweep,
    load_buffers,
    run_episode,
    save_buffers,
    tick_min_ttc,
    train_models,
    warmup_collect,
    write_sweep_csv,
)
from .planner import obstacle_array
from .prediction import (
    CAV_INPUT_DIM,
    HDV_INPUT_DIM,
    load_checkpoint,
    save_checkpoint,
)
from .vehicle import Vec2, VehicleState
from .world import Role, WorldState, detect_collision, read_trace, roadside_obstacles

SEED_ENV_VAR = "TTCSHIELD_SEED"


def _resolve_seed(args, app: AppConfig) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR}={env!r} is not an integer") from exc
    return app.scenario.seed


def _write_manifest(out_dir: Path, args, seed: int, extra=None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": args.command,
        "config_path": str(args.config) if args.config else None,
        "seed": seed,
        "version": __version__,
        "output_dir": str(out_dir),
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _finish_manifest(out_dir: Path, manifest: dict) -> None:
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_models(models_dir) -> tuple:
    models_dir = Path(models_dir)
    paths = (models_dir / "f_cav.json", models_dir / "f_hdv.json")
    for p in paths:
        if not p.exists():
            raise ConfigError(f"missing checkpoint file: {p}")
    try:
        cav = load_checkpoint(paths[0])
        hdv = load_checkpoint(paths[1])
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"invalid checkpoint: {exc}") from exc
    if cav.input_dim != CAV_INPUT_DIM or hdv.input_dim != HDV_INPUT_DIM:
        raise ConfigError(
            f"checkpoint dimension mismatch: ego {cav.input_dim} (want {CAV_INPUT_DIM}), "
            f"surrounding {hdv.input_dim} (want {HDV_INPUT_DIM})"
        )
    return cav, hdv


def cmd_collect(args) -> int:
    app = load_app_config(args.config)
    seed = _resolve_seed(args, app)
    out = Path(args.out)
    manifest = _write_manifest(out, args, seed, {"steps": args.steps})
    rng = np.random.default_rng(seed)
    r_cav, r_hdv = warmup_collect(
        app.scenario, args.steps, rng, planner_cfg=app.planner
    )
    save_buffers(out, r_cav, r_hdv)
    _finish_manifest(out, manifest)
    print(f"collected {len(r_cav)} ego transitions, {len(r_hdv)} surrounding-vehicle transitions")
    return 0


def cmd_train(args) -> int:
    app = load_app_config(args.config)
    tc = app.training if args.kind is None else replace(app.training, kind=args.kind)
    r_cav, r_hdv = load_buffers(args.buffers)
    out = Path(args.out)
    manifest = _write_manifest(out, args, tc.seed, {"kind": tc.kind})
    result = train_models(r_cav, r_hdv, tc)
    save_checkpoint(result.cav, out / "f_cav.json")
    save_checkpoint(result.hdv, out / "f_hdv.json")
    with open(out / "metrics.json", "w") as fh:
        json.dump(result.metrics, fh, indent=2, sort_keys=True)
    _finish_manifest(out, manifest)
    for name in ("cav", "hdv"):
        m = result.metrics[name]
        print(
            f"{name}: holdout mse {m['holdout_mse']:.3e}, "
            f"position rmse ({m['position_rmse_x']:.3e}, {m['position_rmse_y']:.3e}) m"
        )
    return 0


def _fmt_ttc(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.3f}"


def cmd_eval(args) -> int:
    app = load_app_config(args.config)
    seed = _resolve_seed(args, app)
    models = _load_models(args.models)
    speed = args.speed if args.speed is not None else app.scenario.mean_initial_speed
    n = args.n if args.n is not None else app.planner.num_trajectories
    h = args.horizon if args.horizon is not None else app.planner.horizon
    config = replace(app.scenario, mean_initial_speed=speed)
    planner_cfg = replace(app.planner, num_trajectories=n, horizon=h)
    if args.traces:
        Path(args.traces).mkdir(parents=True, exist_ok=True)

    successes = 0
    min_ttcs = []
    for run in range(args.runs):
        rng = episode_rng(seed, speed, n, h, run)
        result = run_episode(config, models, planner_cfg, app.ttc, rng)
        successes += int(result.success)
        min_ttcs.append(result.min_ttc_observed)
        if args.traces:
            from .world import write_trace

            path = Path(args.traces) / f"{speed!r}_{n}_{h}_{run}.csv"
            write_trace(path, config, result.trace, result.ego_commands)
    print(f"{successes}/{args.runs} successes (speed {speed} m/s, n {n}, h {h})")
    if min_ttcs:
        print(
            f"min TTC over episodes: worst {_fmt_ttc(min(min_ttcs))} s, "
            f"median {_fmt_ttc(sorted(min_ttcs)[len(min_ttcs) // 2])} s"
        )
    return 0


def cmd_sweep(args) -> int:
    app = load_app_config(args.config)
    models = _load_models(args.models)
    spec = load_sweep_spec(args.spec) if args.spec else SweepSpec()
    if args.seed is not None:
        spec = replace(spec, base_seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = evaluate_sweep(
        spec, app.scenario, models, app.ttc,
        base_planner=app.planner, traces_dir=args.traces, jobs=args.jobs,
    )
    write_sweep_csv(out, rows)
    for speed in sorted(spec.speeds):
        cell = max(
            (r for r in rows if r["speed"] == speed),
            key=lambda r: (r["success_rate"], -r["n"], -r["h"]),
        )
        print(
            f"speed {speed} m/s: best (n={cell['n']}, h={cell['h']}) "
            f"at {cell['successes']}/{cell['runs']}"
        )
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def _world_from_rows(rows_by_role: dict, tick: int, radii: dict, obstacles) -> WorldState:
    vehicles = []
    for role in Role:
        if role not in rows_by_role:
            continue
        r = rows_by_role[role]
        vehicles.append(
            (
                role,
                VehicleState(
                    position=Vec2(r["x"], r["y"]),
                    velocity=Vec2(r["vx"], r["vy"]),
                    acceleration=Vec2(r["ax"], r["ay"]),
                    heading=r["heading"],
                    steering_position=r["steering"],
                    radius=radii[role.value],
                ),
            )
        )
    return WorldState(tick=tick, vehicles=tuple(vehicles), obstacles=obstacles)


def cmd_replay(args) -> int:
    app = load_app_config(args.config)
    trace_path = Path(args.trace)
    if not trace_path.exists():
        raise ConfigError(f"missing trace file: {trace_path}")
    ticks = read_trace(trace_path)
    config = app.scenario
    obstacles = roadside_obstacles(config)
    obs_xy = obstacle_array(obstacles)

    collision = None
    min_ttc = float("inf")
    last_world = None
    for t, rows_by_role in enumerate(ticks):
        world = _world_from_rows(rows_by_role, t, config.vehicle_radii, obstacles)
        min_ttc = min(min_ttc, tick_min_ttc(world, obs_xy, app.ttc))
        if collision is None:
            pair = detect_collision(world)
            if pair is not None:
                collision = (t, pair)
        last_world = world

    if collision is not None:
        tick, pair = collision
        print(f"verdict: collision at tick {tick} between {pair[0]} and {pair[1]}")
    else:
        stopped = last_world.ego.speed < 0.1
        print(f"verdict: success ({'full_stop' if stopped else 'max_steps'})")
    print(f"ticks: {len(ticks)}, min TTC observed: {_fmt_ttc(min_ttc)} s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttcshield",
        description="Cut-in crash avoidance: data collection, model training, "
        "MPC evaluation, parameter sweeps and trace auditing.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="run warm-up episodes and store replay buffers")
    p.add_argument("--config", default=None)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="fit predictors from stored buffers")
    p.add_argument("--buffers", required=True)
    p.add_argument("--kind", choices=("linear", "mlp3"), default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run planner-controlled episodes")
    p.add_argument("--config", default=None)
    p.add_argument("--models", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--speed", type=float, default=None)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--traces", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="success-rate table over speed, n and horizon")
    p.add_argument("--config", default=None)
    p.add_argument("--models", required=True)
    p.add_argument("--spec", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--traces", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="recompute the verdict of a stored trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
