"""``perchsim`` command-line entry point.

Subcommands read one JSON config (see ``docs/config.md``), write their
artifacts into ``--out`` and report the outcome through the exit code:

    0 success, 2 config error, 3 planner error, 4 selection failure,
    5 capacity exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import planner, simctrl, statics, vision
from .config import ConfigError, load_camera, load_config, load_mechanism, \
    load_mission_config, load_scene
from .scene import corrupt_mask, render, save_view

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PLANNER = 3
EXIT_SELECTION = 4
EXIT_CAPACITY = 5

log = logging.getLogger("perchsim")


def _num(x) -> str:
    """Shortest round-tripping text for a float; empty for missing values."""
    if x is None:
        return ""
    return repr(float(x))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if hasattr(x, "value") and isinstance(getattr(x, "value"), str):
        return x.value
    return x


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def cmd_statics(cfg: dict, out: Path, args) -> int:
    mech = load_mechanism(cfg["mechanism"])
    s = cfg["statics"]
    if not s["d_min"] < s["d_max"]:
        raise ConfigError("d_min must be smaller than d_max", ("statics", "d_min"))
    rows = statics.capacity_sweep(mech, s["d_min"], s["d_max"], s["steps"])
    _write_csv(out / "capacity_sweep.csv", ["diameter_m", "capacity_N", "regime", "note"],
               [[_num(r.diameter), _num(r.capacity),
                 r.regime.value if r.regime is not None else "", r.note] for r in rows])
    cross = statics.crossover_diameter(mech, rows)
    caps = [r.capacity for r in rows if r.capacity is not None]
    summary = {
        "platform_weight_N": mech.platform_weight,
        "claw_strength_N": statics.claw_strength(mech.claw),
        "d_min_m": s["d_min"],
        "d_max_m": s["d_max"],
        "steps": s["steps"],
        "crossover_diameter_m": cross if cross is not None else "none in range",
        "max_capacity_N": max(caps) if caps else None,
        "min_capacity_N": min(caps) if caps else None,
        "unsupported_points": sum(r.capacity is None for r in rows),
    }
    _write_json(out / "statics_summary.json", summary)
    log.info("crossover: %s", summary["crossover_diameter_m"])
    return EXIT_OK


def cmd_select_eval(cfg: dict, out: Path, args) -> int:
    e = cfg["select_eval"]
    scene, camera = load_scene(cfg["scene"]), load_camera(cfg["camera"])
    if not scene.branches:
        raise ConfigError("scene needs at least one branch", ("scene", "branches"))
    result = vision.evaluate_localization(
        scene, camera, e["distances"], e["trials"], e["flip_rate"], seed=args.seed,
        min_pixels=e["min_pixels"], max_tilt_deg=e["max_tilt_deg"], height=e["height"])
    header = ["distance_m", "target", "mean_err_m", "std_err_m", "p25", "p50", "p75",
              "failures"]

    def cell(x):
        return "" if not np.isfinite(x) else _num(x)

    _write_csv(out / "localization_errors.csv", header,
               [[_num(r.distance_m), r.target, cell(r.mean_err_m), cell(r.std_err_m),
                 cell(r.p25), cell(r.p50), cell(r.p75), r.failures] for r in result.rows])
    trials = []
    for (distance, target), errs in result.errors.items():
        for i, err in enumerate(errs):
            trials.append([_num(distance), target, i, args.seed + i, cell(err)])
    _write_csv(out / "localization_trials.csv",
               ["distance_m", "target", "trial", "seed", "err_m"], trials)
    if e["save_views"]:
        for distance in e["distances"]:
            cam = vision.camera_facing_trunk(scene, camera, float(distance), e["height"])
            clean = render(scene, cam)
            for i in range(e["trials"]):
                view = corrupt_mask(clean, e["flip_rate"], args.seed + i)
                save_view(view, out / "views" / f"d{float(distance):g}_t{i}", cam)
    return EXIT_OK


def cmd_plan(cfg: dict, out: Path, args) -> int:
    p = cfg["plan"]
    start = planner.BoundaryState.from_dict(p["start"])
    end = planner.BoundaryState.from_dict(p["end"])
    points = [start.position, *p["waypoints"], end.position]
    if p["durations"] is None:
        durations = planner.allocate_times(points, p["avg_speed"], p["min_segment_duration"])
    else:
        durations = p["durations"]
    with warnings.catch_warnings():
        if args.strict:
            warnings.simplefilter("error", planner.IllConditionedWarning)
        traj = planner.plan_waypoints(start, end, p["waypoints"], durations)
    (out / "trajectory.json").write_text(traj.to_json())

    rate = p["sample_rate"]
    n = int(np.floor(traj.total_duration * rate + 1e-9)) + 1
    times = np.arange(n) / rate
    dims = start.position.shape[0]
    axes = "xyz"[:dims] if dims <= 3 else [f"q{i}" for i in range(dims)]
    units = [("", "m"), ("v", "m_s"), ("a", "m_s2"), ("j", "m_s3"), ("s", "m_s4")]
    header = ["t_s"] + [f"{pre}{ax}_{u}" for pre, u in units for ax in axes]
    rows = []
    for t in times:
        vals = np.concatenate([planner.evaluate(traj, float(t), k) for k in range(5)])
        rows.append([_num(t)] + [_num(v) for v in vals])
    _write_csv(out / "trajectory_samples.csv", header, rows)
    log.info("planned %d segments, %.3f s", len(traj.segments), traj.total_duration)
    return EXIT_OK


def cmd_mission(cfg: dict, out: Path, args) -> int:
    mcfg = load_mission_config(cfg)
    mech = load_mechanism(cfg["mechanism"])
    mlog = simctrl.run_mission(mcfg, mech, seed=args.seed)
    (out / "mission_log.csv").write_text(mlog.to_csv())
    _write_json(out / "gripper_events.json", mlog.gripper_events)
    if mlog.trajectory is not None:
        (out / "mission_trajectory.json").write_text(mlog.trajectory.to_json())

    try:
        tracking = simctrl.summarize(mlog).to_dict()
    except simctrl.InsufficientData:
        tracking = None
    summary = {
        "status": mlog.status,
        "seed": args.seed,
        "stages": mlog.stage_sequence(),
        "duration_s": mlog.times[-1] if mlog.times else 0.0,
        "perch_point_m": mlog.perch_point,
        "branch_diameter_m": mlog.branch_diameter,
        "capacity_N": mlog.capacity,
        "platform_weight_N": mlog.platform_weight,
        "gripper_energy_J": mlog.energy[-1] if mlog.energy else 0.0,
        "tracking": tracking,
        "events": mlog.events,
    }
    _write_json(out / "mission_summary.json", summary)
    log.info("mission status: %s", mlog.status.value)
    return {
        simctrl.MissionStatus.PERCHED: EXIT_OK,
        simctrl.MissionStatus.SELECTION_FAILED: EXIT_SELECTION,
        simctrl.MissionStatus.CAPACITY_EXCEEDED: EXIT_CAPACITY,
        simctrl.MissionStatus.TRIGGER_MISSED: EXIT_PLANNER,
    }[mlog.status]


COMMANDS = {
    "statics": cmd_statics,
    "select-eval": cmd_select_eval,
    "plan": cmd_plan,
    "mission": cmd_mission,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perchsim",
        description="Perching gripper statics, perch selection, min-snap planning "
                    "and mission simulation.")
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=".", help="output directory (created if missing)")
    parser.add_argument("--strict", action="store_true",
                        help="treat ill-conditioned planning as an error")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory not writable: {exc.strerror}",
                              source=str(out)) from None
        return COMMANDS[args.subcommand](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (planner.PlannerError, planner.IllConditionedWarning) as exc:
        print(f"planner error: {exc}", file=sys.stderr)
        return EXIT_PLANNER
    except vision.SelectionError as exc:
        print(f"selection error: {exc}", file=sys.stderr)
        return EXIT_SELECTION


if __name__ == "__main__":
    sys.exit(main())
