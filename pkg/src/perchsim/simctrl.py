"""Point-mass quadrotor, PID position loop and the perching mission.

The plant is a 3-axis double integrator driven by net acceleration (gravity
and its feed-forward cancel). The mission runs five stages in order:
take-off, planning (perch-point selection + min-snap), tracking, perching and
an optional resume.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from . import planner, statics, vision
from .scene import CameraModel, SceneSpec, corrupt_mask, default_camera, default_scene, render

__all__ = [
    "QuadState",
    "PidGains",
    "PidMemory",
    "GripperState",
    "GripperModel",
    "Stage",
    "MissionStatus",
    "MissionConfig",
    "MissionLog",
    "TrackingStats",
    "step_dynamics",
    "pid_track",
    "run_mission",
    "summarize",
    "InsufficientData",
]

log = logging.getLogger(__name__)

GRAVITY = 9.81


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class QuadState:
    position: np.ndarray
    velocity: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.array(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.array(self.velocity, dtype=float))

    @classmethod
    def at_rest(cls, position, time: float = 0.0) -> "QuadState":
        return cls(position, np.zeros(3), time)


@dataclass(frozen=True)
class PidGains:
    kp: tuple = (8.0, 8.0, 8.0)
    ki: tuple = (0.3, 0.3, 0.3)
    kd: tuple = (5.0, 5.0, 5.0)
    integrator_clamp: float = 0.5
    output_clamp: float = 0.5 * GRAVITY

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            val = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,))
            if np.any(val < 0):
                raise ValueError(f"{name} must be >= 0")
            object.__setattr__(self, name, tuple(float(x) for x in val))
        if not (self.integrator_clamp > 0 and self.output_clamp > 0):
            raise ValueError("clamps must be > 0")


@dataclass
class PidMemory:
    """Integrator state carried between controller calls."""

    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def reset(self) -> None:
        self.integral = np.zeros(3)


def step_dynamics(state: QuadState, accel_cmd, dt: float) -> QuadState:
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    v = state.velocity + np.asarray(accel_cmd, dtype=float) * dt
    p = state.position + v * dt
    return QuadState(p, v, state.time + dt)


def pid_track(ref_pos, ref_vel, ref_acc, state: QuadState, gains: PidGains,
              memory: PidMemory, dt: float = 0.0) -> np.ndarray:
    """``a = a_ref + kp e_p + ki int(e_p) + kd e_v``, clamped per axis.

    ``dt`` advances the integrator before it is used; pass 0 to read the
    controller without integrating.
    """
    e_p = np.asarray(ref_pos, dtype=float) - state.position
    e_v = np.asarray(ref_vel, dtype=float) - state.velocity
    if dt > 0:
        memory.integral = np.clip(memory.integral + e_p * dt,
                                  -gains.integrator_clamp, gains.integrator_clamp)
    cmd = (np.asarray(ref_acc, dtype=float) + np.asarray(gains.kp) * e_p
           + np.asarray(gains.ki) * memory.integral + np.asarray(gains.kd) * e_v)
    return np.clip(cmd, -gains.output_clamp, gains.output_clamp)


class GripperState(str, Enum):
    OPEN = "Open"
    CLOSED = "Closed"


@dataclass
class GripperModel:
    """Tendon gripper: closed is the passive equilibrium, only opening costs
    energy."""

    state: GripperState = GripperState.CLOSED
    actuation_energy_per_open: float = 1.5
    cumulative_energy: float = 0.0
    events: list = field(default_factory=list)

    def open(self, t: float) -> None:
        if self.state is GripperState.CLOSED:
            self.cumulative_energy += self.actuation_energy_per_open
            self.state = GripperState.OPEN
            self._record(t, "open")

    def close(self, t: float) -> None:
        if self.state is GripperState.OPEN:
            self.state = GripperState.CLOSED
            self._record(t, "close")

    def _record(self, t: float, action: str) -> None:
        self.events.append({"t": t, "event": action, "state": self.state.value,
                            "cumulative_energy_J": self.cumulative_energy})


class Stage(str, Enum):
    TAKE_OFF = "TakeOff"
    PLAN = "Plan"
    TRACK = "Track"
    PERCH = "Perch"
    RESUME = "Resume"


STAGE_ORDER = (Stage.TAKE_OFF, Stage.PLAN, Stage.TRACK, Stage.PERCH, Stage.RESUME)


class MissionStatus(str, Enum):
    PERCHED = "Perched"
    SELECTION_FAILED = "SelectionFailed"
    CAPACITY_EXCEEDED = "CapacityExceeded"
    TRIGGER_MISSED = "TriggerMissed"


@dataclass(frozen=True)
class MissionConfig:
    """Mission parameters (SI units).

    ``camera`` supplies intrinsics; its pose is replaced by one attached to
    the vehicle, looking along ``view_direction``. ``selection_distance`` is
    the hover stand-off from the trunk axis.
    """

    scene: SceneSpec = field(default_factory=default_scene)
    camera: CameraModel = field(default_factory=default_camera)
    start_position: tuple = (0.0, -4.0, 0.0)
    hover_height: float = 1.5
    selection_distance: float = 4.0
    view_direction: tuple = (0.0, 1.0, 0.0)
    takeoff_duration: float = 4.0
    hover_settle: float = 1.0
    approach_offset: float = 0.05
    approach_rise: float = 0.4
    avg_speed: float = 0.5
    min_segment_duration: float = 0.5
    perch_trigger_radius: float = 0.05
    trigger_timeout: float = 3.0
    perch_duration: float = 10.0
    resume: bool = True
    control_rate: float = 200.0
    sim_step: float = 5e-4
    gains: PidGains = field(default_factory=PidGains)
    mask_flip_rate: float = 0.0
    min_pixels: int = 20
    max_tilt_deg: float = 30.0
    max_selection_retries: int = 2
    position_noise_std: float = 0.0
    gripper_open_energy: float = 1.5

    def __post_init__(self):
        if not self.perch_trigger_radius > 0:
            raise ValueError("perch_trigger_radius must be > 0")
        if not self.control_rate > 0 or not self.sim_step > 0:
            raise ValueError("control_rate and sim_step must be > 0")
        if not self.sim_step < 1.0 / self.control_rate:
            raise ValueError("sim_step must be shorter than the control period")

    @property
    def hover_position(self) -> np.ndarray:
        d = np.asarray(self.view_direction, dtype=float)
        d = d / np.linalg.norm(d)
        t = self.scene.trunk
        axis = t.origin[:2]
        pos = axis - self.selection_distance * d[:2]
        return np.array([pos[0], pos[1], self.hover_height])


@dataclass
class MissionLog:
    """Control-rate samples plus stage and gripper events."""

    times: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    refs: list = field(default_factory=list)
    actuals: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    events: list = field(default_factory=list)
    gripper_events: list = field(default_factory=list)
    status: Optional[MissionStatus] = None
    perch_point: Optional[np.ndarray] = None
    branch_diameter: Optional[float] = None
    capacity: Optional[float] = None
    platform_weight: Optional[float] = None
    trajectory: Optional[planner.Trajectory] = None

    def append(self, t, stage, ref, act, energy) -> None:
        self.times.append(float(t))
        self.stages.append(stage)
        self.refs.append(np.array(ref, dtype=float))
        self.actuals.append(np.array(act, dtype=float))
        self.energy.append(float(energy))

    def event(self, t: float, name: str, **detail) -> None:
        self.events.append({"t": float(t), "event": name, **detail})

    def stage_sequence(self) -> list:
        seq = []
        for s in self.stages:
            if not seq or seq[-1] != s:
                seq.append(s)
        return seq

    def arrays(self, stage: Optional[Stage] = None):
        mask = np.array([stage is None or s == stage for s in self.stages], dtype=bool)
        t = np.array(self.times)[mask]
        ref = np.array(self.refs).reshape(-1, 3)[mask]
        act = np.array(self.actuals).reshape(-1, 3)[mask]
        return t, ref, act

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "stage", "ref_x", "ref_y", "ref_z", "act_x", "act_y", "act_z"])
        for t, s, r, a in zip(self.times, self.stages, self.refs, self.actuals):
            w.writerow([repr(t), s.value] + [repr(float(x)) for x in r] + [repr(float(x)) for x in a])
        return buf.getvalue()


class _Sim:
    """Fixed-step loop: control at ``control_rate``, plant at ``sim_step``."""

    def __init__(self, cfg: MissionConfig, state: QuadState, log_: MissionLog,
                 gripper: GripperModel, rng: np.random.Generator):
        self.cfg = cfg
        self.state = state
        self.log = log_
        self.gripper = gripper
        self.rng = rng
        self.memory = PidMemory()
        self.substeps = max(1, int(round(1.0 / (cfg.control_rate * cfg.sim_step))))
        self.dt = 1.0 / (cfg.control_rate * self.substeps)
        self.tick = 0

    @property
    def t(self) -> float:
        return self.tick / self.cfg.control_rate

    def control_step(self, stage: Stage, ref_pos, ref_vel, ref_acc) -> None:
        measured = self.state
        if self.cfg.position_noise_std > 0:
            noise = self.rng.normal(0.0, self.cfg.position_noise_std, 3)
            measured = replace(self.state, position=self.state.position + noise)
        cmd = pid_track(ref_pos, ref_vel, ref_acc, measured, self.cfg.gains,
                        self.memory, 1.0 / self.cfg.control_rate)
        self.log.append(self.t, stage, ref_pos, self.state.position,
                        self.gripper.cumulative_energy)
        for _ in range(self.substeps):
            self.state = step_dynamics(self.state, cmd, self.dt)
        self.tick += 1
        self.state = replace(self.state, time=self.t)

    def follow(self, stage: Stage, traj: planner.Trajectory, stop=None) -> bool:
        """Track ``traj``; returns True if ``stop(state)`` fired."""
        t0, T = self.t, traj.total_duration
        while self.t - t0 <= T:
            tt = self.t - t0
            ref = [planner.evaluate(traj, tt, k) for k in range(3)]
            if stop is not None and stop(self.state):
                return True
            self.control_step(stage, *ref)
        return False

    def hold(self, stage: Stage, position, duration: float, stop=None) -> bool:
        end = self.t + duration
        zero = np.zeros(3)
        while self.t < end:
            if stop is not None and stop(self.state):
                return True
            self.control_step(stage, position, zero, zero)
        return False

    def frozen(self, stage: Stage, duration: float) -> None:
        """Motors off, vehicle rigidly hanging from the branch."""
        end = self.t + duration
        pos = self.state.position.copy()
        while self.t < end:
            self.log.append(self.t, stage, pos, pos, self.gripper.cumulative_energy)
            self.tick += 1
        self.state = QuadState(pos, np.zeros(3), self.t)


def _nearest_branch(scene: SceneSpec, point: np.ndarray) -> int:
    best, best_d = 0, np.inf
    for i, br in enumerate(scene.branches):
        d = abs(float(br.surface_distance(point)))
        if d < best_d:
            best, best_d = i, d
    return best


def run_mission(config: MissionConfig, mech: statics.MechanismSpec,
                seed: int = 0) -> MissionLog:
    """Fly take-off, selection, approach and perch; see :class:`MissionStatus`
    for the possible outcomes recorded in ``log.status``."""
    cfg = config
    rng = np.random.default_rng(seed)
    mlog = MissionLog(platform_weight=mech.platform_weight)
    gripper = GripperModel(actuation_energy_per_open=cfg.gripper_open_energy)
    mlog.gripper_events = gripper.events
    sim = _Sim(cfg, QuadState.at_rest(cfg.start_position), mlog, gripper, rng)
    hover = cfg.hover_position
    mlog.event(0.0, "stage", stage=Stage.TAKE_OFF.value)

    takeoff = planner.plan_single(planner.BoundaryState(cfg.start_position),
                                  planner.BoundaryState(hover), cfg.takeoff_duration)
    sim.follow(Stage.TAKE_OFF, planner.Trajectory([takeoff], [cfg.start_position, hover]))
    sim.hold(Stage.TAKE_OFF, hover, cfg.hover_settle)

    mlog.event(sim.t, "stage", stage=Stage.PLAN.value)
    perch = None
    for attempt in range(cfg.max_selection_retries + 1):
        eye = sim.state.position
        cam = cfg.camera.with_pose(eye, eye + np.asarray(cfg.view_direction, dtype=float))
        view = corrupt_mask(render(cfg.scene, cam), cfg.mask_flip_rate,
                            seed + attempt)
        blobs = vision.extract_components(view, cfg.min_pixels)
        try:
            perch = vision.select_perch_point(blobs, view, cam, cfg.max_tilt_deg)
            break
        except vision.SelectionError as exc:
            mlog.event(sim.t, "selection_failed", attempt=attempt, reason=type(exc).__name__)
            sim.hold(Stage.PLAN, hover, 1.0 / cfg.control_rate)
    if perch is None:
        mlog.status = MissionStatus.SELECTION_FAILED
        sim.hold(Stage.PLAN, hover, cfg.hover_settle)
        return mlog
    mlog.perch_point = perch.position
    mlog.event(sim.t, "perch_point", position=[float(x) for x in perch.position],
               confidence=perch.confidence)

    approach = perch.position - np.array([0.0, 0.0, cfg.approach_offset])
    below = approach - np.array([0.0, 0.0, cfg.approach_rise])
    points = [sim.state.position, below, approach]
    durations = planner.allocate_times(points, cfg.avg_speed, cfg.min_segment_duration)
    traj = planner.plan_waypoints(planner.BoundaryState(sim.state.position),
                                  planner.BoundaryState(approach), [below], durations)
    mlog.trajectory = traj
    gripper.open(sim.t)
    # one control tick of planning latency
    sim.hold(Stage.PLAN, sim.state.position, 1.0 / cfg.control_rate)

    mlog.event(sim.t, "stage", stage=Stage.TRACK.value)
    sim.memory.reset()
    within = lambda s: np.linalg.norm(s.position - approach) <= cfg.perch_trigger_radius
    reached = sim.follow(Stage.TRACK, traj, stop=within)
    if not reached:
        reached = sim.hold(Stage.TRACK, approach, cfg.trigger_timeout, stop=within)
    if not reached:
        mlog.status = MissionStatus.TRIGGER_MISSED
        mlog.event(sim.t, "trigger_missed")
        return mlog

    mlog.event(sim.t, "stage", stage=Stage.PERCH.value)
    gripper.close(sim.t)
    index = _nearest_branch(cfg.scene, perch.position)
    diameter = 2.0 * cfg.scene.branches[index].radius
    mlog.branch_diameter = diameter
    try:
        capacity = statics.payload_capacity(mech, statics.BranchSpec(diameter, mech.platform_weight))
    except statics.StaticsError as exc:
        capacity = None
        mlog.event(sim.t, "capacity_error", reason=type(exc).__name__, detail=str(exc))
    mlog.capacity = capacity
    if capacity is None or capacity < mech.platform_weight:
        mlog.status = MissionStatus.CAPACITY_EXCEEDED
        mlog.event(sim.t, "perch_failed", capacity_N=capacity)
        gripper.open(sim.t)
        sim.hold(Stage.PERCH, sim.state.position, cfg.hover_settle)
        return mlog

    mlog.status = MissionStatus.PERCHED
    mlog.event(sim.t, "perched", capacity_N=capacity)
    sim.frozen(Stage.PERCH, cfg.perch_duration)

    if cfg.resume:
        mlog.event(sim.t, "stage", stage=Stage.RESUME.value)
        gripper.open(sim.t)
        sim.memory.reset()
        back = planner.plan_single(planner.BoundaryState(sim.state.position),
                                   planner.BoundaryState(hover),
                                   planner.allocate_times([sim.state.position, hover],
                                                          cfg.avg_speed,
                                                          cfg.min_segment_duration)[0])
        sim.follow(Stage.RESUME, planner.Trajectory([back], [sim.state.position, hover]))
    return mlog


@dataclass(frozen=True)
class TrackingStats:
    axis_mean: np.ndarray
    axis_std: np.ndarray
    mean_3d: float
    std_3d: float
    samples: int

    def to_dict(self) -> dict:
        """Position tracking error laid out as Axis -> Mean/STD (m)."""
        table = {axis: {"mean_m": float(m), "std_m": float(s)}
                 for axis, m, s in zip("XYZ", self.axis_mean, self.axis_std)}
        table["3D Position"] = {"mean_m": self.mean_3d, "std_m": self.std_3d}
        return {"position_tracking_error": table, "samples": self.samples}


def summarize(mlog: MissionLog, stage: Stage = Stage.TRACK) -> TrackingStats:
    _, ref, act = mlog.arrays(stage)
    if len(ref) < 2:
        raise InsufficientData(f"need >= 2 {stage.value} samples, have {len(ref)}")
    err = np.abs(ref - act)
    norm = np.linalg.norm(ref - act, axis=1)
    return TrackingStats(err.mean(axis=0), err.std(axis=0), float(norm.mean()),
                         float(norm.std()), len(ref))
