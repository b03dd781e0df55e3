"""Minimum-snap trajectories from 7th-order polynomial segments.

Each segment and axis is a degree-7 polynomial. A segment is pinned down by
position, velocity, acceleration and jerk at both of its ends, so a
multi-segment trajectory is parametrised by those four derivatives at every
knot. Endpoint derivatives and interior positions are fixed; the interior
velocity, acceleration and jerk are chosen to minimise the integrated squared
snap. Sharing knot values between neighbouring segments gives continuity of
derivatives 0-3 by construction.

Segments are solved in normalised time ``tau = t / T`` and rescaled, which
keeps the linear systems well conditioned for long segments.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "BoundaryState",
    "PolySegment",
    "Trajectory",
    "PlannerError",
    "IllConditionedWarning",
    "plan_single",
    "plan_waypoints",
    "allocate_times",
    "evaluate",
    "snap_cost",
    "segment_snap_cost",
    "max_acceleration",
]

DEGREE = 7
N_COEFF = DEGREE + 1
N_BC = 4  # position, velocity, acceleration, jerk
SNAP = 4
MAX_DURATION_RATIO = 1e3


class PlannerError(ValueError):
    pass


class IllConditionedWarning(UserWarning):
    pass


def _fact_ratio(k: int, d: int) -> float:
    # k! / (k - d)!
    return float(math.prod(range(k - d + 1, k + 1))) if d <= k else 0.0


def _endpoint_matrix() -> np.ndarray:
    """Map normalised coefficients to derivatives 0..3 at tau = 0 and tau = 1."""
    A = np.zeros((2 * N_BC, N_COEFF))
    for d in range(N_BC):
        A[d, d] = math.factorial(d)
        for k in range(d, N_COEFF):
            A[N_BC + d, k] = _fact_ratio(k, d)
    return A


def _snap_gram() -> np.ndarray:
    """``Q[i, j] = int_0^1 p_i''''(tau) p_j''''(tau) dtau`` for the power basis."""
    Q = np.zeros((N_COEFF, N_COEFF))
    for i in range(SNAP, N_COEFF):
        for j in range(SNAP, N_COEFF):
            Q[i, j] = _fact_ratio(i, SNAP) * _fact_ratio(j, SNAP) / (i + j - 2 * SNAP + 1)
    return Q


_A = _endpoint_matrix()
_A_INV = np.linalg.inv(_A)
_Q = _snap_gram()
# cost of a normalised segment in terms of its endpoint derivatives
_H = _A_INV.T @ _Q @ _A_INV


@dataclass(frozen=True)
class BoundaryState:
    """Per-axis position, velocity, acceleration and jerk."""

    position: np.ndarray
    velocity: Optional[np.ndarray] = None
    acceleration: Optional[np.ndarray] = None
    jerk: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.atleast_1d(np.array(self.position, dtype=float))
        object.__setattr__(self, "position", pos)
        for name in ("velocity", "acceleration", "jerk"):
            val = getattr(self, name)
            arr = np.zeros_like(pos) if val is None else np.atleast_1d(np.array(val, dtype=float))
            if arr.shape != pos.shape:
                raise PlannerError(f"{name} shape {arr.shape} != position shape {pos.shape}")
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(self.derivatives())):
            raise PlannerError("boundary state must be finite")

    @classmethod
    def at_rest(cls, position) -> "BoundaryState":
        return cls(position)

    @property
    def n_axes(self) -> int:
        return len(self.position)

    def derivatives(self) -> np.ndarray:
        """Shape (4, n_axes): rows are position, velocity, acceleration, jerk."""
        return np.vstack([self.position, self.velocity, self.acceleration, self.jerk])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("position", "velocity", "acceleration", "jerk")}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryState":
        return cls(d["position"], d.get("velocity"), d.get("acceleration"), d.get("jerk"))


@dataclass(frozen=True)
class PolySegment:
    """``coefficients[axis, k]`` multiplies ``t**k`` with ``t`` in seconds from
    the segment start."""

    coefficients: np.ndarray
    duration: float

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.ndim != 2 or c.shape[1] != N_COEFF:
            raise PlannerError(f"expected (n_axes, {N_COEFF}) coefficients, got {c.shape}")
        if not self.duration > 0:
            raise PlannerError("segment duration must be > 0")
        c.flags.writeable = False
        object.__setattr__(self, "coefficients", c)

    def derivative(self, t: float, order: int = 0) -> np.ndarray:
        powers = np.array([_fact_ratio(k, order) * t ** (k - order) if k >= order else 0.0
                           for k in range(N_COEFF)])
        return self.coefficients @ powers


@dataclass(frozen=True)
class Trajectory:
    segments: tuple
    waypoints: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        wp = np.array(self.waypoints, dtype=float)
        wp.flags.writeable = False
        object.__setattr__(self, "waypoints", wp)

    @property
    def durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.segments])

    @property
    def total_duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def knot_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    def to_dict(self) -> dict:
        return {
            "format": "perchsim-trajectory/1",
            "degree": DEGREE,
            "segments": [{"duration": s.duration,
                          "coefficients": s.coefficients.tolist()} for s in self.segments],
            "waypoints": self.waypoints.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        segs = [PolySegment(s["coefficients"], float(s["duration"])) for s in d["segments"]]
        return cls(segs, d["waypoints"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _segment_from_knots(d0: np.ndarray, d1: np.ndarray, duration: float) -> np.ndarray:
    """Physical-time coefficients (n_axes, 8) from endpoint derivatives (4, n_axes)."""
    scale = duration ** np.arange(N_BC)
    coeffs = np.empty((d0.shape[1], N_COEFF))
    for axis in range(d0.shape[1]):
        rhs = np.concatenate([d0[:, axis] * scale, d1[:, axis] * scale])
        coeffs[axis] = (_A_INV @ rhs) / duration ** np.arange(N_COEFF)
    return coeffs


def plan_single(start: BoundaryState, end: BoundaryState, duration: float) -> PolySegment:
    """The unique degree-7 polynomial meeting both boundary states."""
    if not duration > 0:
        raise PlannerError("duration must be > 0")
    if start.n_axes != end.n_axes:
        raise PlannerError("start and end have different axis counts")
    return PolySegment(_segment_from_knots(start.derivatives(), end.derivatives(), duration),
                       float(duration))


def _segment_hessian(duration: float) -> np.ndarray:
    """Snap cost of one segment as a quadratic form in its physical endpoint
    derivatives ``[p0, v0, a0, j0, p1, v1, a1, j1]``."""
    scale = np.tile(duration ** np.arange(N_BC), 2)
    return (scale[:, None] * _H * scale[None, :]) / duration ** (2 * SNAP - 1)


def plan_waypoints(start: BoundaryState, end: BoundaryState,
                   waypoints: Sequence, durations: Sequence[float]) -> Trajectory:
    """Minimum-snap trajectory through interior ``waypoints``.

    ``durations`` has one entry per segment (``len(waypoints) + 1``). With no
    interior waypoints this is exactly :func:`plan_single`.
    """
    durations = [float(T) for T in durations]
    interior = np.array(waypoints, dtype=float).reshape(-1, start.n_axes)
    n_seg = len(interior) + 1
    if len(durations) != n_seg:
        raise PlannerError(f"need {n_seg} durations, got {len(durations)}")
    if any(not T > 0 for T in durations):
        raise PlannerError("durations must be > 0")
    if start.n_axes != end.n_axes:
        raise PlannerError("start and end have different axis counts")
    if max(durations) / min(durations) > MAX_DURATION_RATIO:
        warnings.warn(f"segment duration ratio exceeds {MAX_DURATION_RATIO:g}; "
                      "snap-optimal solve may lose accuracy", IllConditionedWarning,
                      stacklevel=2)
    knots_pos = np.vstack([start.position, interior, end.position])
    if n_seg == 1:
        seg = plan_single(start, end, durations[0])
        return Trajectory([seg], knots_pos)

    n_knots = n_seg + 1
    n_var = N_BC * n_knots
    H = np.zeros((n_var, n_var))
    for s, T in enumerate(durations):
        idx = slice(N_BC * s, N_BC * (s + 2))
        H[idx, idx] += _segment_hessian(T)

    fixed = np.zeros(n_var, dtype=bool)
    fixed[:N_BC] = True
    fixed[-N_BC:] = True
    fixed[np.arange(1, n_knots - 1) * N_BC] = True
    free = ~fixed
    H_ff = H[np.ix_(free, free)]
    H_fp = H[np.ix_(free, fixed)]

    knots = np.zeros((n_knots, N_BC, start.n_axes))
    knots[0] = start.derivatives()
    knots[-1] = end.derivatives()
    knots[1:-1, 0] = interior
    # one axis at a time so results do not depend on how many axes are planned
    for axis in range(start.n_axes):
        x = knots[:, :, axis].ravel()
        x[free] = np.linalg.solve(H_ff, -H_fp @ x[fixed])
        knots[:, :, axis] = x.reshape(n_knots, N_BC)

    segments = [PolySegment(_segment_from_knots(knots[s], knots[s + 1], T), T)
                for s, T in enumerate(durations)]
    return Trajectory(segments, knots_pos)


def allocate_times(waypoints: Sequence, avg_speed: float,
                   min_duration: float = 0.5) -> list:
    """Segment durations proportional to straight-line distance."""
    if not avg_speed > 0:
        raise PlannerError("avg_speed must be > 0")
    pts = np.array(waypoints, dtype=float)
    dist = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(dist == 0):
        raise PlannerError("consecutive waypoints must be distinct")
    return [max(float(d) / avg_speed, min_duration) for d in dist]


def _locate(traj: Trajectory, t: float):
    total = traj.total_duration
    if not 0 <= t <= total:
        raise PlannerError(f"time {t} outside [0, {total}]")
    start = 0.0
    for seg in traj.segments:
        # a knot time belongs to the earlier segment
        if t <= start + seg.duration:
            return seg, min(t - start, seg.duration)
        start += seg.duration
    return traj.segments[-1], traj.segments[-1].duration


def evaluate(traj: Trajectory, t: float, order: int = 0) -> np.ndarray:
    """``order``-th derivative (0 = position ... 4 = snap) at time ``t``."""
    if order not in range(5):
        raise PlannerError("order must be in 0..4")
    seg, local = _locate(traj, t)
    return seg.derivative(local, order)


def sample(traj: Trajectory, times: Sequence[float], max_order: int = 4) -> np.ndarray:
    """Array (len(times), max_order + 1, n_axes)."""
    return np.array([[evaluate(traj, t, k) for k in range(max_order + 1)] for t in times])


def segment_snap_cost(seg: PolySegment) -> float:
    """Integrated squared snap summed over axes, from the coefficients."""
    T = seg.duration
    norm = seg.coefficients * T ** np.arange(N_COEFF)
    return float(np.einsum("ai,ij,aj->", norm, _Q, norm)) / T ** (2 * SNAP - 1)


def snap_cost(traj: Trajectory) -> float:
    return sum(segment_snap_cost(s) for s in traj.segments)


def max_acceleration(traj: Trajectory, n_samples: int = 200) -> float:
    """Largest acceleration norm over a uniform sampling (reporting only)."""
    times = np.linspace(0.0, traj.total_duration, n_samples)
    return float(max(np.linalg.norm(evaluate(traj, t, 2)) for t in times))
