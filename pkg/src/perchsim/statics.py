"""Static grasp model for the tendon-driven perching gripper.

Two load paths are modelled:

* Small and medium branches: the claw hangs on the branch and the holding
  force is limited by the claw's material strength (curved-beam formula).
* Large branches: the arm wraps the branch and holds the platform through
  friction. The arm is reduced to a symmetric 2D chain of straight segments,
  each tangent to the branch circle, and the contact forces are found by
  moment equilibrium about each elastic joint, working from the claw down.

Frame for the half-arm solution: branch centre at the origin, +y up, the base
segment tangent to the circle at ``(0, -radius)``. The right half-arm
(``side=+1``) wraps counter-clockwise, the left half (``side=-1``) is its
mirror image in x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Regime",
    "StaticsError",
    "GeometryError",
    "OutOfRangeError",
    "DiameterTooSmall",
    "DiameterTooLarge",
    "NoContactConfiguration",
    "NegativeNormalForce",
    "ClawGeometry",
    "JointSpec",
    "ArmChain",
    "BranchSpec",
    "MechanismSpec",
    "ContactSolution",
    "SweepRow",
    "claw_strength",
    "classify_regime",
    "solve_tangent_chain",
    "cascade_equilibrium",
    "analyze_large_branch",
    "payload_capacity",
    "capacity_sweep",
    "crossover_diameter",
    "default_mechanism",
]


class Regime(str, Enum):
    CLAW_HANG = "ClawHang"
    MEDIUM_WRAP = "MediumWrap"
    LARGE_FULL_CONTACT = "LargeFullContact"


class StaticsError(Exception):
    pass


class GeometryError(StaticsError, ValueError):
    """Non-physical claw cross-section or chain dimensions."""


class OutOfRangeError(StaticsError, ValueError):
    def __init__(self, diameter: float, bound: float, message: str):
        super().__init__(message)
        self.diameter = diameter
        self.bound = bound


class DiameterTooSmall(OutOfRangeError):
    pass


class DiameterTooLarge(OutOfRangeError):
    pass


class NoContactConfiguration(StaticsError):
    """The chain cannot be laid tangent around the branch circle."""


class NegativeNormalForce(StaticsError):
    def __init__(self, contact: int, value: float):
        super().__init__(
            f"contact {contact} would need a tensile normal force ({value:.6g} N)"
        )
        self.contact = contact
        self.value = value


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ClawGeometry:
    """Curved-beam cross-section of the claw near its tip (SI units)."""

    sigma_uts: float
    area: float
    neutral_axis_R: float
    stress_radius_r: float
    centroid_radius_rbar: float
    moment_arm_L: float
    claw_curvature_diameter: float

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.sigma_uts >= 0:
            raise GeometryError(f"sigma_uts must be >= 0, got {self.sigma_uts}")
        for name in ("area", "neutral_axis_R", "stress_radius_r",
                     "centroid_radius_rbar", "moment_arm_L",
                     "claw_curvature_diameter"):
            value = getattr(self, name)
            if not value > 0:
                raise GeometryError(f"{name} must be > 0, got {value}")
        # neutral axis sits between the stressed fibre and the centroid
        if not self.stress_radius_r < self.neutral_axis_R:
            raise GeometryError("stress_radius_r must be < neutral_axis_R")
        if not self.neutral_axis_R < self.centroid_radius_rbar:
            raise GeometryError("neutral_axis_R must be < centroid_radius_rbar")


@dataclass(frozen=True)
class JointSpec:
    """Elastic joint. ``rest_angle`` is the interior angle between the two
    segments in the closed (unloaded) state; ``max_angle`` is the largest
    interior angle the joint can open to."""

    stiffness_k: float
    rest_angle: float
    max_angle: float = math.radians(170.0)

    def __post_init__(self):
        if not self.stiffness_k > 0:
            raise GeometryError(f"stiffness_k must be > 0, got {self.stiffness_k}")
        if not 0 < self.rest_angle < math.pi:
            raise GeometryError(f"rest_angle must be in (0, pi), got {self.rest_angle}")
        if not self.rest_angle < self.max_angle <= math.pi:
            raise GeometryError("max_angle must be in (rest_angle, pi]")


@dataclass(frozen=True)
class ArmChain:
    """One half-arm, base to claw.

    ``segment_lengths[0]`` is the half-width of the base plate (symmetry plane
    to the first joint); the last segment is the claw. ``friction_mu[i]`` is the
    friction coefficient of segment ``i + 1`` against bark.

    The three clearance diameters set the regime boundaries together with the
    claw curvature diameter.
    """

    segment_lengths: tuple
    joints: tuple
    friction_mu: tuple
    min_clearance: float = 0.030
    base_contact_clearance: float = 0.080
    max_open_clearance: float = 0.110

    def __post_init__(self):
        object.__setattr__(self, "segment_lengths", tuple(float(s) for s in self.segment_lengths))
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "friction_mu", tuple(float(m) for m in self.friction_mu))
        if len(self.segment_lengths) < 3:
            raise GeometryError("an arm needs at least 3 segments")
        if any(not s > 0 for s in self.segment_lengths):
            raise GeometryError("segment lengths must be > 0")
        if len(self.joints) != len(self.segment_lengths) - 1:
            raise GeometryError("need exactly one joint between consecutive segments")
        if len(self.friction_mu) != len(self.joints):
            raise GeometryError("need one friction coefficient per contacting segment")
        if any(not 0 < m <= 2 for m in self.friction_mu):
            raise GeometryError("friction coefficients must lie in (0, 2]")
        if not 0 < self.min_clearance < self.base_contact_clearance < self.max_open_clearance:
            raise GeometryError("clearances must satisfy 0 < min < base_contact < max_open")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def scaled_stiffness(self, alpha: float) -> "ArmChain":
        joints = tuple(replace(j, stiffness_k=j.stiffness_k * alpha) for j in self.joints)
        return replace(self, joints=joints)


@dataclass(frozen=True)
class BranchSpec:
    diameter: float
    weight_to_hold: float = 0.0

    def __post_init__(self):
        if not self.diameter > 0:
            raise GeometryError(f"diameter must be > 0, got {self.diameter}")
        if not self.weight_to_hold >= 0:
            raise GeometryError("weight_to_hold must be >= 0")


@dataclass(frozen=True)
class MechanismSpec:
    claw: ClawGeometry
    chain: ArmChain
    platform_weight: float = 14.7
    # claw tip catching bark cracks on large branches; off by default
    bark_interlock: bool = False


@dataclass(frozen=True)
class ContactSolution:
    """Half-arm contact state for one branch diameter.

    Arrays are indexed by distal segment ``i = 0..n-1`` (segment ``i + 1`` of
    the chain, joint ``i`` is its proximal hinge). ``lever_vectors[i, j]`` is
    the vector from joint ``j`` to contact ``i`` (zero for ``i < j``).
    Force fields stay ``None`` until :func:`cascade_equilibrium` fills them.
    """

    regime: Regime
    side: int
    radius: float
    contact_points: np.ndarray
    contact_angles: np.ndarray
    joint_points: np.ndarray
    tangent_lengths: np.ndarray
    delta_thetas: np.ndarray
    lever_vectors: np.ndarray
    joint_moments: Optional[np.ndarray] = None
    normal_forces: Optional[np.ndarray] = None
    friction_forces: Optional[np.ndarray] = None
    in_contact: Optional[np.ndarray] = None
    base_reaction: Optional[float] = None
    vertical_support: Optional[float] = None
    capacity: Optional[float] = None

    @property
    def normals(self) -> np.ndarray:
        """Unit normals at the contacts, pointing from the branch into the arm."""
        return self.contact_points / self.radius

    @property
    def friction_directions(self) -> np.ndarray:
        """Unit tangents along which friction acts on the arm (upward)."""
        n = self.normals
        return np.column_stack([-n[:, 1], n[:, 0]]) * self.side

    def contact_forces(self) -> np.ndarray:
        """Total force (normal + friction) exerted by the branch on each segment."""
        if self.normal_forces is None:
            raise StaticsError("forces not solved yet")
        return (self.normal_forces[:, None] * self.normals
                + self.friction_forces[:, None] * self.friction_directions)


@dataclass(frozen=True)
class SweepRow:
    diameter: float
    capacity: Optional[float]
    regime: Optional[Regime]
    note: str = ""


def claw_strength(geom: ClawGeometry) -> float:
    """Maximum load the claw carries before the stressed fibre reaches UTS.

    ``F = sigma * A * r * (rbar - R) / ((R - r) * L)``
    """
    geom.validate()
    num = geom.sigma_uts * geom.area * geom.stress_radius_r * (
        geom.centroid_radius_rbar - geom.neutral_axis_R)
    den = (geom.neutral_axis_R - geom.stress_radius_r) * geom.moment_arm_L
    return num / den


def classify_regime(diameter: float, chain: ArmChain, claw: ClawGeometry) -> Regime:
    """Map a branch diameter to the interaction regime.

    Ranges are half-open ``[lo, hi)`` except the last, which includes its
    upper clearance.
    """
    if not diameter >= chain.min_clearance:
        raise DiameterTooSmall(diameter, chain.min_clearance,
                               f"diameter {diameter} m below minimum {chain.min_clearance} m")
    if diameter > chain.max_open_clearance:
        raise DiameterTooLarge(diameter, chain.max_open_clearance,
                               f"diameter {diameter} m above open clearance "
                               f"{chain.max_open_clearance} m")
    if diameter < claw.claw_curvature_diameter:
        return Regime.CLAW_HANG
    if diameter < chain.base_contact_clearance:
        return Regime.MEDIUM_WRAP
    return Regime.LARGE_FULL_CONTACT


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def solve_tangent_chain(chain: ArmChain, branch: BranchSpec, side: int = 1) -> ContactSolution:
    """Lay the half-arm around the branch with every segment tangent to it.

    The two tangent lengths from a joint to the circle are equal, so the
    distance from joint ``j`` to its distal tangency point is fixed by the
    segment lengths alone: ``b_1 = s_0`` and ``b_{j+1} = s_j - b_j``. Each
    joint then turns the chain by ``2 atan(b_j / radius)``.
    """
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    rho = 0.5 * branch.diameter
    s = chain.segment_lengths
    n = chain.n_joints

    b = np.empty(n)
    b[0] = s[0]
    for j in range(1, n):
        b[j] = s[j] - b[j - 1]
    if np.any(b <= 0):
        raise NoContactConfiguration(
            "a segment is shorter than the tangent length it must cover; "
            "its tangency point would fall past the next joint")
    if b[-1] > s[-1]:
        raise NoContactConfiguration("claw too short to reach its tangency point")

    turn = 2.0 * np.arctan(b / rho)
    interior = math.pi - turn
    alphas = np.cumsum(turn)
    if alphas[-1] >= math.pi:
        raise NoContactConfiguration(
            f"branch diameter {branch.diameter} m too small: the claws would cross "
            "over the top of the branch")
    for j, joint in enumerate(chain.joints):
        if interior[j] > joint.max_angle:
            raise NoContactConfiguration(
                f"branch diameter {branch.diameter} m too large: joint {j} would have "
                f"to open to {math.degrees(interior[j]):.1f} deg")

    prev = np.concatenate([[0.0], alphas[:-1]])
    # tangency on the previous segment, then walk b_j along its tangent
    prev_pts = rho * np.column_stack([np.sin(prev), -np.cos(prev)])
    prev_tan = np.column_stack([np.cos(prev), np.sin(prev)])
    joints = prev_pts + b[:, None] * prev_tan
    contacts = rho * np.column_stack([np.sin(alphas), -np.cos(alphas)])

    mirror = np.array([side, 1.0])
    joints = joints * mirror
    contacts = contacts * mirror

    levers = np.zeros((n, n, 2))
    for i in range(n):
        for j in range(i + 1):
            levers[i, j] = contacts[i] - joints[j]

    rest = np.array([jt.rest_angle for jt in chain.joints])
    return ContactSolution(
        regime=Regime.LARGE_FULL_CONTACT,
        side=side,
        radius=rho,
        contact_points=_frozen(contacts),
        contact_angles=_frozen(alphas),
        joint_points=_frozen(joints),
        tangent_lengths=_frozen(b),
        delta_thetas=_frozen(interior - rest),
        lever_vectors=_frozen(levers),
    )


def cascade_equilibrium(solution: ContactSolution, chain: ArmChain,
                        drop_on_tension: bool = True) -> ContactSolution:
    """Fill in contact forces by moment balance, claw first.

    About joint ``j`` the spring moment ``k_j * dtheta_j`` must balance the
    moments of every contact force distal to the joint. Friction at the
    joint's own segment acts along the segment and has no moment there, so
    each balance has one unknown normal force.

    A contact that would need tension is released (zero force) and the joint
    then carries only the moment transmitted from distal contacts; with
    ``drop_on_tension=False`` :class:`NegativeNormalForce` is raised instead.
    """
    n = chain.n_joints
    k = np.array([jt.stiffness_k for jt in chain.joints])
    mu = np.array(chain.friction_mu)
    moments = k * np.asarray(solution.delta_thetas)
    normals = solution.normals
    tangents = solution.friction_directions
    levers = solution.lever_vectors
    side = solution.side

    N = np.zeros(n)
    forces = np.zeros((n, 2))
    active = np.ones(n, dtype=bool)
    for j in range(n - 1, -1, -1):
        distal = float(np.sum(_cross(levers[j + 1:, j], forces[j + 1:])))
        own = float(_cross(levers[j, j], normals[j] + mu[j] * tangents[j]))
        value = -(side * moments[j] + distal) / own
        if value < 0:
            if not drop_on_tension:
                raise NegativeNormalForce(j, value)
            active[j] = False
            moments[j] = -side * distal
            value = 0.0
        N[j] = value
        forces[j] = N[j] * normals[j] + mu[j] * N[j] * tangents[j]

    f = mu * N
    normal_lift = 2.0 * float(np.dot(N, normals[:, 1]))
    friction_lift = 2.0 * float(np.dot(f, tangents[:, 1]))
    # squeeze pressing the base onto the branch balances the net normal lift;
    # if the normals pull the arm down instead, the base unloads and the
    # friction has to carry that as well
    base_reaction = max(normal_lift, 0.0)
    support = friction_lift + min(normal_lift, 0.0)
    return replace(
        solution,
        joint_moments=_frozen(moments),
        normal_forces=_frozen(N),
        friction_forces=_frozen(f),
        in_contact=_frozen(active).astype(bool),
        base_reaction=base_reaction,
        vertical_support=support,
        capacity=max(support, 0.0),
    )


def analyze_large_branch(chain: ArmChain, branch: BranchSpec, side: int = 1,
                         drop_on_tension: bool = True) -> ContactSolution:
    return cascade_equilibrium(solve_tangent_chain(chain, branch, side), chain,
                               drop_on_tension=drop_on_tension)


def payload_capacity(spec: MechanismSpec, branch: BranchSpec) -> float:
    """Largest platform weight (N) the gripper holds on ``branch``.

    Claw regimes: both claws share the load, ``2 * claw_strength``.
    Full-contact regime: net vertical friction support of both half-arms,
    plus the claw-tip interlock share when ``bark_interlock`` is enabled.
    """
    regime = classify_regime(branch.diameter, spec.chain, spec.claw)
    if regime is not Regime.LARGE_FULL_CONTACT:
        return 2.0 * claw_strength(spec.claw)
    capacity = analyze_large_branch(spec.chain, branch).capacity
    if spec.bark_interlock:
        demand = max(branch.weight_to_hold - capacity, 0.0)
        capacity += min(claw_strength(spec.claw), demand)
    return capacity


def capacity_sweep(spec: MechanismSpec, d_min: float, d_max: float,
                   steps: int) -> list:
    """Capacity at ``steps`` evenly spaced diameters; unsupported points carry
    ``capacity=None`` and a reason in ``note``."""
    if not d_min < d_max:
        raise ValueError("d_min must be < d_max")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    rows = []
    for d in np.linspace(d_min, d_max, steps):
        d = float(d)
        branch = BranchSpec(d, spec.platform_weight)
        try:
            regime = classify_regime(d, spec.chain, spec.claw)
            cap = payload_capacity(spec, branch)
        except DiameterTooSmall:
            rows.append(SweepRow(d, None, None, "below_range"))
        except DiameterTooLarge:
            rows.append(SweepRow(d, None, None, "above_range"))
        except NoContactConfiguration:
            rows.append(SweepRow(d, None, regime, "no_contact"))
        else:
            rows.append(SweepRow(d, cap, regime, ""))
    return rows


def crossover_diameter(spec: MechanismSpec, rows: Sequence[SweepRow],
                       weight: Optional[float] = None, tol: float = 1e-7) -> Optional[float]:
    """First diameter in a sweep where capacity drops below ``weight``.

    Refined by bisection when the bracketing sweep points share a regime,
    otherwise the first failing sweep point is returned.
    """
    weight = spec.platform_weight if weight is None else weight
    prev = None
    for row in rows:
        if row.capacity is None:
            prev = None
            continue
        if row.capacity < weight:
            if prev is None or prev.regime is not row.regime:
                return row.diameter
            lo, hi = prev.diameter, row.diameter
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if payload_capacity(spec, BranchSpec(mid, weight)) < weight:
                    hi = mid
                else:
                    lo = mid
            return hi
        prev = row
    return None


def default_mechanism() -> MechanismSpec:
    """Shipped calibration; the same numbers live in ``configs/default.json``."""
    from .config import load_mechanism, DEFAULT_CONFIG
    return load_mechanism(DEFAULT_CONFIG["mechanism"])
