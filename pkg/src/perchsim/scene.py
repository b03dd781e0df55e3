"""Synthetic tree scenes and a pinhole depth camera.

A scene is a vertical trunk plus horizontal branches, all finite cylinders
with flat end caps. :func:`render` casts one ray per pixel centre and returns
z-depth (distance along the optical axis, not along the ray) together with a
class label image.

Camera frame follows the usual vision convention: x right, y down, z forward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "Label",
    "Cylinder",
    "SceneSpec",
    "CameraModel",
    "RenderedView",
    "render",
    "corrupt_mask",
    "save_view",
    "load_view",
    "default_scene",
    "default_camera",
]


class Label(IntEnum):
    BACKGROUND = 0
    TRUNK = 1
    BRANCH = 2


N_CLASSES = len(Label)
_HIT_EPS = 1e-9


def _vec3(v) -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(3)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Cylinder:
    """Finite cylinder: ``origin`` is the centre of the start cap, the axis
    runs ``length`` metres along the unit vector ``direction``."""

    origin: np.ndarray
    direction: np.ndarray
    radius: float
    length: float

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin))
        object.__setattr__(self, "direction", _vec3(self.direction))
        if not self.radius > 0 or not self.length > 0:
            raise ValueError("cylinder radius and length must be > 0")
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("cylinder direction must be a unit vector")

    def __eq__(self, other):
        if not isinstance(other, Cylinder):
            return NotImplemented
        return (np.array_equal(self.origin, other.origin)
                and np.array_equal(self.direction, other.direction)
                and self.radius == other.radius and self.length == other.length)

    __hash__ = None

    def axis_point(self, s: float) -> np.ndarray:
        return self.origin + s * self.direction

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance-like residual of ``points`` (..., 3) to the closed
        cylinder surface (0 on the surface)."""
        w = np.asarray(points, dtype=float) - self.origin
        h = w @ self.direction
        radial = np.linalg.norm(w - h[..., None] * self.direction, axis=-1)
        side = radial - self.radius
        cap = np.maximum(-h, h - self.length)
        outside = np.hypot(np.maximum(side, 0), np.maximum(cap, 0))
        inside = np.minimum(np.maximum(side, cap), 0)
        return outside + inside

    def to_dict(self) -> dict:
        return {"origin": self.origin.tolist(), "direction": self.direction.tolist(),
                "radius": self.radius, "length": self.length}

    @classmethod
    def from_dict(cls, d: dict) -> "Cylinder":
        return cls(d["origin"], d["direction"], float(d["radius"]), float(d["length"]))


@dataclass(frozen=True)
class SceneSpec:
    """World frame is z-up, metres. Branch ``origin`` is its attachment point
    on the trunk axis."""

    trunk: Cylinder
    branches: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        t = self.trunk
        for i, br in enumerate(self.branches):
            w = br.origin - t.origin
            h = float(w @ t.direction)
            off = np.linalg.norm(w - h * t.direction)
            if off > 1e-9 or not -1e-9 <= h <= t.length + 1e-9:
                raise ValueError(f"branch {i} is not attached to the trunk axis")

    @property
    def primitives(self) -> list:
        return [(Label.TRUNK, self.trunk)] + [(Label.BRANCH, b) for b in self.branches]

    def branch_exit_length(self, index: int = 0) -> float:
        """Axial distance from a branch's attachment to where it leaves the trunk."""
        br = self.branches[index]
        d = br.direction
        a = self.trunk.direction
        perp = np.linalg.norm(d - (d @ a) * a)
        if perp < 1e-12:
            return br.length
        return min(self.trunk.radius / perp, br.length)

    def branch_midpoint(self, index: int = 0) -> np.ndarray:
        """Midpoint of the part of the branch axis that sticks out of the trunk."""
        br = self.branches[index]
        s0 = self.branch_exit_length(index)
        return br.axis_point(0.5 * (s0 + br.length))

    def to_dict(self) -> dict:
        return {"trunk": self.trunk.to_dict(),
                "branches": [b.to_dict() for b in self.branches]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(Cylinder.from_dict(d["trunk"]),
                   tuple(Cylinder.from_dict(b) for b in d.get("branches", [])))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera. ``rotation``/``translation`` map world to camera:
    ``X_cam = rotation @ X_world + translation``."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        rot.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", _vec3(self.translation))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be > 0")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0:
            raise ValueError("rotation must be a proper rotation matrix")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), **intrinsics) -> "CameraModel":
        eye = np.asarray(eye, dtype=float)
        forward = np.asarray(target, dtype=float) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=float))
        if np.linalg.norm(right) < 1e-12:
            raise ValueError("up vector is parallel to the viewing direction")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.vstack([right, down, forward])
        return cls(rotation=rot, translation=-rot @ eye, **intrinsics)

    def with_pose(self, eye, target, up=(0.0, 0.0, 1.0)) -> "CameraModel":
        return CameraModel.look_at(eye, target, up, **self.intrinsics())

    def intrinsics(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                    width=self.width, height=self.height)

    @property
    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def camera_to_world(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.translation) @ self.rotation

    def project(self, points):
        """World points (..., 3) to ``(u, v, depth)`` arrays."""
        pc = self.world_to_camera(points)
        z = pc[..., 2]
        return self.fx * pc[..., 0] / z + self.cx, self.fy * pc[..., 1] / z + self.cy, z

    def back_project(self, u, v, depth) -> np.ndarray:
        """Pixel coordinates plus z-depth to world points."""
        u, v, depth = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (u, v, depth)))
        pc = np.stack([(u - self.cx) / self.fx * depth,
                       (v - self.cy) / self.fy * depth,
                       depth], axis=-1)
        return self.camera_to_world(pc)

    def to_dict(self) -> dict:
        d = self.intrinsics()
        d["pose"] = {"rotation": self.rotation.tolist(),
                     "translation": self.translation.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        intr = {k: d[k] for k in ("fx", "fy", "cx", "cy")}
        intr.update(width=int(d["width"]), height=int(d["height"]))
        if "look_at" in d:
            la = d["look_at"]
            return cls.look_at(la["eye"], la["target"], la.get("up", (0, 0, 1)), **intr)
        pose = d.get("pose", {})
        return cls(rotation=pose.get("rotation", np.eye(3)),
                   translation=pose.get("translation", np.zeros(3)), **intr)


@dataclass(frozen=True)
class RenderedView:
    """``depth`` in metres along the optical axis, 0 where nothing was hit;
    ``labels`` holds :class:`Label` values."""

    depth: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        depth = np.array(self.depth, dtype=float)
        labels = np.array(self.labels, dtype=np.uint8)
        if depth.shape != labels.shape or depth.ndim != 2:
            raise ValueError("depth and labels must be 2D images of equal shape")
        depth.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self):
        return self.labels.shape

    def is_consistent(self) -> bool:
        fg = self.labels != Label.BACKGROUND
        return bool(np.all(self.depth[fg] > 0) and np.all(self.depth[~fg] == 0))


def _cylinder_hits(cyl: Cylinder, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Nearest positive ray parameter per ray (inf on miss). ``dirs`` need not
    be normalised; the parameter is in units of ``dirs``."""
    a = cyl.direction
    w = origin - cyl.origin
    wa = float(w @ a)
    da = dirs @ a
    w_perp = w - wa * a
    d_perp = dirs - da[:, None] * a

    A = np.einsum("ij,ij->i", d_perp, d_perp)
    B = d_perp @ w_perp
    C = float(w_perp @ w_perp) - cyl.radius ** 2
    best = np.full(len(dirs), np.inf)

    disc = B * B - A * C
    ok = (disc >= 0) & (A > 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    A_safe = np.where(A > 0, A, 1.0)
    for sign in (-1.0, 1.0):
        t = (-B + sign * sq) / A_safe
        h = wa + t * da
        valid = ok & (t > _HIT_EPS) & (h >= 0) & (h <= cyl.length)
        best = np.where(valid & (t < best), t, best)

    da_safe = np.where(da != 0, da, 1.0)
    for h_cap in (0.0, cyl.length):
        t = (h_cap - wa) / da_safe
        p = w_perp[None, :] + t[:, None] * d_perp
        r2 = np.einsum("ij,ij->i", p, p)
        valid = (da != 0) & (t > _HIT_EPS) & (r2 <= cyl.radius ** 2)
        best = np.where(valid & (t < best), t, best)
    return best


def pixel_rays(camera: CameraModel) -> np.ndarray:
    """Camera-frame ray per pixel centre with unit z component, shape (H*W, 3)."""
    v, u = np.mgrid[0:camera.height, 0:camera.width].astype(float)
    return np.stack([((u - camera.cx) / camera.fx).ravel(),
                     ((v - camera.cy) / camera.fy).ravel(),
                     np.ones(u.size)], axis=1)


def render(scene: SceneSpec, camera: CameraModel) -> RenderedView:
    rays_cam = pixel_rays(camera)
    dirs = rays_cam @ camera.rotation
    origin = camera.position
    depth = np.full(len(dirs), np.inf)
    labels = np.zeros(len(dirs), dtype=np.uint8)
    for label, cyl in scene.primitives:
        t = _cylinder_hits(cyl, origin, dirs)
        closer = t < depth
        depth[closer] = t[closer]
        labels[closer] = label
    # rays have unit camera-z, so the ray parameter is the z-depth
    depth[~np.isfinite(depth)] = 0.0
    shape = (camera.height, camera.width)
    return RenderedView(depth.reshape(shape), labels.reshape(shape))


def corrupt_mask(view: RenderedView, flip_rate: float, seed: int) -> RenderedView:
    """Independently reassign each pixel's label, with probability
    ``flip_rate``, to one of the other classes chosen uniformly. Depth is
    left untouched, so flipped pixels may carry depth holes."""
    if not 0 <= flip_rate < 0.5:
        raise ValueError("flip_rate must be in [0, 0.5)")
    if flip_rate == 0:
        return view
    rng = np.random.default_rng(seed)
    flip = rng.random(view.shape) < flip_rate
    offset = rng.integers(1, N_CLASSES, size=view.shape)
    labels = np.where(flip, (view.labels.astype(int) + offset) % N_CLASSES, view.labels)
    return RenderedView(view.depth, labels.astype(np.uint8))


def _write_pgm(path: Path, image: np.ndarray, maxval: int) -> None:
    h, w = image.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    path.write_bytes(header + image.astype(dtype).tobytes())


def _read_pgm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)


def _depth_scale(max_depth: float) -> float:
    for scale in (1e-4, 1e-3):
        if max_depth <= 65535 * scale:
            return scale
    return max_depth / 65535


def save_view(view: RenderedView, stem, camera: Optional[CameraModel] = None) -> Path:
    """Write ``<stem>_depth.pgm`` (16-bit), ``<stem>_labels.pgm`` (8-bit) and
    the ``<stem>.json`` sidecar; returns the sidecar path.

    Depth is stored as ``round(depth / depth_scale_m)``; the scale is recorded
    in the sidecar.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    scale = _depth_scale(float(view.depth.max(initial=0.0)))
    counts = np.rint(view.depth / scale)
    counts[(view.depth > 0) & (counts == 0)] = 1
    depth_path = stem.with_name(stem.name + "_depth.pgm")
    label_path = stem.with_name(stem.name + "_labels.pgm")
    _write_pgm(depth_path, counts, 65535)
    _write_pgm(label_path, view.labels, 255)
    sidecar = {
        "format": "perchsim-view/1",
        "width": int(view.shape[1]),
        "height": int(view.shape[0]),
        "depth_file": depth_path.name,
        "labels_file": label_path.name,
        "depth_scale_m": scale,
        "depth_convention": "z-depth along optical axis, 0 = no hit",
        "classes": {lab.name.lower(): int(lab) for lab in Label},
    }
    if camera is not None:
        sidecar["camera"] = camera.to_dict()
    json_path = stem.with_suffix(".json") if stem.suffix == "" else stem.with_name(stem.name + ".json")
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return json_path


def load_view(json_path):
    """Read a view written by :func:`save_view`; returns ``(view, camera)``
    where ``camera`` is ``None`` if the sidecar has none."""
    json_path = Path(json_path)
    meta = json.loads(json_path.read_text())
    counts = _read_pgm(json_path.parent / meta["depth_file"])
    labels = _read_pgm(json_path.parent / meta["labels_file"])
    depth = counts.astype(float) * meta["depth_scale_m"]
    camera = CameraModel.from_dict(meta["camera"]) if "camera" in meta else None
    return RenderedView(depth, labels), camera


def default_scene() -> SceneSpec:
    trunk = Cylinder((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 0.10, 3.0)
    branch = Cylinder((0.0, 0.0, 1.8), (1.0, 0.0, 0.0), 0.015, 1.27)
    return SceneSpec(trunk, (branch,))


DEFAULT_INTRINSICS = dict(fx=385.0, fy=385.0, cx=320.0, cy=240.0, width=640, height=480)


def default_camera(eye=(0.0, -4.0, 1.8), target=(0.0, 0.0, 1.8)) -> CameraModel:
    return CameraModel.look_at(eye, target, **DEFAULT_INTRINSICS)
