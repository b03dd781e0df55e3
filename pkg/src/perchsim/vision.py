"""Perch-point selection from a labelled depth view.

The selection mimics how raptors pick a perch: find the trunk first, then
take the suitable branch nearest to it. "Nearest" is the 3D distance between
blob centres back-projected with their median depth; "suitable" means the
branch's principal axis lies within ``max_tilt_deg`` of horizontal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .scene import CameraModel, Label, RenderedView, SceneSpec, corrupt_mask, render

__all__ = [
    "ComponentBlob",
    "PerchPoint",
    "SelectionError",
    "NoTrunkDetected",
    "NoBranchDetected",
    "extract_components",
    "locate_trunk",
    "select_perch_point",
    "dice_coefficient",
    "iou",
    "LocalizationRow",
    "LocalizationResult",
    "evaluate_localization",
    "camera_facing_trunk",
    "trunk_ground_truth",
]

TIE_TOLERANCE_M = 1e-9
_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class SelectionError(Exception):
    pass


class NoTrunkDetected(SelectionError):
    pass


class NoBranchDetected(SelectionError):
    pass


@dataclass(frozen=True)
class ComponentBlob:
    """One 4-connected region of a single class.

    ``pixels`` is an (N, 2) array of (row, col); ``centroid`` is (u, v), i.e.
    (col, row); ``bbox`` is (row_min, col_min, row_max, col_max) inclusive;
    ``median_depth`` is over pixels with valid (non-zero) depth, 0 if none.
    """

    blob_id: int
    label: Label
    pixels: np.ndarray
    centroid: tuple
    bbox: tuple
    median_depth: float

    @property
    def size(self) -> int:
        return len(self.pixels)

    @property
    def top_left(self) -> tuple:
        return tuple(int(x) for x in self.pixels[0])


@dataclass(frozen=True)
class PerchPoint:
    position: np.ndarray
    source_blob_id: int
    confidence: float
    pixel: tuple
    depth: float
    trunk_centre: np.ndarray


def extract_components(view: RenderedView, min_pixels: int = 1) -> list:
    """Connected Trunk and Branch regions, ordered by class, then size
    (largest first), then raster position of their first pixel."""
    if min_pixels < 1:
        raise ValueError("min_pixels must be >= 1")
    found = []
    for label in (Label.TRUNK, Label.BRANCH):
        mask = view.labels == label
        comp, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
        if n == 0:
            continue
        flat = comp.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(1, n + 2))
        for k in range(n):
            idx = order[bounds[k]:bounds[k + 1]]
            if len(idx) < min_pixels:
                continue
            found.append((label, idx))
    found.sort(key=lambda item: (int(item[0]), -len(item[1]), int(item[1][0])))

    width = view.shape[1]
    depth = view.depth.ravel()
    blobs = []
    for blob_id, (label, idx) in enumerate(found):
        rows, cols = np.divmod(idx, width)
        d = depth[idx]
        valid = d[d > 0]
        blobs.append(ComponentBlob(
            blob_id=blob_id,
            label=Label(label),
            pixels=np.column_stack([rows, cols]),
            centroid=(float(cols.mean()), float(rows.mean())),
            bbox=(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())),
            median_depth=float(np.median(valid)) if len(valid) else 0.0,
        ))
    return blobs


def _valid_pixels(blob: ComponentBlob, view: RenderedView):
    rows, cols = blob.pixels[:, 0], blob.pixels[:, 1]
    d = view.depth[rows, cols]
    keep = d > 0
    return rows[keep], cols[keep], d[keep]


def _blob_centre(blob: ComponentBlob, view: RenderedView, camera: CameraModel):
    """Back-projected centre of the valid-depth pixels at their median depth.
    Returns ``(world_point, (u, v), depth, kept_fraction)`` or ``None``."""
    rows, cols, d = _valid_pixels(blob, view)
    if len(d) == 0:
        return None
    u, v = float(cols.mean()), float(rows.mean())
    depth = float(np.median(d))
    return camera.back_project(u, v, depth), (u, v), depth, len(d) / blob.size


def _rank(blob: ComponentBlob) -> tuple:
    return (-blob.size, blob.top_left)


def locate_trunk(blobs: Sequence[ComponentBlob], view: RenderedView,
                 camera: CameraModel):
    """Largest trunk blob and its back-projected centre."""
    trunks = sorted((b for b in blobs if b.label == Label.TRUNK), key=_rank)
    centre = _blob_centre(trunks[0], view, camera) if trunks else None
    if centre is None:
        raise NoTrunkDetected("no trunk region with valid depth in view")
    return trunks[0], centre[0]


def _tilt_deg(points: np.ndarray) -> float:
    centred = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    axis = vt[0]
    return math.degrees(math.asin(min(1.0, abs(float(axis[2])))))


def select_perch_point(blobs: Sequence[ComponentBlob], view: RenderedView,
                       camera: CameraModel, max_tilt_deg: float = 30.0) -> PerchPoint:
    """Pick the horizontal branch closest to the largest trunk.

    Distances within ``TIE_TOLERANCE_M`` count as equal; ties go to the
    larger blob, then to the blob whose first pixel is higher in the image.
    """
    _, trunk_centre = locate_trunk(blobs, view, camera)

    candidates = []
    for blob in blobs:
        if blob.label != Label.BRANCH:
            continue
        rows, cols, d = _valid_pixels(blob, view)
        if len(d) < 2:
            continue
        pts = camera.back_project(cols.astype(float), rows.astype(float), d)
        if _tilt_deg(pts) > max_tilt_deg:
            continue
        centre = _blob_centre(blob, view, camera)
        candidates.append((float(np.linalg.norm(centre[0] - trunk_centre)), blob, centre))
    if not candidates:
        raise NoBranchDetected("no suitable branch region in view")

    nearest = min(c[0] for c in candidates)
    tied = [c for c in candidates if c[0] - nearest <= TIE_TOLERANCE_M]
    _, blob, (position, pixel, depth, kept) = min(
        tied, key=lambda c: (-c[1].size, c[1].top_left))
    return PerchPoint(position=position, source_blob_id=blob.blob_id,
                      confidence=kept, pixel=pixel, depth=depth,
                      trunk_centre=trunk_centre)


def _class_masks(predicted, truth, label):
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {truth.shape}")
    return predicted == label, truth == label


def dice_coefficient(predicted, truth, label) -> float:
    p, t = _class_masks(predicted, truth, label)
    total = int(p.sum()) + int(t.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, t).sum()) / total


def iou(predicted, truth, label) -> float:
    p, t = _class_masks(predicted, truth, label)
    union = int(np.logical_or(p, t).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(p, t).sum()) / union


def camera_facing_trunk(scene: SceneSpec, camera: CameraModel, distance: float,
                        height: Optional[float] = None,
                        view_direction=(0.0, 1.0, 0.0)) -> CameraModel:
    """Camera ``distance`` metres from the trunk axis, level, looking at it.

    ``height`` defaults to the first branch's attachment height.
    """
    if height is None:
        height = float(scene.branches[0].origin[2]) if scene.branches else float(
            scene.trunk.axis_point(0.5 * scene.trunk.length)[2])
    direction = np.asarray(view_direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    t = scene.trunk
    s = (height - t.origin[2]) / t.direction[2]
    target = t.axis_point(s)
    return camera.with_pose(target - distance * direction, target)


def trunk_ground_truth(scene: SceneSpec, camera: CameraModel) -> np.ndarray:
    """Centre of the visible trunk on its camera-facing surface.

    The visible height range is where the image's vertical field of view
    meets the front of the trunk; assumes a vertical trunk and a level camera.
    """
    t = scene.trunk
    eye = camera.position
    axis_xy = t.origin[:2]
    horiz = axis_xy - eye[:2]
    dist = float(np.linalg.norm(horiz))
    front = dist - t.radius
    up = (camera.cy + 0.5) * front / camera.fy
    down = (camera.height - camera.cy - 0.5) * front / camera.fy
    lo = max(t.origin[2], eye[2] - down)
    hi = min(t.origin[2] + t.length, eye[2] + up)
    z = 0.5 * (lo + hi)
    toward = -horiz / dist
    return np.array([axis_xy[0] + t.radius * toward[0],
                     axis_xy[1] + t.radius * toward[1], z])


@dataclass(frozen=True)
class LocalizationRow:
    distance_m: float
    target: str
    mean_err_m: float
    std_err_m: float
    p25: float
    p50: float
    p75: float
    failures: int


@dataclass(frozen=True)
class LocalizationResult:
    rows: tuple
    errors: dict  # (distance, target) -> list of per-trial errors (nan = failure)

    def row(self, distance: float, target: str) -> LocalizationRow:
        for r in self.rows:
            if r.distance_m == distance and r.target == target:
                return r
        raise KeyError((distance, target))


def _stats(distance, target, errs) -> LocalizationRow:
    errs = np.asarray(errs, dtype=float)
    ok = errs[np.isfinite(errs)]
    failures = int(len(errs) - len(ok))
    if len(ok) == 0:
        nan = float("nan")
        return LocalizationRow(distance, target, nan, nan, nan, nan, nan, failures)
    p25, p50, p75 = (float(x) for x in np.percentile(ok, [25, 50, 75]))
    return LocalizationRow(distance, target, float(ok.mean()), float(ok.std()),
                           p25, p50, p75, failures)


def evaluate_localization(scene: SceneSpec, camera: CameraModel,
                          distances: Sequence[float], trials: int,
                          flip_rate: float, seed: int = 0, min_pixels: int = 20,
                          max_tilt_deg: float = 30.0,
                          height: Optional[float] = None) -> LocalizationResult:
    """Euclidean localization error of trunk centre and perch point.

    Trial ``i`` at every distance corrupts the mask with seed ``seed + i``.
    The branch reference is the midpoint of the first branch's axis outside
    the trunk; the trunk reference comes from :func:`trunk_ground_truth`.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    branch_truth = scene.branch_midpoint(0)
    errors = {}
    rows = []
    for distance in distances:
        distance = float(distance)
        cam = camera_facing_trunk(scene, camera, distance, height)
        clean = render(scene, cam)
        trunk_truth = trunk_ground_truth(scene, cam)
        trunk_err, branch_err = [], []
        for trial in range(trials):
            view = corrupt_mask(clean, flip_rate, seed + trial)
            blobs = extract_components(view, min_pixels)
            try:
                _, trunk_est = locate_trunk(blobs, view, cam)
                trunk_err.append(float(np.linalg.norm(trunk_est - trunk_truth)))
            except SelectionError:
                trunk_err.append(float("nan"))
            try:
                perch = select_perch_point(blobs, view, cam, max_tilt_deg)
                branch_err.append(float(np.linalg.norm(perch.position - branch_truth)))
            except SelectionError:
                branch_err.append(float("nan"))
        errors[(distance, "trunk")] = trunk_err
        errors[(distance, "branch")] = branch_err
        rows.append(_stats(distance, "trunk", trunk_err))
        rows.append(_stats(distance, "branch", branch_err))
    return LocalizationResult(tuple(rows), errors)
