"""JSON run configuration: defaults, schema validation and object builders.

A config file is a JSON object with optional sections ``mechanism``,
``statics``, ``scene``, ``camera``, ``select_eval``, ``plan`` and
``mission``. Anything left out takes the default from :data:`DEFAULT_CONFIG`
(dicts merge key by key, lists replace). All quantities are SI; angles are
radians. See ``docs/config.md`` for the field reference.
"""

from __future__ import annotations

import copy
import json
import re
from pathlib import Path
from typing import Any, Optional

import jsonschema

from . import statics
from .scene import CameraModel, SceneSpec

__all__ = ["ConfigError", "DEFAULT_CONFIG", "SCHEMA", "load_config", "parse_config",
           "load_mechanism", "load_scene", "load_camera", "load_mission_config"]


class ConfigError(ValueError):
    """Schema or value error, addressed to a line of the source file."""

    def __init__(self, message: str, path=(), line: Optional[int] = None,
                 source: Optional[str] = None):
        self.path = tuple(path)
        self.line = line
        self.source = source
        where = "/".join(str(p) for p in self.path) or "<root>"
        prefix = f"{source or '<config>'}:{line}: " if line else f"{source or '<config>'}: "
        super().__init__(f"{prefix}{where}: {message}")


DEFAULT_CONFIG: dict = {
    "mechanism": {
        "platform_weight": 14.7,
        "bark_interlock": False,
        "claw": {
            "sigma_uts": 6.5e7,
            "area": 2.0e-5,
            "neutral_axis_R": 5.0e-3,
            "stress_radius_r": 4.0e-3,
            "centroid_radius_rbar": 6.0e-3,
            "moment_arm_L": 2.0e-2,
            "claw_curvature_diameter": 0.050,
        },
        "chain": {
            "segment_lengths": [0.018, 0.037, 0.043, 0.033],
            "joints": [
                {"stiffness_k": 0.2142, "rest_angle": 1.64061, "max_angle": 2.96706},
                {"stiffness_k": 0.2826, "rest_angle": 1.34390, "max_angle": 2.96706},
                {"stiffness_k": 0.2272, "rest_angle": 1.36136, "max_angle": 2.96706},
            ],
            "friction_mu": [0.9, 0.9, 0.6],
            "min_clearance": 0.030,
            "base_contact_clearance": 0.080,
            "max_open_clearance": 0.110,
        },
    },
    "statics": {"d_min": 0.030, "d_max": 0.110, "steps": 81},
    "scene": {
        "trunk": {"origin": [0.0, 0.0, 0.0], "direction": [0.0, 0.0, 1.0],
                  "radius": 0.10, "length": 3.0},
        "branches": [
            {"origin": [0.0, 0.0, 1.8], "direction": [1.0, 0.0, 0.0],
             "radius": 0.015, "length": 1.27},
        ],
    },
    "camera": {"fx": 385.0, "fy": 385.0, "cx": 320.0, "cy": 240.0,
               "width": 640, "height": 480},
    "select_eval": {"distances": [1.0, 4.0, 6.0], "trials": 5, "flip_rate": 0.05,
                    "min_pixels": 20, "max_tilt_deg": 30.0, "height": None,
                    "save_views": False},
    "plan": {
        "start": {"position": [0.0, 0.0, 0.0]},
        "end": {"position": [2.0, 1.0, 1.5]},
        "waypoints": [[1.0, 0.0, 1.0]],
        "durations": None,
        "avg_speed": 0.5,
        "min_segment_duration": 0.5,
        "sample_rate": 100.0,
    },
    "mission": {
        "start_position": [0.0, -4.0, 0.0],
        "hover_height": 1.5,
        "selection_distance": 4.0,
        "view_direction": [0.0, 1.0, 0.0],
        "takeoff_duration": 4.0,
        "hover_settle": 1.0,
        "approach_offset": 0.05,
        "approach_rise": 0.4,
        "avg_speed": 0.5,
        "min_segment_duration": 0.5,
        "perch_trigger_radius": 0.05,
        "trigger_timeout": 3.0,
        "perch_duration": 10.0,
        "resume": True,
        "control_rate": 200.0,
        "sim_step": 0.0005,
        "mask_flip_rate": 0.0,
        "min_pixels": 20,
        "max_tilt_deg": 30.0,
        "max_selection_retries": 2,
        "position_noise_std": 0.0,
        "gripper_open_energy": 1.5,
        "gains": {"kp": [8.0, 8.0, 8.0], "ki": [0.3, 0.3, 0.3], "kd": [5.0, 5.0, 5.0],
                  "integrator_clamp": 0.5, "output_clamp": 4.905},
    },
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_vec = {"type": "array", "items": _num, "minItems": 1}
_gain = {"oneOf": [_nonneg, {"type": "array", "items": _nonneg, "minItems": 3, "maxItems": 3}]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


_cylinder = _obj({"origin": _vec3, "direction": _vec3, "radius": _pos, "length": _pos},
                 ["origin", "direction", "radius", "length"])
_boundary = _obj({"position": _vec, "velocity": _vec, "acceleration": _vec, "jerk": _vec},
                 ["position"])

SCHEMA: dict = _obj({
    "mechanism": _obj({
        "platform_weight": _nonneg,
        "bark_interlock": {"type": "boolean"},
        "claw": _obj({k: (_nonneg if k == "sigma_uts" else _pos) for k in (
            "sigma_uts", "area", "neutral_axis_R", "stress_radius_r",
            "centroid_radius_rbar", "moment_arm_L", "claw_curvature_diameter")}),
        "chain": _obj({
            "segment_lengths": {"type": "array", "items": _pos, "minItems": 3},
            "joints": {"type": "array", "minItems": 2, "items": _obj(
                {"stiffness_k": _pos, "rest_angle": _pos, "max_angle": _pos},
                ["stiffness_k", "rest_angle"])},
            "friction_mu": {"type": "array", "items": _pos, "minItems": 2},
            "min_clearance": _pos,
            "base_contact_clearance": _pos,
            "max_open_clearance": _pos,
        }),
    }),
    "statics": _obj({"d_min": _pos, "d_max": _pos,
                     "steps": {"type": "integer", "minimum": 2}}),
    "scene": _obj({"trunk": _cylinder, "branches": {"type": "array", "items": _cylinder}}),
    "camera": _obj({"fx": _pos, "fy": _pos, "cx": _nonneg, "cy": _nonneg,
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1}}),
    "select_eval": _obj({
        "distances": {"type": "array", "items": _pos, "minItems": 1},
        "trials": {"type": "integer", "minimum": 1},
        "flip_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "min_pixels": {"type": "integer", "minimum": 1},
        "max_tilt_deg": _pos,
        "height": {"type": ["number", "null"]},
        "save_views": {"type": "boolean"},
    }),
    "plan": _obj({
        "start": _boundary, "end": _boundary,
        "waypoints": {"type": "array", "items": _vec},
        "durations": {"oneOf": [{"type": "null"},
                                {"type": "array", "items": _pos, "minItems": 1}]},
        "avg_speed": _pos,
        "min_segment_duration": _pos,
        "sample_rate": _pos,
    }),
    "mission": _obj({
        "start_position": _vec3,
        "hover_height": _num,
        "selection_distance": _pos,
        "view_direction": _vec3,
        "takeoff_duration": _pos,
        "hover_settle": _nonneg,
        "approach_offset": _nonneg,
        "approach_rise": _pos,
        "avg_speed": _pos,
        "min_segment_duration": _pos,
        "perch_trigger_radius": _pos,
        "trigger_timeout": _nonneg,
        "perch_duration": _nonneg,
        "resume": {"type": "boolean"},
        "control_rate": _pos,
        "sim_step": _pos,
        "mask_flip_rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "min_pixels": {"type": "integer", "minimum": 1},
        "max_tilt_deg": _pos,
        "max_selection_retries": {"type": "integer", "minimum": 0},
        "position_noise_std": _nonneg,
        "gripper_open_energy": _nonneg,
        "gains": _obj({"kp": _gain, "ki": _gain, "kd": _gain,
                       "integrator_clamp": _pos, "output_clamp": _pos}),
    }),
})


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _locate_line(text: str, path) -> Optional[int]:
    """Best-effort line number of the value at ``path`` inside ``text``.

    Object keys are searched for in order; array indices keep the parent's
    position, so the line of the enclosing key is reported.
    """
    if text is None:
        return None
    pos = 0
    found = False
    for part in path:
        if isinstance(part, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(part))).search(text, pos)
        if m is None:
            break
        pos = m.start()
        found = True
    if not found:
        return 1
    return text.count("\n", 0, pos) + 1


def parse_config(raw: Any, text: Optional[str] = None, source: Optional[str] = None) -> dict:
    """Validate ``raw`` against :data:`SCHEMA` and merge it over the defaults."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        raise ConfigError(err.message, path, _locate_line(text, path), source)
    cfg = _merge(DEFAULT_CONFIG, raw)
    try:
        load_mechanism(cfg["mechanism"])
        load_scene(cfg["scene"])
        load_camera(cfg["camera"])
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.path,
                          _locate_line(text, exc.path), source) from None
    return cfg


def load_config(path=None) -> dict:
    """Read, validate and default-fill a JSON config file (``None`` = defaults)."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})",
                          line=exc.lineno, source=str(path)) from None
    return parse_config(raw, text, str(path))


def _build(path, factory, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from None


def load_mechanism(d: dict) -> statics.MechanismSpec:
    claw = _build(("mechanism", "claw"), statics.ClawGeometry, **d["claw"])
    ch = d["chain"]
    joints = tuple(_build(("mechanism", "chain", "joints", i), statics.JointSpec, **j)
                   for i, j in enumerate(ch["joints"]))
    extra = {k: ch[k] for k in ("min_clearance", "base_contact_clearance",
                                "max_open_clearance") if k in ch}
    chain = _build(("mechanism", "chain"), statics.ArmChain, ch["segment_lengths"],
                   joints, ch["friction_mu"], **extra)
    if claw.claw_curvature_diameter >= chain.base_contact_clearance or \
            claw.claw_curvature_diameter <= chain.min_clearance:
        raise ConfigError("claw_curvature_diameter must lie between min_clearance and "
                          "base_contact_clearance", ("mechanism", "claw",
                                                     "claw_curvature_diameter"))
    return statics.MechanismSpec(claw, chain, float(d.get("platform_weight", 14.7)),
                                 bool(d.get("bark_interlock", False)))


def load_scene(d: dict) -> SceneSpec:
    return _build(("scene",), SceneSpec.from_dict, d)


def load_camera(d: dict) -> CameraModel:
    return _build(("camera",), CameraModel.from_dict, d)


def load_mission_config(cfg: dict):
    from .simctrl import MissionConfig, PidGains

    m = dict(cfg["mission"])
    gains = _build(("mission", "gains"), PidGains, **m.pop("gains"))
    for key in ("start_position", "view_direction"):
        m[key] = tuple(m[key])
    return _build(("mission",), MissionConfig, scene=load_scene(cfg["scene"]),
                  camera=load_camera(cfg["camera"]), gains=gains, **m)
