"""Scene data model, JSON (de)serialisation and time interpolation of tracks.

All content lives in one local metric frame.  Ego poses (start state,
proposals, expert, rollouts) refer to the rear axle; agent poses refer to
the box centre.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import Polyline, is_simple_polygon, points_in_union

CATEGORIES = ("vehicle", "pedestrian", "bicycle", "static_object")
ROAD_USERS = frozenset({"vehicle", "pedestrian", "bicycle"})
MODES = ("navsim", "bench2drive")
PLANNING_DT = 0.5


class SceneError(ValueError):
    """Base class for scene loading failures."""


class SceneParseError(SceneError):
    pass


class SceneSchemaError(SceneError):
    pass


class SceneValidationError(SceneError):
    pass


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]; values already in range come back unchanged."""
    a = np.asarray(a, dtype=float)
    w = np.where((a > -math.pi) & (a <= math.pi), a, math.pi - np.mod(math.pi - a, 2 * math.pi))
    return float(w) if np.ndim(w) == 0 else w


def _check_heading(h, where):
    if not math.isfinite(h) or not (-math.pi < h <= math.pi):
        raise SceneValidationError(f"{where}: heading {h!r} not finite or outside (-pi, pi]")


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise SceneValidationError(f"pose position not finite: ({self.x}, {self.y})")
        _check_heading(self.heading, "pose")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading])


@dataclass(frozen=True)
class VehicleDims:
    length: float
    width: float
    wheelbase: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.wheelbase > 0):
            raise SceneValidationError(f"vehicle dims must be positive: {self}")
        if self.wheelbase > self.length:
            raise SceneValidationError(f"wheelbase {self.wheelbase} exceeds length {self.length}")

    @property
    def center_offset(self) -> float:
        """Distance from the rear axle forward to the footprint centre."""
        rear_overhang = 0.5 * (self.length - self.wheelbase)
        return 0.5 * self.length - rear_overhang


def footprint_centers(poses, dims: VehicleDims) -> np.ndarray:
    """Rear-axle poses ``(..., 3)`` to footprint-centre poses ``(..., 3)``."""
    poses = np.asarray(poses, dtype=float)
    off = dims.center_offset
    out = poses.copy()
    out[..., 0] += off * np.cos(poses[..., 2])
    out[..., 1] += off * np.sin(poses[..., 2])
    return out


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """Recorded agent trajectory; ``states`` rows are ``(t, x, y, heading, v, valid)``."""

    id: object
    category: str
    dims: VehicleDims
    states: np.ndarray

    def __post_init__(self):
        st = np.array(self.states, dtype=float)
        if st.ndim != 2 or st.shape[1] != 6 or len(st) == 0:
            raise SceneValidationError(f"agent {self.id!r}: states must be a non-empty (n, 6) table")
        if self.category not in CATEGORIES:
            raise SceneValidationError(f"agent {self.id!r}: unknown category {self.category!r}")
        if not np.all(np.isfinite(st[:, :5])):
            raise SceneValidationError(f"agent {self.id!r}: non-finite state values")
        if np.any(np.diff(st[:, 0]) <= 0):
            raise SceneValidationError(f"agent {self.id!r}: states not sorted strictly by time")
        if not np.all(np.isin(st[:, 5], (0.0, 1.0))):
            raise SceneValidationError(f"agent {self.id!r}: valid flags must be boolean")
        if not np.any(st[:, 5] == 1.0):
            raise SceneValidationError(f"agent {self.id!r}: no valid state")
        if np.any((st[:, 3] <= -math.pi) | (st[:, 3] > math.pi)):
            raise SceneValidationError(f"agent {self.id!r}: heading outside (-pi, pi]")
        if self.category == "static_object" and (len(st) != 1 or st[0, 5] != 1.0):
            raise SceneValidationError(f"agent {self.id!r}: static objects carry one valid state")
        object.__setattr__(self, "states", _frozen(st))

    @property
    def t(self) -> np.ndarray:
        return self.states[:, 0]

    def __eq__(self, other):
        return (isinstance(other, AgentTrack) and self.id == other.id and self.category == other.category
                and self.dims == other.dims and np.array_equal(self.states, other.states))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Route:
    centerline: Polyline
    half_width: float
    progress_upper_bound: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.centerline, Polyline):
            object.__setattr__(self, "centerline", Polyline(self.centerline))
        if np.any(np.all(np.diff(self.centerline.points, axis=0) == 0, axis=1)):
            raise SceneValidationError("route centerline has repeated consecutive points")
        if not self.half_width > 0:
            raise SceneValidationError("route half_width must be positive")
        if self.progress_upper_bound is not None and not self.progress_upper_bound >= 0:
            raise SceneValidationError("route progress_upper_bound must be >= 0")

    def __eq__(self, other):
        return (isinstance(other, Route) and self.centerline == other.centerline
                and self.half_width == other.half_width
                and self.progress_upper_bound == other.progress_upper_bound)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CameraModel:
    view_id: object
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple

    def __post_init__(self):
        K = _frozen(np.reshape(self.intrinsics, (3, 3)))
        R = _frozen(np.reshape(self.rotation, (3, 3)))
        t = _frozen(np.reshape(self.translation, (3,)))
        if abs(np.linalg.det(K)) < 1e-12:
            raise SceneValidationError(f"camera {self.view_id!r}: intrinsics not invertible")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise SceneValidationError(f"camera {self.view_id!r}: rotation not orthonormal")
        w, h = self.image_size
        if not (w > 0 and h > 0):
            raise SceneValidationError(f"camera {self.view_id!r}: bad image size")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "image_size", (int(w), int(h)))

    def __eq__(self, other):
        return (isinstance(other, CameraModel) and self.view_id == other.view_id
                and np.array_equal(self.intrinsics, other.intrinsics)
                and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation)
                and self.image_size == other.image_size)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Scene:
    ego_pose: Pose2D
    ego_velocity: float
    ego_acceleration: float
    ego_dims: VehicleDims
    agents: tuple
    drivable_area: tuple
    route: Route
    cameras: tuple = ()
    expert: Optional[np.ndarray] = None
    mode: str = "navsim"

    def __post_init__(self):
        if self.mode not in MODES:
            raise SceneValidationError(f"unknown mode {self.mode!r}")
        if not (math.isfinite(self.ego_velocity) and math.isfinite(self.ego_acceleration)):
            raise SceneValidationError("ego velocity/acceleration not finite")
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "cameras", tuple(self.cameras))
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise SceneValidationError("duplicate agent ids")
        polys = []
        for i, poly in enumerate(self.drivable_area):
            poly = _frozen(poly)
            try:
                simple = is_simple_polygon(poly)
            except ValueError as exc:
                raise SceneValidationError(f"drivable_area[{i}]: {exc}") from None
            if not simple:
                raise SceneValidationError(f"drivable_area[{i}]: polygon is not simple")
            polys.append(poly)
        if not polys:
            raise SceneValidationError("drivable_area is empty")
        object.__setattr__(self, "drivable_area", tuple(polys))
        p = self.ego_pose
        if not points_in_union([[p.x, p.y]], polys)[0]:
            raise SceneValidationError("ego start pose lies outside every drivable polygon")
        if self.expert is not None:
            ex = _frozen(self.expert)
            if ex.ndim != 2 or ex.shape[1] != 3 or len(ex) == 0:
                raise SceneValidationError("expert must be a non-empty (T, 3) array")
            if not np.all(np.isfinite(ex)):
                raise SceneValidationError("expert contains non-finite values")
            if np.any((ex[:, 2] <= -math.pi) | (ex[:, 2] > math.pi)):
                raise SceneValidationError("expert heading outside (-pi, pi]")
            object.__setattr__(self, "expert", ex)

    def agent(self, agent_id) -> AgentTrack:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return scene_to_dict(self) == scene_to_dict(other)

    __hash__ = None


# --------------------------------------------------------------------------
# JSON schema

_TOP_KEYS = {"mode", "ego", "agents", "drivable_area", "route", "cameras", "expert"}
_REQUIRED_TOP = {"mode", "ego", "agents", "drivable_area", "route"}


def _keys(obj, path, required, optional=()):
    if not isinstance(obj, dict):
        raise SceneSchemaError(f"{path}: expected an object")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise SceneSchemaError(f"{path}: unknown key(s) {sorted(unknown)}")
    for k in required:
        if k not in obj:
            raise SceneSchemaError(f"{path}.{k}: missing field")


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SceneSchemaError(f"{path}: expected a number")
    return float(v)


def _nums(v, path, n=None):
    if not isinstance(v, list) or (n is not None and len(v) != n):
        raise SceneSchemaError(f"{path}: expected a list of {n if n is not None else ''} numbers".replace("  ", " "))
    return [_num(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _points(v, path):
    if not isinstance(v, list):
        raise SceneSchemaError(f"{path}: expected a list of [x, y] points")
    return [_nums(p, f"{path}[{i}]", 2) for i, p in enumerate(v)]


def _dims(d, path):
    _keys(d, path, ("length", "width", "wheelbase"))
    return VehicleDims(_num(d["length"], f"{path}.length"), _num(d["width"], f"{path}.width"),
                       _num(d["wheelbase"], f"{path}.wheelbase"))


def scene_from_dict(data) -> Scene:
    """Build and validate a Scene from the parsed JSON structure."""
    _keys(data, "$", _REQUIRED_TOP, _TOP_KEYS - _REQUIRED_TOP)
    try:
        return _build_scene(data)
    except SceneSchemaError:
        raise
    except SceneError:
        raise
    except (ValueError, TypeError) as exc:
        raise SceneValidationError(str(exc)) from None


def _build_scene(data) -> Scene:
    ego = data["ego"]
    _keys(ego, "$.ego", ("pose", "velocity", "acceleration", "dims"))
    pose = _nums(ego["pose"], "$.ego.pose", 3)
    agents = []
    if not isinstance(data["agents"], list):
        raise SceneSchemaError("$.agents: expected a list")
    for i, a in enumerate(data["agents"]):
        path = f"$.agents[{i}]"
        _keys(a, path, ("id", "category", "dims", "states"))
        aid = a["id"]
        if isinstance(aid, bool) or not isinstance(aid, (int, str)):
            raise SceneSchemaError(f"{path}.id: expected an integer or string")
        if not isinstance(a["states"], list):
            raise SceneSchemaError(f"{path}.states: expected a list")
        rows = []
        for j, row in enumerate(a["states"]):
            rpath = f"{path}.states[{j}]"
            if not isinstance(row, list) or len(row) != 6:
                raise SceneSchemaError(f"{rpath}: expected [t, x, y, heading, v, valid]")
            valid = row[5]
            if not isinstance(valid, bool):
                raise SceneSchemaError(f"{rpath}[5]: expected a boolean")
            rows.append([_num(x, f"{rpath}[{k}]") for k, x in enumerate(row[:5])] + [float(valid)])
        dpath = f"{path}.dims"
        d = a["dims"]
        _keys(d, dpath, ("length", "width", "wheelbase"))
        length, width = _num(d["length"], f"{dpath}.length"), _num(d["width"], f"{dpath}.width")
        wb = _num(d["wheelbase"], f"{dpath}.wheelbase")
        try:
            dims = VehicleDims(length, width, wb)
            agents.append(AgentTrack(aid, a["category"], dims, np.array(rows).reshape(-1, 6)))
        except SceneValidationError as exc:
            msg = str(exc)
            raise SceneValidationError(msg if repr(aid) in msg else f"agent {aid!r}: {msg}") from None
    if not isinstance(data["drivable_area"], list):
        raise SceneSchemaError("$.drivable_area: expected a list of polygons")
    polys = [_points(p, f"$.drivable_area[{i}]") for i, p in enumerate(data["drivable_area"])]
    r = data["route"]
    _keys(r, "$.route", ("centerline", "half_width"), ("progress_upper_bound",))
    bound = r.get("progress_upper_bound")
    route = Route(Polyline(_points(r["centerline"], "$.route.centerline")),
                  _num(r["half_width"], "$.route.half_width"),
                  None if bound is None else _num(bound, "$.route.progress_upper_bound"))
    cams = []
    for i, c in enumerate(data.get("cameras", [])):
        path = f"$.cameras[{i}]"
        _keys(c, path, ("view_id", "K", "R", "t", "image_size"))
        cams.append(CameraModel(c["view_id"], _nums(c["K"], f"{path}.K", 9), _nums(c["R"], f"{path}.R", 9),
                                _nums(c["t"], f"{path}.t", 3), tuple(_nums(c["image_size"], f"{path}.image_size", 2))))
    expert = data.get("expert")
    if expert is not None:
        if not isinstance(expert, list):
            raise SceneSchemaError("$.expert: expected a list of [x, y, heading]")
        expert = np.array([_nums(p, f"$.expert[{i}]", 3) for i, p in enumerate(expert)]).reshape(-1, 3)
    return Scene(
        ego_pose=Pose2D(*pose),
        ego_velocity=_num(ego["velocity"], "$.ego.velocity"),
        ego_acceleration=_num(ego["acceleration"], "$.ego.acceleration"),
        ego_dims=_dims(ego["dims"], "$.ego.dims"),
        agents=agents,
        drivable_area=[np.array(p) for p in polys],
        route=route,
        cameras=cams,
        expert=expert,
        mode=data["mode"],
    )


def _dims_dict(d: VehicleDims):
    return {"length": d.length, "width": d.width, "wheelbase": d.wheelbase}


def scene_to_dict(scene: Scene) -> dict:
    out = {
        "mode": scene.mode,
        "ego": {"pose": [scene.ego_pose.x, scene.ego_pose.y, scene.ego_pose.heading],
                "velocity": scene.ego_velocity, "acceleration": scene.ego_acceleration,
                "dims": _dims_dict(scene.ego_dims)},
        "agents": [{"id": a.id, "category": a.category, "dims": _dims_dict(a.dims),
                    "states": [[*map(float, row[:5]), bool(row[5])] for row in a.states]}
                   for a in scene.agents],
        "drivable_area": [p.tolist() for p in scene.drivable_area],
        "route": {"centerline": scene.route.centerline.points.tolist(),
                  "half_width": scene.route.half_width,
                  "progress_upper_bound": scene.route.progress_upper_bound},
        "cameras": [{"view_id": c.view_id, "K": c.intrinsics.ravel().tolist(), "R": c.rotation.ravel().tolist(),
                     "t": c.translation.tolist(), "image_size": list(c.image_size)} for c in scene.cameras],
    }
    if scene.expert is not None:
        out["expert"] = scene.expert.tolist()
    return out


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), separators=(",", ":"))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(dumps_scene(scene) + "\n", encoding="utf-8")


def load_scene(path) -> Scene:
    """Read, schema-check and validate a scene file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"{path}: malformed JSON: {exc}") from None
    return scene_from_dict(data)


# --------------------------------------------------------------------------
# interpolation

def _lerp(a, b, w):
    return (1.0 - w) * a + w * b


def _slerp_heading(a, b, w):
    h = wrap_angle(a + w * wrap_angle(b - a))
    return np.where(w == 0.0, a, np.where(w == 1.0, b, h))


def agent_states_at(track: AgentTrack, times):
    """Vectorised track lookup.

    Returns ``(poses (M, 3), velocity (M,), valid (M,))``; entries outside the
    recorded span are NaN with ``valid`` False.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    st = track.states
    m = len(times)
    poses = np.full((m, 3), np.nan)
    vel = np.full(m, np.nan)
    valid = np.zeros(m, dtype=bool)
    if track.category == "static_object":
        poses[:] = st[0, 1:4]
        vel[:] = st[0, 4]
        valid[:] = np.isfinite(times)
        return poses, vel, valid
    t = st[:, 0]
    inside = (times >= t[0]) & (times <= t[-1])
    if not inside.any():
        return poses, vel, valid
    q = times[inside]
    if len(t) == 1:
        poses[inside] = st[0, 1:4]
        vel[inside] = st[0, 4]
        valid[inside] = st[0, 5] == 1.0
        return poses, vel, valid
    k = np.clip(np.searchsorted(t, q, side="right") - 1, 0, len(t) - 2)
    w = (q - t[k]) / (t[k + 1] - t[k])
    a, b = st[k], st[k + 1]
    wc = w[:, None]
    poses[inside, :2] = _lerp(a[:, 1:3], b[:, 1:3], wc)
    poses[inside, 2] = _slerp_heading(a[:, 3], b[:, 3], w)
    vel[inside] = _lerp(a[:, 4], b[:, 4], w)
    va = a[:, 5] == 1.0
    vb = b[:, 5] == 1.0
    valid[inside] = np.where(w == 0.0, va, np.where(w == 1.0, vb, va & vb))
    return poses, vel, valid


def agent_state_at(track: AgentTrack, t: float):
    """Interpolated ``(Pose2D, velocity, valid)`` at time ``t``, or None outside the span."""
    poses, vel, valid = agent_states_at(track, [t])
    if np.isnan(poses[0, 0]):
        return None
    return Pose2D(*map(float, poses[0])), float(vel[0]), bool(valid[0])


def resample_trajectory(times, poses, hz: float):
    """Resample timestamped poses ``(n, 3)`` at ``hz`` over their time span.

    Positions are interpolated linearly and headings along the shortest arc.
    Returns ``(times, poses)``.
    """
    times = np.asarray(times, dtype=float)
    poses = np.asarray(poses, dtype=float)
    if len(times) < 2 or len(poses) != len(times):
        raise ValueError("need at least 2 timestamped poses")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if not hz > 0:
        raise ValueError("hz must be positive")
    n = int(math.floor((times[-1] - times[0]) * hz + 1e-9))
    out_t = times[0] + np.arange(n + 1) / hz
    return out_t, interpolate_poses(times, poses, out_t)


def interpolate_poses(times, poses, query):
    """Linear/shortest-arc interpolation of poses at ``query`` (clamped to the span)."""
    times = np.asarray(times, dtype=float)
    poses = np.asarray(poses, dtype=float)
    q = np.clip(np.asarray(query, dtype=float), times[0], times[-1])
    k = np.clip(np.searchsorted(times, q, side="right") - 1, 0, len(times) - 2)
    w = (q - times[k]) / (times[k + 1] - times[k])
    out = np.empty((len(q), 3))
    out[:, :2] = _lerp(poses[k, :2], poses[k + 1, :2], w[:, None])
    out[:, 2] = _slerp_heading(poses[k, 2], poses[k + 1, 2], w)
    return out


def proposal_times(T: int) -> np.ndarray:
    """Planning timestamps 0.5, 1.0, ..., T * 0.5 seconds."""
    return np.arange(1, T + 1) * PLANNING_DT


def expert_progress_bound(scene: Scene) -> Optional[float]:
    """Route progress of the expert trajectory (fallback EP normaliser)."""
    from .geometry import project_points

    if scene.expert is None:
        return None
    start = footprint_centers(scene.ego_pose.as_array(), scene.ego_dims)[None, :2]
    end = footprint_centers(scene.expert[-1], scene.ego_dims)[None, :2]
    s0, _, _ = project_points(start, scene.route.centerline)
    s1, _, _ = project_points(end, scene.route.centerline)
    return float(s1[0] - s0[0])


def progress_upper_bound(scene: Scene) -> Optional[float]:
    if scene.route.progress_upper_bound is not None:
        return scene.route.progress_upper_bound
    return expert_progress_bound(scene)
