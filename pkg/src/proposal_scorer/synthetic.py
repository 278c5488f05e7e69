"""Seeded synthetic scene factory.

Scenes are a multi-lane road (straight or a constant-curvature arc) with the
ego in the route lane at the origin heading +x.  The expert drives the lane
centre with constant acceleration.  Agents are drawn one at a time and kept
only if the expert stays collision- and TTC-clean against them, so every
generated expert scores NC = DAC = TTC = Comfort = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import SimConfig
from .geometry import Polyline
from .scene import (AgentTrack, CameraModel, Pose2D, Route, Scene, VehicleDims, expert_progress_bound,
                    proposal_times, wrap_angle)

EGO_DIMS = VehicleDims(4.6, 1.9, 2.8)
_CAR = (4.5, 1.9, 2.7)
_TRACK_DT = 0.1
_TRACK_END = 5.5  # horizon plus TTC look-ahead, with margin


class InfeasibleSpecError(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    """Generator knobs; ranges are checked in ``validate``."""

    vehicles: int = 5
    pedestrians: int = 1
    static_objects: int = 1
    lanes_left: int = 1
    lanes_right: int = 1
    lane_width: float = 3.6
    speed_range: tuple = (3.0, 12.0)
    accel_range: tuple = (-0.5, 0.5)
    curvature_max: float = 0.01
    cameras: int = 4
    mode: str = "navsim"
    max_retries: int = 50

    def validate(self):
        if not (0 <= self.vehicles <= 40 and 0 <= self.pedestrians <= 20 and 0 <= self.static_objects <= 20):
            raise InfeasibleSpecError("agent counts must lie in vehicles 0..40, pedestrians/static 0..20")
        if not (0 <= self.lanes_left <= 4 and 0 <= self.lanes_right <= 4):
            raise InfeasibleSpecError("lanes_left / lanes_right must lie in 0..4")
        if not 2.5 <= self.lane_width <= 5.0:
            raise InfeasibleSpecError("lane_width must lie in [2.5, 5.0] m")
        lo, hi = self.speed_range
        if not 0.5 <= lo <= hi <= 20.0:
            raise InfeasibleSpecError("speed_range must satisfy 0.5 <= lo <= hi <= 20 m/s")
        alo, ahi = self.accel_range
        if not -1.0 <= alo <= ahi <= 1.0:
            raise InfeasibleSpecError("accel_range must lie within [-1, 1] m/s^2")
        if lo + 4.0 * alo < 0.5:
            raise InfeasibleSpecError("slowest expert would stop within the horizon")
        if not 0.0 <= self.curvature_max <= 0.02:
            raise InfeasibleSpecError("curvature_max must lie in [0, 0.02] 1/m")
        if not 0 <= self.cameras <= 6:
            raise InfeasibleSpecError("cameras must lie in 0..6")
        if self.mode not in ("navsim", "bench2drive"):
            raise InfeasibleSpecError(f"unknown mode {self.mode!r}")
        if self.max_retries < 1:
            raise InfeasibleSpecError("max_retries must be >= 1")


def _lane_points(s, kappa, offset):
    """Points at arclength ``s`` on the lane ``offset`` metres left of the route lane."""
    s = np.asarray(s, dtype=float)
    if abs(kappa) < 1e-12:
        x, y, h = s, np.zeros_like(s), np.zeros_like(s)
    else:
        x = np.sin(kappa * s) / kappa
        y = (1.0 - np.cos(kappa * s)) / kappa
        h = kappa * s
    return x - offset * np.sin(h), y + offset * np.cos(h), h


def _camera(yaw, size=(800, 450), focal=400.0, mount=(1.4, 0.0, 1.6)):
    f = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    R = np.vstack([right, down, f])
    t = -R @ np.asarray(mount)
    K = np.array([[focal, 0.0, size[0] / 2], [0.0, focal, size[1] / 2], [0.0, 0.0, 1.0]])
    return K, R, t, size


def default_cameras(count: int = 4):
    yaws = [0.0, math.radians(55), math.radians(-55), math.pi, math.radians(110), math.radians(-110)]
    names = ["front", "front_left", "front_right", "back", "back_left", "back_right"]
    cams = []
    for name, yaw in zip(names[:count], yaws[:count]):
        K, R, t, size = _camera(yaw)
        cams.append(CameraModel(name, K, R, t, size))
    return cams


def _road(spec: GenSpec, kappa):
    lw = spec.lane_width
    left = (spec.lanes_left + 0.5) * lw
    right = -(spec.lanes_right + 0.5) * lw
    s = np.linspace(-40.0, 160.0, 101)
    lx, ly, _ = _lane_points(s, kappa, left)
    rx, ry, _ = _lane_points(s, kappa, right)
    poly = np.concatenate([np.stack([lx, ly], 1), np.stack([rx, ry], 1)[::-1]])
    cx, cy, _ = _lane_points(s, kappa, 0.0)
    return poly, np.stack([cx, cy], 1)


def _moving_track(aid, category, dims, s0, speed, kappa, offset, reverse, rng, gap=True):
    t = np.round(np.arange(0.0, _TRACK_END + 1e-9, _TRACK_DT), 10)
    direction = -1.0 if reverse else 1.0
    s = s0 + direction * speed * t
    x, y, h = _lane_points(s, kappa, offset)
    if reverse:
        h = h + math.pi
    valid = np.ones_like(t)
    if gap and rng.random() < 0.2:
        valid[t > rng.uniform(2.0, _TRACK_END)] = 0.0
    states = np.stack([t, x, y, wrap_angle(h), np.full_like(t, speed), valid], 1)
    return AgentTrack(aid, category, dims, states)


def _candidate(kind, aid, spec: GenSpec, kappa, rng):
    lw = spec.lane_width
    if kind == "vehicle":
        lanes = list(range(-spec.lanes_right, spec.lanes_left + 1))
        lane = lanes[rng.integers(len(lanes))]
        reverse = lane > 0 and rng.random() < 0.5
        s0 = rng.uniform(-30.0, 90.0)
        speed = rng.uniform(*spec.speed_range)
        return _moving_track(aid, "vehicle", VehicleDims(*_CAR), s0, speed, kappa, lane * lw, reverse, rng)
    edge_left = (spec.lanes_left + 0.5) * lw
    edge_right = -(spec.lanes_right + 0.5) * lw
    if kind == "pedestrian":
        side = edge_left + 1.5 if rng.random() < 0.5 else edge_right - 1.5
        return _moving_track(aid, "pedestrian", VehicleDims(0.6, 0.6, 0.6), rng.uniform(-10.0, 80.0),
                             rng.uniform(0.8, 1.6), kappa, side, rng.random() < 0.5, rng)
    # static objects sit on the shoulder or in a neighbouring lane
    lanes = [v for v in range(-spec.lanes_right, spec.lanes_left + 1) if v != 0]
    offset = (lanes[rng.integers(len(lanes))] * lw) if lanes and rng.random() < 0.5 else \
        (edge_left + 0.8 if rng.random() < 0.5 else edge_right - 0.8)
    x, y, h = _lane_points(rng.uniform(5.0, 90.0), kappa, offset)
    states = np.array([[0.0, float(x), float(y), float(wrap_angle(h)), 0.0, 1.0]])
    return AgentTrack(aid, "static_object", VehicleDims(1.0, 1.0, 1.0), states)


def gen_synthetic(seed: int, spec: GenSpec = GenSpec()) -> Scene:
    """Deterministic scene for ``(seed, spec)``; raises InfeasibleSpecError."""
    from .metrics import (comfort_metric, drivable_area_compliance, ego_progress, no_at_fault_collision,
                          time_to_collision_metric)
    from .simulator import simulate

    spec.validate()
    rng = np.random.default_rng(seed)
    kappa = float(rng.uniform(-spec.curvature_max, spec.curvature_max)) if rng.random() < 0.6 else 0.0
    v0 = float(rng.uniform(*spec.speed_range))
    a0 = float(rng.uniform(*spec.accel_range))
    T = 8 if spec.mode == "navsim" else 6
    t = proposal_times(T)
    ex, ey, eh = _lane_points(v0 * t + 0.5 * a0 * t * t, kappa, 0.0)
    expert = np.stack([ex, ey, wrap_angle(eh)], 1)
    poly, centerline = _road(spec, kappa)
    base = Scene(
        ego_pose=Pose2D(0.0, 0.0, 0.0), ego_velocity=v0, ego_acceleration=a0, ego_dims=EGO_DIMS,
        agents=(), drivable_area=(poly,),
        route=Route(Polyline(centerline), 0.5 * spec.lane_width, None),
        cameras=default_cameras(spec.cameras), expert=expert, mode=spec.mode,
    )
    bound = expert_progress_bound(base)
    base = replace(base, route=Route(base.route.centerline, base.route.half_width, bound))

    cfg = SimConfig(mode=spec.mode)
    rollout = simulate(expert, base, cfg)
    expert_profile = None
    if spec.mode == "bench2drive":
        from .simulator import kinematic_profile
        expert_profile = kinematic_profile(rollout)
    if drivable_area_compliance(rollout, base, spec.mode) != 1.0 or \
            comfort_metric(rollout, cfg.comfort, spec.mode, expert_profile) != 1.0:
        raise InfeasibleSpecError("expert leaves the road or exceeds comfort limits for this spec")
    if spec.mode == "navsim" and ego_progress(rollout, base, "navsim")[0] < 0.95:
        raise InfeasibleSpecError("expert rollout falls short of its own progress bound")

    agents = []
    kinds = ["vehicle"] * spec.vehicles + ["pedestrian"] * spec.pedestrians + ["static_object"] * spec.static_objects
    for aid, kind in enumerate(kinds, start=1):
        for _ in range(spec.max_retries):
            cand = _candidate(kind, aid, spec, kappa, rng)
            probe = replace(base, agents=(cand,))
            if no_at_fault_collision(rollout, probe, cfg)[0] == 1.0 and \
                    time_to_collision_metric(rollout, probe, cfg)[0] == 1.0:
                agents.append(cand)
                break
        else:
            raise InfeasibleSpecError(f"could not place {kind} {aid} clear of the expert "
                                      f"after {spec.max_retries} tries")
    return replace(base, agents=tuple(agents))
