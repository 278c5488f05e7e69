"""Sub-metrics (NC, DAC, TTC, Comfort, EP) and the aggregate PDM score."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import ComfortThresholds, SimConfig, with_mode
from .geometry import corners_from_poses, corners_overlap, points_in_union, project_points
from .scene import ROAD_USERS, Scene, agent_states_at, footprint_centers, progress_upper_bound
from .simulator import Rollout, kinematic_profile, replay_track, simulate

MIN_PROGRESS_BOUND = 5.0


@dataclass(frozen=True)
class SubMetrics:
    nc: float
    dac: float
    ttc: float
    comfort: float
    ep: float
    ep_discarded: bool = False

    def __post_init__(self):
        if self.nc not in (0.0, 0.5, 1.0):
            raise ValueError(f"nc must be 0, 0.5 or 1, got {self.nc}")
        for name in ("dac", "ttc", "comfort"):
            if getattr(self, name) not in (0.0, 1.0):
                raise ValueError(f"{name} must be 0 or 1")
        if not 0.0 <= self.ep <= 1.0:
            raise ValueError(f"ep must lie in [0, 1], got {self.ep}")


@dataclass(frozen=True)
class Attribution:
    agent_id: object
    tick: int


@dataclass(frozen=True)
class ScoreCard:
    sub: SubMetrics
    pdms: float
    first_at_fault: Optional[Attribution] = None
    first_ttc: Optional[Attribution] = None


def pdm_score(sub: SubMetrics) -> float:
    return sub.nc * sub.dac * (5.0 * sub.ep + 5.0 * sub.ttc + 2.0 * sub.comfort) / 12.0


def _id_key(agent_id):
    return (0, agent_id, "") if isinstance(agent_id, int) else (1, 0, str(agent_id))


def ego_corners(r: Rollout, scene: Scene) -> np.ndarray:
    c = footprint_centers(r.poses, scene.ego_dims)
    d = scene.ego_dims
    return corners_from_poses(c[:, 0], c[:, 1], c[:, 2], d.length, d.width)


def _agent_corners(agent, times):
    poses, _, valid = agent_states_at(agent, times)
    corners = corners_from_poses(np.nan_to_num(poses[..., 0]), np.nan_to_num(poses[..., 1]),
                                 np.nan_to_num(poses[..., 2]), agent.dims.length, agent.dims.width)
    return corners, valid


def _earliest(hits):
    """hits: list of (tick, agent_id) -> Attribution with earliest tick, then smallest id."""
    if not hits:
        return None
    tick, aid = min(hits, key=lambda h: (h[0], _id_key(h[1])))
    return Attribution(aid, int(tick))


def no_at_fault_collision(r: Rollout, scene: Scene, cfg: Optional[SimConfig] = None):
    """Returns ``(value, first_at_fault)``.

    navsim: road-user contact while the ego moves gives 0; static-object
    contact alone gives 0.5.  bench2drive: any contact with any object gives 0.
    """
    cfg = cfg or SimConfig(mode=scene.mode)
    ego = ego_corners(r, scene)
    times = r.times
    moving = np.abs(r.velocity) >= cfg.stationary_speed
    road_hits, static_hits = [], []
    for agent in scene.agents:
        corners, valid = _agent_corners(agent, times)
        hit = corners_overlap(ego, corners) & valid
        if cfg.mode == "navsim":
            hit &= moving
        idx = np.flatnonzero(hit)
        if len(idx):
            target = road_hits if agent.category in ROAD_USERS else static_hits
            target.append((idx[0], agent.id))
    if cfg.mode == "bench2drive":
        hits = road_hits + static_hits
        return (0.0 if hits else 1.0), _earliest(hits)
    if road_hits:
        return 0.0, _earliest(road_hits)
    if static_hits:
        return 0.5, _earliest(static_hits)
    return 1.0, None


def _route_flags(centers, scene: Scene) -> np.ndarray:
    """True where a point is inside the route corridor."""
    line = scene.route.centerline
    s, lat, _ = project_points(centers, line)
    pts = line.points
    start_dir = pts[1] - pts[0]
    end_dir = pts[-1] - pts[-2]
    before = (s <= 0.0) & (((centers - pts[0]) @ start_dir) < 0.0)
    after = (s >= line.length) & (((centers - pts[-1]) @ end_dir) > 0.0)
    return (np.abs(lat) <= scene.route.half_width) & ~before & ~after


def on_road_flags(r: Rollout, scene: Scene) -> np.ndarray:
    corners = ego_corners(r, scene)
    inside = points_in_union(corners.reshape(-1, 2), scene.drivable_area)
    return inside.reshape(-1, 4).all(axis=1)


def on_route_flags(r: Rollout, scene: Scene) -> np.ndarray:
    return _route_flags(footprint_centers(r.poses, scene.ego_dims)[:, :2], scene)


def drivable_area_compliance(r: Rollout, scene: Scene, mode: str = "navsim") -> float:
    if not on_road_flags(r, scene).all():
        return 0.0
    if mode == "bench2drive" and not on_route_flags(r, scene).any():
        return 0.0
    return 1.0


def time_to_collision_metric(r: Rollout, scene: Scene, cfg: Optional[SimConfig] = None):
    """Returns ``(value, first_ttc)``.

    At every moving tick the ego box is pushed forward at constant speed and
    heading in ``ttc_step`` increments; agents sit at their recorded states at
    the matching absolute time.  Any overlap before ``ttc_bound`` gives 0.
    """
    cfg = cfg or SimConfig(mode=scene.mode)
    n_proj = int(round(cfg.ttc_bound / cfg.ttc_step))
    taus = np.arange(n_proj) * cfg.ttc_step  # strictly below the bound
    centers = footprint_centers(r.poses, scene.ego_dims)
    d = scene.ego_dims
    ticks = np.flatnonzero(np.abs(r.velocity) >= cfg.stationary_speed)
    if len(ticks) == 0 or not scene.agents:
        return 1.0, None
    c = centers[ticks]
    v = r.velocity[ticks]
    cos, sin = np.cos(c[:, 2]), np.sin(c[:, 2])
    px = c[:, None, 0] + v[:, None] * taus[None] * cos[:, None]
    py = c[:, None, 1] + v[:, None] * taus[None] * sin[:, None]
    ego = corners_from_poses(px, py, c[:, None, 2], d.length, d.width)  # (M, P, 4, 2)
    abs_t = r.times[ticks][:, None] + taus[None]
    hits = []
    for agent in scene.agents:
        corners, valid = _agent_corners(agent, abs_t.ravel())
        corners = corners.reshape(abs_t.shape + (4, 2))
        hit = corners_overlap(ego, corners) & valid.reshape(abs_t.shape)
        rows = np.flatnonzero(hit.any(axis=1))
        if len(rows):
            hits.append((ticks[rows[0]], agent.id))
    if hits:
        return 0.0, _earliest(hits)
    return 1.0, None


def _violations(profile, th: ComfortThresholds) -> dict:
    return {
        "lat_acc": np.abs(profile.lat_acc) > th.lat_acc,
        "lon_acc": profile.lon_acc > th.lon_acc,
        "lon_dec": -profile.lon_acc > th.lon_dec,
        "abs_jerk": np.abs(profile.jerk) > th.abs_jerk,
        "lon_jerk": np.abs(profile.lon_jerk) > th.lon_jerk,
        "yaw_rate": np.abs(profile.yaw_rate) > th.yaw_rate,
        "yaw_acc": np.abs(profile.yaw_acc) > th.yaw_acc,
    }


def comfort_violations(r: Rollout, th: ComfortThresholds) -> dict:
    """Per-threshold flags: name -> True if exceeded at any tick."""
    return {k: bool(v.any()) for k, v in _violations(kinematic_profile(r), th).items()}


def comfort_metric(r: Rollout, th: Optional[ComfortThresholds] = None, mode: str = "navsim",
                   expert_profile=None) -> float:
    if mode == "bench2drive":
        if expert_profile is None:
            raise ValueError("bench2drive comfort needs the expert rollout profile")
        p = kinematic_profile(r)
        too_fast = np.max(p.acc_mag) > np.max(expert_profile.acc_mag)
        too_sharp = np.max(np.abs(p.yaw_rate)) > np.max(np.abs(expert_profile.yaw_rate))
        return 0.0 if (too_fast or too_sharp) else 1.0
    th = th or ComfortThresholds()
    return 0.0 if any(comfort_violations(r, th).values()) else 1.0


def route_progress(r: Rollout, scene: Scene) -> float:
    c = footprint_centers(r.poses[[0, -1]], scene.ego_dims)[:, :2]
    s, _, _ = project_points(c, scene.route.centerline)
    return float(s[1] - s[0])


def ego_progress(r: Rollout, scene: Scene, mode: str = "navsim", expert: Optional[Rollout] = None,
                 collision_free: bool = True, on_road: bool = True):
    """Returns ``(value, discarded)``; discarded entries carry the neutral value 1."""
    progress = route_progress(r, scene)
    if mode == "bench2drive":
        if expert is None:
            raise ValueError("bench2drive progress needs the expert rollout")
        ref = route_progress(expert, scene)
        if ref <= 0.0:
            return 1.0, True
        if not (collision_free and on_road):
            return 0.0, False
        ratio = progress / ref
        if ratio > 1.0:
            ratio = 1.0 / ratio
        return float(min(max(ratio, 0.0), 1.0)), False
    bound = progress_upper_bound(scene)
    if bound is None or bound < MIN_PROGRESS_BOUND or progress < 0.0:
        return 1.0, True
    return float(min(max(progress / bound, 0.0), 1.0)), False


def score_rollout(r: Rollout, scene: Scene, cfg: SimConfig, expert_rollout: Optional[Rollout] = None) -> ScoreCard:
    nc, at_fault = no_at_fault_collision(r, scene, cfg)
    dac = drivable_area_compliance(r, scene, cfg.mode)
    ttc, ttc_agent = time_to_collision_metric(r, scene, cfg)
    expert_profile = kinematic_profile(expert_rollout) if expert_rollout is not None else None
    comfort = comfort_metric(r, cfg.comfort, cfg.mode, expert_profile)
    ep, discarded = ego_progress(r, scene, cfg.mode, expert_rollout, collision_free=nc == 1.0, on_road=dac == 1.0)
    sub = SubMetrics(nc, dac, ttc, comfort, ep, discarded)
    return ScoreCard(sub, pdm_score(sub), at_fault, ttc_agent)


def expert_rollout_for(scene: Scene, cfg: SimConfig) -> Optional[Rollout]:
    if cfg.mode != "bench2drive":
        return None
    if scene.expert is None:
        raise ValueError("bench2drive scoring needs an expert trajectory in the scene")
    return replay_track(scene.expert, scene, cfg)


def score_proposal(proposal, scene: Scene, cfg: SimConfig, expert_rollout: Optional[Rollout] = None):
    """Roll out and score one proposal; returns ``(ScoreCard, Rollout)``."""
    r = simulate(proposal, scene, cfg)
    if cfg.mode == "bench2drive" and expert_rollout is None:
        expert_rollout = expert_rollout_for(scene, cfg)
    return score_rollout(r, scene, cfg, expert_rollout), r


def score_proposals(proposals, scene: Scene, cfg: Optional[SimConfig] = None, return_rollouts: bool = False):
    """Score an ``(N, T, 3)`` proposal set against a scene, one ScoreCard each."""
    cfg = cfg or SimConfig(mode=scene.mode)
    proposals = np.asarray(proposals, dtype=float)
    if proposals.ndim != 3 or proposals.shape[2] != 3 or proposals.shape[0] == 0 or proposals.shape[1] == 0:
        raise ValueError(f"proposals must have shape (N, T, 3), got {proposals.shape}")
    expert = expert_rollout_for(scene, cfg)
    cards, rollouts = [], []
    for p in proposals:
        card, r = score_proposal(p, scene, cfg, expert)
        cards.append(card)
        rollouts.append(r)
    return (cards, rollouts) if return_rollouts else cards


def config_for_scene(scene: Scene, cfg: Optional[SimConfig] = None) -> SimConfig:
    return with_mode(cfg or SimConfig(), scene.mode)
