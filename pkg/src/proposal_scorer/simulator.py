"""Ego rollouts: kinematic bicycle + LQR tracking, perfect replay, kinematic profiles."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import SimConfig
from .scene import PLANNING_DT, Scene, VehicleDims, interpolate_poses, proposal_times, wrap_angle


@dataclass(frozen=True)
class EgoKinState:
    x: float
    y: float
    heading: float
    velocity: float
    acceleration: float = 0.0
    steering: float = 0.0


@dataclass(frozen=True, eq=False)
class Rollout:
    """Simulated ego trajectory sampled every ``dt`` seconds from t=0.

    ``poses`` rows are rear-axle ``(x, y, heading)``.
    """

    dt: float
    poses: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    steering: np.ndarray

    def __post_init__(self):
        n = len(self.poses)
        if n == 0:
            raise ValueError("rollout needs at least one state")
        for name in ("velocity", "acceleration", "steering"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"rollout {name} length mismatch")
        for name in ("poses", "velocity", "acceleration", "steering"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.poses)) * self.dt

    def __len__(self):
        return len(self.poses)

    def state(self, i: int) -> EgoKinState:
        x, y, h = self.poses[i]
        return EgoKinState(float(x), float(y), float(h), float(self.velocity[i]),
                           float(self.acceleration[i]), float(self.steering[i]))

    def tick_of(self, t: float) -> int:
        """Index of the tick at time ``t`` (must lie on the tick grid)."""
        i = int(round(t / self.dt))
        if abs(i * self.dt - t) > 1e-9 or not 0 <= i < len(self):
            raise ValueError(f"time {t} is not a rollout tick")
        return i


def clamp_controls(accel: float, steering: float, cfg: SimConfig) -> tuple[float, float]:
    accel = min(max(accel, -cfg.decel_max), cfg.accel_max)
    steering = min(max(steering, -cfg.steering_limit), cfg.steering_limit)
    return accel, steering


def bicycle_step(s: EgoKinState, accel: float, steering: float, dt: float, dims: VehicleDims,
                 cfg: Optional[SimConfig] = None) -> EgoKinState:
    """One forward-Euler step of the rear-axle kinematic bicycle."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    cfg = cfg or SimConfig()
    accel, steering = clamp_controls(accel, steering, cfg)
    v = s.velocity
    x = s.x + v * math.cos(s.heading) * dt
    y = s.y + v * math.sin(s.heading) * dt
    h = wrap_angle(s.heading + v * math.tan(steering) / dims.wheelbase * dt)
    v_new = v + accel * dt
    if not cfg.allow_reverse and v_new < 0.0:
        v_new = 0.0
    return EgoKinState(x, y, h, v_new, accel, steering)


def lqr_gain(v: float, dt: float, q, r: float, tol: float = 1e-10, max_iter: int = 100000):
    """Infinite-horizon discrete LQR gain for the lateral error model.

    State ``[lateral error, heading error]``, input yaw-rate deviation:
    ``A = [[1, v dt], [0, 1]]``, ``B = [0, dt]^T``.  The Riccati recursion is
    iterated until the largest entry change drops below ``tol``.
    """
    a01 = v * dt
    q00, q01, q11 = q[0][0], q[0][1], q[1][1]
    p00, p01, p11 = q00, q01, q11
    for _ in range(max_iter):
        # B^T P B, B^T P A
        bpb = dt * dt * p11
        bpa0 = dt * p01
        bpa1 = dt * (p01 * a01 + p11)
        s = r + bpb
        k0, k1 = bpa0 / s, bpa1 / s
        # A^T P A
        apa00 = p00
        apa01 = p00 * a01 + p01
        apa11 = a01 * (p00 * a01 + p01) + (p01 * a01 + p11)
        n00 = q00 + apa00 - bpa0 * k0
        n01 = q01 + apa01 - bpa0 * k1
        n11 = q11 + apa11 - bpa1 * k1
        delta = max(abs(n00 - p00), abs(n01 - p01), abs(n11 - p11))
        p00, p01, p11 = n00, n01, n11
        if delta < tol:
            break
    else:
        raise RuntimeError("Riccati recursion did not converge")
    s = r + dt * dt * p11
    return dt * p01 / s, dt * (p01 * a01 + p11) / s


def _reference(proposal, scene: Scene, cfg: SimConfig):
    proposal = np.asarray(proposal, dtype=float)
    if proposal.ndim != 2 or proposal.shape[1] != 3 or len(proposal) == 0:
        raise ValueError("proposal must be a non-empty (T, 3) array")
    if not np.all(np.isfinite(proposal)):
        raise ValueError("proposal contains non-finite values")
    knots_t = np.concatenate([[0.0], proposal_times(len(proposal))])
    knots = np.vstack([scene.ego_pose.as_array(), proposal])
    return knots_t, knots


def arc_reference(knots_t, knots, times):
    """Densify knots along constant-curvature arcs.

    Starts from the linear/shortest-arc resampling and bends each chord onto
    the circular arc implied by the heading change across the segment, so a
    reference that actually curves is not cut short by its chords.
    """
    ref = interpolate_poses(knots_t, knots, times)
    q = np.clip(times, knots_t[0], knots_t[-1])
    k = np.clip(np.searchsorted(knots_t, q, side="right") - 1, 0, len(knots_t) - 2)
    w = (q - knots_t[k]) / (knots_t[k + 1] - knots_t[k])
    a, b = knots[k], knots[k + 1]
    chord = b[:, :2] - a[:, :2]
    length = np.hypot(chord[:, 0], chord[:, 1])
    dth = wrap_angle(b[:, 2] - a[:, 2])
    bend = (np.abs(dth) > 1e-9) & (length > 0) & (w > 0) & (w < 1)
    if not bend.any():
        return ref
    L, d, wb_ = length[bend], dth[bend], w[bend]
    radius = L / (2.0 * np.sin(0.5 * d))  # signed, positive turning left
    along = radius * np.sin(d * (wb_ - 0.5)) + 0.5 * L
    lateral = radius * (np.cos(0.5 * d) - np.cos(d * (wb_ - 0.5)))
    ux, uy = chord[bend, 0] / L, chord[bend, 1] / L
    ref[bend, 0] = a[bend, 0] + along * ux - lateral * uy
    ref[bend, 1] = a[bend, 1] + along * uy + lateral * ux
    return ref


def lqr_track(proposal, scene: Scene, cfg: SimConfig) -> Rollout:
    """Track a proposal with the bicycle model under decoupled LQR/speed control.

    The reference (ego start + proposal poses at 0.5 s) is densified to the
    simulation rate.  Lateral control is an LQR on ``[e_lat, e_heading]``
    with yaw-rate feedforward; longitudinal control is feedforward
    acceleration plus speed and station feedback.
    """
    knots_t, knots = _reference(proposal, scene, cfg)
    if len(knots) < 2:
        raise ValueError("proposal needs at least one pose")
    dt = cfg.dt
    n = cfg.n_ticks
    times = np.arange(n + 1) / cfg.sim_hz
    ref = arc_reference(knots_t, knots, times)

    # speed profile at knots: arclength derivative, start pinned to the ego speed
    seg = np.hypot(*np.diff(knots[:, :2], axis=0).T)
    half_turn = 0.5 * np.abs(wrap_angle(np.diff(knots[:, 2])))
    seg = seg * np.where(half_turn > 1e-9, half_turn / np.sin(np.maximum(half_turn, 1e-9)), 1.0)
    s_knots = np.concatenate([[0.0], np.cumsum(seg)])
    if len(knots) >= 3:
        v_knots = np.gradient(s_knots, knots_t, edge_order=2)
    else:
        v_knots = np.full(2, seg[0] / (knots_t[1] - knots_t[0]))
    v_knots[0] = scene.ego_velocity
    if not cfg.allow_reverse:
        v_knots = np.maximum(v_knots, 0.0)
    yaw_seg = wrap_angle(np.diff(knots[:, 2])) / np.diff(knots_t)
    acc_seg = np.diff(v_knots) / np.diff(knots_t)

    end_t = knots_t[-1]
    # Euler displacement over a tick uses the start-of-tick speed, i.e. the
    # path speed half a tick later
    v_ref = np.interp(times + 0.5 * dt, knots_t, v_knots)
    k_seg = np.clip(np.searchsorted(knots_t, times, side="right") - 1, 0, len(knots_t) - 2)
    a_ff = np.where(times < end_t, acc_seg[k_seg], 0.0)
    w_ff = np.where(times < end_t, yaw_seg[k_seg], 0.0)
    v_ref = np.where(times <= end_t, v_ref, 0.0)

    dims = scene.ego_dims
    wb = dims.wheelbase
    s = EgoKinState(scene.ego_pose.x, scene.ego_pose.y, scene.ego_pose.heading,
                    scene.ego_velocity, scene.ego_acceleration, 0.0)
    poses = np.empty((n + 1, 3))
    vel = np.empty(n + 1)
    acc = np.empty(n + 1)
    steer = np.empty(n + 1)
    poses[0] = (s.x, s.y, s.heading)
    vel[0], acc[0], steer[0] = s.velocity, s.acceleration, s.steering
    for i in range(n):
        xr, yr, hr = ref[i]
        c, sn = math.cos(hr), math.sin(hr)
        dx, dy = s.x - xr, s.y - yr
        e_s = c * dx + sn * dy
        e_lat = -sn * dx + c * dy
        e_h = wrap_angle(s.heading - hr)

        accel = a_ff[i] + cfg.k_speed * (v_ref[i] - s.velocity) - cfg.k_station * e_s
        v_lin = max(abs(s.velocity), cfg.lqr_min_speed)
        k0, k1 = lqr_gain(v_lin, dt, cfg.q_lat, cfg.r_lat)
        yaw_rate = w_ff[i] - (k0 * e_lat + k1 * e_h)
        if abs(s.velocity) > 1e-6:
            steering = math.atan(yaw_rate / s.velocity * wb)
        else:
            steering = 0.0
        s = bicycle_step(s, accel, steering, dt, dims, cfg)
        poses[i + 1] = (s.x, s.y, s.heading)
        vel[i + 1], acc[i + 1], steer[i + 1] = s.velocity, s.acceleration, s.steering
    return Rollout(dt, poses, vel, acc, steer)


def replay_track(proposal, scene: Scene, cfg: SimConfig) -> Rollout:
    """Perfect controller: the rollout visits the proposal poses exactly at 2 Hz."""
    knots_t, knots = _reference(proposal, scene, cfg)
    n = min(len(knots) - 1, int(round(cfg.horizon / PLANNING_DT)))
    poses = knots[: n + 1]
    dt = PLANNING_DT
    vel = np.empty(n + 1)
    acc = np.empty(n + 1)
    vel[0] = scene.ego_velocity
    acc[0] = scene.ego_acceleration
    if n:
        d = np.diff(poses[:, :2], axis=0)
        h = poses[1:, 2]
        vel[1:] = (d[:, 0] * np.cos(h) + d[:, 1] * np.sin(h)) / dt
        acc[1:] = np.diff(vel) / dt
    return Rollout(dt, poses, vel, acc, np.zeros(n + 1))


def simulate(proposal, scene: Scene, cfg: SimConfig) -> Rollout:
    if cfg.mode == "navsim":
        return lqr_track(proposal, scene, cfg)
    return replay_track(proposal, scene, cfg)


@dataclass(frozen=True)
class KinematicProfile:
    speed: np.ndarray
    lon_acc: np.ndarray
    lat_acc: np.ndarray
    acc_mag: np.ndarray
    jerk: np.ndarray
    lon_jerk: np.ndarray
    yaw_rate: np.ndarray
    yaw_acc: np.ndarray


def kinematic_profile(r: Rollout) -> KinematicProfile:
    """Finite-difference kinematics of a rollout's rear-axle track.

    Central differences in the interior, second-order one-sided at the ends.
    Longitudinal quantities are projected on the heading; lateral
    acceleration is speed times yaw rate.
    """
    if len(r) < 3:
        raise ValueError("kinematic profile needs at least 3 states")
    dt = r.dt
    pos = r.poses[:, :2]
    c, s = np.cos(r.poses[:, 2]), np.sin(r.poses[:, 2])
    vel = np.gradient(pos, dt, axis=0, edge_order=2)
    speed = vel[:, 0] * c + vel[:, 1] * s
    acc = np.gradient(vel, dt, axis=0, edge_order=2)
    lon_acc = acc[:, 0] * c + acc[:, 1] * s
    yaw_rate = np.gradient(np.unwrap(r.poses[:, 2]), dt, edge_order=2)
    lat_acc = speed * yaw_rate
    acc_mag = np.hypot(lon_acc, lat_acc)
    return KinematicProfile(
        speed=speed,
        lon_acc=lon_acc,
        lat_acc=lat_acc,
        acc_mag=acc_mag,
        jerk=np.gradient(acc_mag, dt, edge_order=2),
        lon_jerk=np.gradient(lon_acc, dt, edge_order=2),
        yaw_rate=yaw_rate,
        yaw_acc=np.gradient(yaw_rate, dt, edge_order=2),
    )
