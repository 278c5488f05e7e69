import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proposal_scorer.config import SimConfig
from proposal_scorer.scene import VehicleDims, wrap_angle
from proposal_scorer.simulator import (EgoKinState, Rollout, bicycle_step, kinematic_profile, lqr_gain, lqr_track,
                                       replay_track, simulate)

from oracles import bicycle_rk4
from sim_fixtures import DIMS, feasible_reference, open_scene, rigid

B2D = SimConfig(mode="bench2drive")


def test_straight_step():
    s = bicycle_step(EgoKinState(0, 0, 0, 10.0), 0.0, 0.0, 0.1, DIMS)
    assert (s.x, s.y, s.heading, s.velocity) == (1.0, 0.0, 0.0, 10.0)


@given(st.floats(-0.8, 0.8))
def test_zero_velocity_fixed_point(steer):
    s0 = EgoKinState(1.0, -2.0, 0.3, 0.0)
    s = bicycle_step(s0, 0.0, steer, 0.1, DIMS)
    assert (s.x, s.y, s.heading, s.velocity) == (s0.x, s0.y, s0.heading, s0.velocity)


def test_controls_clamped():
    cfg = SimConfig()
    s = bicycle_step(EgoKinState(0, 0, 0, 5.0), 10.0, 2.0, 0.1, DIMS, cfg)
    assert s.acceleration == cfg.accel_max and s.steering == cfg.steering_limit
    s = bicycle_step(EgoKinState(0, 0, 0, 5.0), -10.0, -2.0, 0.1, DIMS, cfg)
    assert s.acceleration == -cfg.decel_max and s.steering == -cfg.steering_limit


def test_no_reverse_by_default():
    s = bicycle_step(EgoKinState(0, 0, 0, 0.1), -4.0, 0.0, 0.1, DIMS)
    assert s.velocity == 0.0


def test_heading_wrapped():
    s = EgoKinState(0, 0, math.pi - 0.01, 10.0)
    s = bicycle_step(s, 0.0, 0.5, 0.1, DIMS)
    assert -math.pi < s.heading <= math.pi


def test_bad_dt():
    with pytest.raises(ValueError):
        bicycle_step(EgoKinState(0, 0, 0, 1.0), 0, 0, 0.0, DIMS)


def euler_vs_rk4(dt, duration=1.0):
    dims = VehicleDims(4.6, 1.9, 3.0)
    steps = int(round(duration / dt))
    s = EgoKinState(0.0, 0.0, 0.0, 5.0)
    for _ in range(steps):
        s = bicycle_step(s, 0.0, 0.1, dt, dims)
    z = bicycle_rk4(0.0, 0.0, 0.0, 5.0, 0.0, 0.1, 3.0, dt, steps)
    return math.hypot(s.x - z[0], s.y - z[1])


def test_euler_converges_first_order_to_rk4():
    # the forward-Euler position error halves with the step
    errs = [euler_vs_rk4(dt) for dt in (0.02, 0.01, 0.005)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.05)
    assert euler_vs_rk4(0.001) < 1e-3


def test_lqr_gain_is_fixed_point():
    k0, k1 = lqr_gain(5.0, 0.1, ((1, 0), (0, 10)), 1.0)
    # closed loop must be stable
    A = np.array([[1, 0.5], [0, 1]])
    B = np.array([[0], [0.1]])
    eig = np.linalg.eigvals(A - B @ np.array([[k0, k1]]))
    assert np.all(np.abs(eig) < 1)
    assert k0 > 0 and k1 > 0


def test_lqr_gain_matches_dare():
    # independent Riccati iteration in matrix form
    A = np.array([[1.0, 0.8], [0.0, 1.0]])
    B = np.array([[0.0], [0.1]])
    Q = np.diag([1.0, 10.0])
    P = Q.copy()
    for _ in range(20000):
        K = np.linalg.solve(1.0 + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
    got = lqr_gain(8.0, 0.1, ((1, 0), (0, 10)), 1.0)
    np.testing.assert_allclose(got, K[0], rtol=1e-8)


def test_feasible_references_tracked():
    rng = np.random.default_rng(5)
    cfg = SimConfig()
    for _ in range(20):
        scene, ref = feasible_reference(rng)
        r = lqr_track(ref, scene, cfg)
        assert len(r) == 41 and r.dt == pytest.approx(0.1)
        assert math.hypot(*(r.poses[-1, :2] - ref[-1, :2])) < 0.2
        assert abs(wrap_angle(r.poses[-1, 2] - ref[-1, 2])) < 0.05


def test_straight_constant_speed_lateral_error():
    v = 8.0
    scene = open_scene(v)
    t = np.arange(1, 9) * 0.5
    ref = np.stack([v * t, np.zeros_like(t), np.zeros_like(t)], 1)
    r = lqr_track(ref, scene, SimConfig())
    assert np.max(np.abs(r.poses[:, 1])) < 0.05
    assert abs(r.poses[-1, 0] - 32.0) < 0.05


def test_rigid_equivariance():
    rng = np.random.default_rng(8)
    cfg = SimConfig()
    scene, ref = feasible_reference(rng)
    base = lqr_track(ref, scene, cfg)
    phi, tx, ty = 0.7, 12.0, -30.0
    moved_scene = open_scene(scene.ego_velocity, pose=tuple(rigid(scene.ego_pose.as_array(), phi, tx, ty)))
    moved = lqr_track(rigid(ref, phi, tx, ty), moved_scene, cfg)
    expect = rigid(base.poses, phi, tx, ty)
    assert np.max(np.abs(moved.poses[:, :2] - expect[:, :2])) < 1e-9
    assert np.max(np.abs(wrap_angle(moved.poses[:, 2] - expect[:, 2]))) < 1e-9


def test_lqr_rejects_bad_proposal():
    with pytest.raises(ValueError):
        lqr_track(np.zeros((0, 3)), open_scene(), SimConfig())
    with pytest.raises(ValueError):
        lqr_track(np.full((8, 3), np.nan), open_scene(), SimConfig())


def test_replay_positions_exact():
    rng = np.random.default_rng(1)
    ref = np.cumsum(rng.uniform(0, 3, (6, 3)), axis=0)
    ref[:, 2] = wrap_angle(ref[:, 2])
    scene = open_scene(2.0)
    r = replay_track(ref, scene, B2D)
    assert r.dt == 0.5 and len(r) == 7
    np.testing.assert_array_equal(r.poses[1:], ref)
    np.testing.assert_array_equal(r.poses[0], scene.ego_pose.as_array())


def test_replay_constant_velocity_has_no_acceleration():
    t = np.arange(1, 7) * 0.5
    ref = np.stack([4.0 * t, np.zeros_like(t), np.zeros_like(t)], 1)
    r = replay_track(ref, open_scene(4.0), B2D)
    assert np.max(np.abs(r.acceleration)) < 1e-9
    np.testing.assert_allclose(r.velocity, 4.0)


def test_replay_velocity_step():
    # 4 m/s for the first three steps then 6 m/s
    x = np.cumsum([2.0, 2.0, 2.0, 3.0, 3.0, 3.0])
    ref = np.stack([x, np.zeros(6), np.zeros(6)], 1)
    r = replay_track(ref, open_scene(4.0), B2D)
    np.testing.assert_allclose(r.velocity, [4, 4, 4, 4, 6, 6, 6])
    np.testing.assert_allclose(r.acceleration[1:], [0, 0, 0, 4.0, 0, 0])


def test_simulate_dispatch():
    t = np.arange(1, 9) * 0.5
    ref = np.stack([5 * t, 0 * t, 0 * t], 1)
    assert simulate(ref, open_scene(5.0), SimConfig()).dt == pytest.approx(0.1)
    assert simulate(ref, open_scene(5.0), B2D).dt == 0.5


def circular_rollout(v=10.0, radius=50.0, dt=0.1, n=41):
    t = np.arange(n) * dt
    w = v / radius
    poses = np.stack([radius * np.sin(w * t), radius * (1 - np.cos(w * t)), wrap_angle(w * t)], 1)
    return Rollout(dt, poses, np.full(n, v), np.zeros(n), np.zeros(n))


def test_circular_motion_profile():
    p = kinematic_profile(circular_rollout())
    assert np.max(np.abs(p.lat_acc - 2.0)) < 1e-3
    assert np.max(np.abs(p.yaw_rate - 0.2)) < 1e-6


def test_straight_profile_is_zero():
    n = 41
    t = np.arange(n) * 0.1
    poses = np.stack([7 * t + 3, 2 * t, np.full(n, math.atan2(2, 7))], 1)
    p = kinematic_profile(Rollout(0.1, poses, np.zeros(n), np.zeros(n), np.zeros(n)))
    for name in ("lon_acc", "lat_acc", "jerk", "lon_jerk", "yaw_rate", "yaw_acc"):
        assert np.max(np.abs(getattr(p, name))) < 1e-9, name
    assert np.allclose(p.speed, math.hypot(7, 2))


def test_quadratic_profile_exact():
    n = 41
    t = np.arange(n) * 0.1
    poses = np.stack([0.5 * 2.4 * t ** 2, np.zeros(n), np.zeros(n)], 1)
    p = kinematic_profile(Rollout(0.1, poses, np.zeros(n), np.zeros(n), np.zeros(n)))
    assert np.max(np.abs(p.lon_acc - 2.4)) < 1e-9
    assert np.max(np.abs(p.lon_jerk)) < 1e-9


def test_profile_lengths_and_minimum():
    r = circular_rollout(n=3)
    p = kinematic_profile(r)
    assert all(len(getattr(p, f)) == 3 for f in ("speed", "jerk", "yaw_acc"))
    with pytest.raises(ValueError):
        kinematic_profile(circular_rollout(n=2))


@settings(max_examples=30, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50))
def test_profile_rigid_invariance(phi, tx, ty):
    r = circular_rollout(v=6.0, radius=20.0)
    moved = Rollout(r.dt, rigid(r.poses, phi, tx, ty), r.velocity, r.acceleration, r.steering)
    a, b = kinematic_profile(r), kinematic_profile(moved)
    for name in ("speed", "lon_acc", "lat_acc", "yaw_rate", "yaw_acc"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-7)


def test_rollout_tick_lookup():
    r = circular_rollout()
    assert r.tick_of(0.5) == 5
    with pytest.raises(ValueError):
        r.tick_of(0.55)
