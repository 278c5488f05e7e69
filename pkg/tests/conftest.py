import numpy as np
import pytest

from proposal_scorer.config import SimConfig
from proposal_scorer.geometry import Polyline
from proposal_scorer.scene import AgentTrack, Pose2D, Route, Scene, VehicleDims
from proposal_scorer.simulator import Rollout

EGO = VehicleDims(4.0, 2.0, 2.0)  # footprint centre 1 m ahead of the rear axle


def rect(x0, x1, y0, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def make_scene(agents=(), road=None, route=None, half_width=2.0, v0=0.0, a0=0.0, pose=(0.0, 0.0, 0.0),
               dims=EGO, expert=None, mode="navsim", bound=None, cameras=()):
    road = rect(-50, 200, -20, 20) if road is None else road
    route = np.array([[-50.0, 0.0], [200.0, 0.0]]) if route is None else route
    return Scene(Pose2D(*pose), v0, a0, dims, tuple(agents), (road,),
                 Route(Polyline(route), half_width, bound), tuple(cameras), expert, mode)


def static_agent(aid, x, y, h=0.0, length=4.0, width=2.0, category="static_object"):
    return AgentTrack(aid, category, VehicleDims(length, width, 0.5 * length),
                      np.array([[0.0, x, y, h, 0.0, 1.0]]))


def parked_vehicle(aid, x, y, h=0.0, length=4.0, width=2.0, t_end=10.0):
    return AgentTrack(aid, "vehicle", VehicleDims(length, width, 0.5 * length),
                      np.array([[0.0, x, y, h, 0.0, 1.0], [t_end, x, y, h, 0.0, 1.0]]))


def straight_rollout(v, duration=4.0, dt=0.1, x0=0.0, y0=0.0, heading=0.0):
    t = np.arange(int(round(duration / dt)) + 1) * dt
    poses = np.stack([x0 + v * t * np.cos(heading), y0 + v * t * np.sin(heading), np.full_like(t, heading)], 1)
    n = len(t)
    return Rollout(dt, poses, np.full(n, float(v)), np.zeros(n), np.zeros(n))


def rollout_from_poses(poses, dt=0.1, velocity=None):
    poses = np.asarray(poses, dtype=float)
    n = len(poses)
    v = np.zeros(n) if velocity is None else np.broadcast_to(velocity, (n,)).astype(float)
    return Rollout(dt, poses, v, np.zeros(n), np.zeros(n))


@pytest.fixture
def navsim_cfg():
    return SimConfig(mode="navsim")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
