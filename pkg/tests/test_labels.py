import math

import numpy as np
import pytest

from proposal_scorer.config import SimConfig
from proposal_scorer.labels import labels_to_json, mapping_labels, prediction_targets
from proposal_scorer.metrics import Attribution, ScoreCard, SubMetrics, score_proposals
from proposal_scorer.scene import AgentTrack, VehicleDims, agent_state_at, proposal_times
from proposal_scorer.simulator import Rollout

from conftest import make_scene, parked_vehicle, rect
from oracles import box_template_corners

T = 8


def straight_proposal(v=5.0, y=0.0):
    t = proposal_times(T)
    return np.stack([v * t, np.full_like(t, y), np.zeros_like(t)], 1)


def replayed(proposals):
    """10 Hz rollouts that visit each proposal pose exactly at its planning time."""
    t = np.arange(41) * 0.1
    knots_t = np.concatenate([[0.0], proposal_times(T)])
    out = []
    for p in proposals:
        knots = np.vstack([[0.0, 0.0, 0.0], p])
        poses = np.stack([np.interp(t, knots_t, knots[:, k]) for k in range(3)], 1)
        out.append(Rollout(0.1, poses, np.ones(41), np.zeros(41), np.zeros(41)))
    return out


def test_all_true_inside_huge_road():
    props = straight_proposal()[None]
    labels = mapping_labels(props, make_scene(), replayed(props))
    assert labels.values.shape == (1, T, 2) and labels.values.all()


def test_single_step_off_road():
    p = straight_proposal()
    p[2, 1] = 2.5  # step index 2 (t = 1.5 s) pushed sideways against an edge at y = 3
    scene = make_scene(road=rect(-50, 200, -20, 3.0))
    labels = mapping_labels(p[None], scene, replayed(p[None]))
    assert labels.values[0, :, 0].tolist() == [True, True, False, True, True, True, True, True]
    # oracle: the corners at that step
    c = box_template_corners(p[2, 0] + 1.0, 2.5, 0.0, 4.0, 2.0)
    assert c[:, 1].max() > 3.0


def test_lane_change_off_route_from_step():
    p = straight_proposal()
    p[4:, 1] = 3.5  # half width 2 -> off route from index 4 (t = 2.5 s)
    labels = mapping_labels(p[None], make_scene(half_width=2.0), replayed(p[None]))
    assert labels.values[0, :, 1].tolist() == [True] * 4 + [False] * 4
    assert labels.values[0, :, 0].all()


def test_rollout_count_mismatch():
    props = straight_proposal()[None]
    with pytest.raises(ValueError):
        mapping_labels(props, make_scene(), [])


def test_clean_proposal_no_targets():
    scene = make_scene(bound=20.0)
    props = straight_proposal()[None]
    cards = score_proposals(props, scene, SimConfig())
    tgt = prediction_targets(props, scene, cards)
    assert not tgt.validity.any() and not tgt.corners.any()


def test_colliding_agent_slot_zero():
    agent = parked_vehicle(7, 15.0, 0.0, h=0.2)
    scene = make_scene(agents=[agent], bound=20.0)
    props = straight_proposal()[None]
    cards = score_proposals(props, scene, SimConfig())
    assert cards[0].first_at_fault.agent_id == 7
    tgt = prediction_targets(props, scene, cards)
    assert tgt.validity[0, :, 0].all()
    for k, t in enumerate(proposal_times(T)):
        pose, _, _ = agent_state_at(agent, t)
        np.testing.assert_allclose(tgt.corners[0, k, 0], box_template_corners(pose.x, pose.y, pose.heading, 4, 2),
                                   atol=1e-12)


def test_disappearing_agent_validity():
    states = np.array([[0.0, 10.0, 5.0, 0.0, 1.0, 1.0], [2.0, 12.0, 5.0, 0.0, 1.0, 1.0],
                       [2.5, 12.5, 5.0, 0.0, 1.0, 0.0], [4.0, 14.0, 5.0, 0.0, 1.0, 0.0]])
    agent = AgentTrack("bus", "vehicle", VehicleDims(4, 2, 2), states)
    scene = make_scene(agents=[agent])
    card = ScoreCard(SubMetrics(0.0, 1, 1, 1, 1), 0.0, Attribution("bus", 3), None)
    tgt = prediction_targets(straight_proposal()[None], scene, [card])
    assert tgt.validity[0, :, 0].tolist() == [t <= 2.0 for t in proposal_times(T)]
    assert not tgt.corners[0, ~tgt.validity[0, :, 0], 0].any()


def test_unknown_attribution():
    card = ScoreCard(SubMetrics(0.0, 1, 1, 1, 1), 0.0, Attribution("ghost", 0), None)
    with pytest.raises(LookupError):
        prediction_targets(straight_proposal()[None], make_scene(), [card])


def test_labels_json_shape():
    props = straight_proposal()[None]
    labels = mapping_labels(props, make_scene(), replayed(props))
    tgt = prediction_targets(props, make_scene(), [ScoreCard(SubMetrics(1, 1, 1, 1, 1), 1.0)])
    js = labels_to_json(labels, tgt)
    assert set(js["0"]) == {"on_road", "on_route", "agent_corners", "agent_valid"}
    assert len(js["0"]["agent_corners"]) == T
    assert math.isfinite(js["0"]["agent_corners"][0][0][0][0])
