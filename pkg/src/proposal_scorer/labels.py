"""Ground-truth targets for the proposal-centric mapping and prediction heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import corners_from_poses
from .metrics import on_road_flags, on_route_flags
from .scene import PLANNING_DT, Scene, agent_states_at, proposal_times
from .simulator import Rollout


@dataclass(frozen=True, eq=False)
class MappingLabels:
    values: np.ndarray  # (N, T, 2) bool: [on_road, on_route]


@dataclass(frozen=True, eq=False)
class PredictionTargets:
    corners: np.ndarray  # (N, T, 2, 4, 2); slot 0 at-fault, slot 1 TTC
    validity: np.ndarray  # (N, T, 2) bool


def _planning_ticks(r: Rollout, T: int) -> np.ndarray:
    ticks = np.rint(proposal_times(T) / r.dt).astype(int)
    if ticks[-1] >= len(r):
        raise ValueError(f"rollout of {len(r)} ticks does not reach t={T * PLANNING_DT}s")
    return ticks


def _subset(r: Rollout, ticks) -> Rollout:
    return Rollout(r.dt, r.poses[ticks], r.velocity[ticks], r.acceleration[ticks], r.steering[ticks])


def mapping_labels(proposals, scene: Scene, rollouts) -> MappingLabels:
    """On-road / on-route flags of each rollout at the planning timestamps."""
    proposals = np.asarray(proposals, dtype=float)
    N, T = proposals.shape[:2]
    if len(rollouts) != N or any(r is None for r in rollouts):
        raise ValueError("one rollout per proposal is required")
    out = np.zeros((N, T, 2), dtype=bool)
    for n, r in enumerate(rollouts):
        sub = _subset(r, _planning_ticks(r, T))
        out[n, :, 0] = on_road_flags(sub, scene)
        out[n, :, 1] = on_route_flags(sub, scene)
    return MappingLabels(out)


def prediction_targets(proposals, scene: Scene, scorecards) -> PredictionTargets:
    """Corner tracks of the first at-fault and first TTC agents per proposal.

    Missing attributions and invalid timesteps are zero-filled with
    validity False.
    """
    proposals = np.asarray(proposals, dtype=float)
    N, T = proposals.shape[:2]
    if len(scorecards) != N:
        raise ValueError("one scorecard per proposal is required")
    times = proposal_times(T)
    corners = np.zeros((N, T, 2, 4, 2))
    validity = np.zeros((N, T, 2), dtype=bool)
    by_id = {a.id: a for a in scene.agents}
    for n, card in enumerate(scorecards):
        for slot, attr in enumerate((card.first_at_fault, card.first_ttc)):
            if attr is None:
                continue
            if attr.agent_id not in by_id:
                raise LookupError(f"scorecard {n} attributes unknown agent {attr.agent_id!r}")
            agent = by_id[attr.agent_id]
            poses, _, valid = agent_states_at(agent, times)
            c = corners_from_poses(poses[:, 0], poses[:, 1], poses[:, 2], agent.dims.length, agent.dims.width)
            corners[n, valid, slot] = c[valid]
            validity[n, :, slot] = valid
    return PredictionTargets(corners, validity)


def labels_to_json(mapping: MappingLabels, targets: PredictionTargets) -> dict:
    """JSON-ready labels keyed by proposal index."""
    out = {}
    for n in range(mapping.values.shape[0]):
        out[str(n)] = {
            "on_road": mapping.values[n, :, 0].tolist(),
            "on_route": mapping.values[n, :, 1].tolist(),
            "agent_corners": targets.corners[n].tolist(),
            "agent_valid": targets.validity[n].tolist(),
        }
    return out
