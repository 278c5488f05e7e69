"""Closed-loop scoring of ego trajectory proposals plus a numpy reference of a
proposal-centric attention kernel."""
from .config import ComfortThresholds, SimConfig, load_config, with_mode
from .geometry import (OrientedBox, Polyline, box_corners, boxes_intersect, point_in_polygon, points_in_polygon,
                       project_to_polyline)
from .labels import MappingLabels, PredictionTargets, mapping_labels, prediction_targets
from .losses import LossWeights, map_loss, mon_proposal_loss, pred_loss, score_loss, total_loss
from .metrics import ScoreCard, SubMetrics, pdm_score, score_proposal, score_proposals
from .proformer import (KernelConfig, KernelWeights, bilinear_sample, deform_attn, init_weights, run_proformer,
                        score_head, self_attn_step, spatial_cross_attn)
from .scene import (AgentTrack, CameraModel, Pose2D, Route, Scene, SceneError, VehicleDims, load_scene,
                    save_scene)
from .simulator import Rollout, bicycle_step, kinematic_profile, lqr_track, simulate
from .synthetic import GenSpec, gen_synthetic

__version__ = "0.1.0"
