"""One forward pass of the refinement kernel on random weights.

The weights are untrained, so the proposals are noise; the point is to show
the shapes flowing through the predict / self-attend / cross-attend cycle and
the scoring head picking one proposal.

    python demos/kernel_forward.py
"""
import numpy as np

from proposal_scorer import KernelConfig, gen_synthetic, init_weights, run_proformer, score_head
from proposal_scorer.proformer import FeatureGrid, ego_status, select_best

cfg = KernelConfig(N=16, T=8, K=3, C=32, heads=4, keys=4, n_ref=4, status_dim=8, hidden=64)
w = init_weights(cfg, seed=0)

scene = gen_synthetic(3)
rng = np.random.default_rng(0)
# random stand-ins for backbone features, one map per camera at stride 8
views = rng.standard_normal((len(scene.cameras), cfg.C, 56, 100))
features = FeatureGrid(views, scene.cameras, stride=8.0)

proposals, Q = run_proformer(ego_status(scene, cfg.status_dim), features, w, scene.ego_dims)
scores = score_head(Q, w)

print("proposals per iteration:", proposals.shape)
print("final queries:", Q.shape)
for k in range(cfg.K):
    spread = np.linalg.norm(proposals[k, :, -1, :2] - proposals[k, :, -1, :2].mean(0), axis=1).mean()
    print(f"iteration {k}: mean endpoint spread {spread:.2f} m")
i = select_best(scores)
print(f"best proposal {i} with score {scores[i]:.3f}")
