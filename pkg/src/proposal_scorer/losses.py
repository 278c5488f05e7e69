"""Reference (forward-only) implementations of the training losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_discount: float = 0.1
    w_score: float = 1.0
    w_map: float = 2.0
    w_pred: float = 1.0
    w_bce: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.lambda_discount < 1.0:
            raise ValueError("lambda_discount must lie in (0, 1)")
        if min(self.w_score, self.w_map, self.w_pred, self.w_bce) < 0:
            raise ValueError("loss weights must be non-negative")


def mon_proposal_loss(proposals_per_iter, expert, lam: float = 0.1) -> float:
    """Discounted minimum-over-N L1 loss across refinement iterations.

    ``proposals_per_iter`` is ``(K, N, T, 3)``; the last iteration has weight 1
    and iteration k is scaled by ``lam ** (K - 1 - k)``.
    """
    P = np.asarray(proposals_per_iter, dtype=float)
    E = np.asarray(expert, dtype=float)
    if P.ndim != 4 or P.shape[-1] != 3 or P.shape[2:] != E.shape:
        raise ValueError(f"shape mismatch: proposals {P.shape} vs expert {E.shape}")
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    K = P.shape[0]
    per_iter = np.abs(P - E).sum(axis=(2, 3)).min(axis=1)
    return float(sum(lam ** (K - 1 - k) * per_iter[k] for k in range(K)))


def bce(pred, target) -> float:
    """Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    x = np.clip(np.asarray(pred, dtype=float), EPS, 1.0 - EPS)
    y = np.asarray(target, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.mean(-y * np.log(x) - (1.0 - y) * np.log(1.0 - x)))


def score_loss(scores, score_targets) -> float:
    return bce(scores, score_targets)


def map_loss(map_probs, map_labels) -> float:
    labels = getattr(map_labels, "values", map_labels)
    return bce(map_probs, labels)


def pred_loss(corner_pred, valid_pred, targets, w_bce: float = 0.1) -> float:
    """Validity-masked mean L1 on agent corners plus weighted validity BCE."""
    Ac = np.asarray(corner_pred, dtype=float)
    Av = np.asarray(valid_pred, dtype=float)
    if Ac.shape != targets.corners.shape or Av.shape != targets.validity.shape:
        raise ValueError("prediction shapes do not match the targets")
    mask = np.broadcast_to(targets.validity[..., None, None], Ac.shape)
    n = np.count_nonzero(mask)
    l1 = float(np.abs(Ac - targets.corners)[mask].sum() / n) if n else 0.0
    return l1 + w_bce * bce(Av, targets.validity.astype(float))


def total_loss(proposal: float, score: float, mapping: float, prediction: float,
               w: LossWeights = LossWeights()) -> float:
    parts = (proposal, score, mapping, prediction)
    if not all(np.isfinite(parts)):
        raise ValueError("loss parts must be finite")
    return proposal + w.w_score * score + w.w_map * mapping + w.w_pred * prediction
