"""Forward-only numpy reference of the proposal-refinement encoder.

One iteration maps queries ``Q (N, T, C)`` to proposals, lets every query
attend to a BEV scatter of all queries around its own proposal point
(deformable self-attention), then to multi-view image features sampled
around the projected pillars of the proposal's footprint corners
(deformable spatial cross-attention), and finishes with a linear update.
The same block weights are reused at every iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import corners_from_poses
from .scene import CameraModel, VehicleDims, wrap_angle

DEFAULT_DIMS = VehicleDims(4.6, 1.9, 2.8)


@dataclass(frozen=True)
class KernelConfig:
    N: int = 64
    T: int = 8
    K: int = 4
    C: int = 256
    heads: int = 8
    keys: int = 4
    n_ref: int = 4
    z_range: tuple = (-1.0, 3.0)
    status_dim: int = 8
    hidden: int = 256
    bev_range: tuple = (-32.0, 32.0, -32.0, 32.0)  # x_min, x_max, y_min, y_max
    bev_res: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "z_range", tuple(float(z) for z in self.z_range))
        object.__setattr__(self, "bev_range", tuple(float(b) for b in self.bev_range))
        if self.C % self.heads:
            raise ValueError("C must be divisible by heads")
        for name in ("N", "T", "K", "C", "heads", "keys", "n_ref", "status_dim", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        x0, x1, y0, y1 = self.bev_range
        if not (x1 > x0 and y1 > y0 and self.bev_res > 0):
            raise ValueError("bad BEV range or resolution")

    @property
    def head_dim(self) -> int:
        return self.C // self.heads

    @property
    def bev_shape(self) -> tuple:
        x0, x1, y0, y1 = self.bev_range
        return int(round((y1 - y0) / self.bev_res)), int(round((x1 - x0) / self.bev_res))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def tensor_shapes(cfg: KernelConfig) -> dict:
    C, hd, h, k = cfg.C, cfg.head_dim, cfg.heads, cfg.keys
    shapes = {
        "ego_encoder.weight": (cfg.status_dim, C),
        "ego_encoder.bias": (C,),
        "positional_embedding": (cfg.N, cfg.T, C),
        "proposal_mlp.w1": (C, cfg.hidden),
        "proposal_mlp.b1": (cfg.hidden,),
        "proposal_mlp.w2": (cfg.hidden, 3),
        "proposal_mlp.b2": (3,),
        "query_update.weight": (C, C),
        "query_update.bias": (C,),
        "score_mlp.w1": (C, cfg.hidden),
        "score_mlp.b1": (cfg.hidden,),
        "score_mlp.w2": (cfg.hidden, 1),
        "score_mlp.b2": (1,),
    }
    for blk in ("sa", "sca"):
        shapes.update({
            f"{blk}.value_proj": (h, hd, C),
            f"{blk}.output_proj": (h, C, hd),
            f"{blk}.offset.weight": (C, h * k * 2),
            f"{blk}.offset.bias": (h * k * 2,),
            f"{blk}.attn.weight": (C, h * k),
            f"{blk}.attn.bias": (h * k,),
        })
    return shapes


@dataclass(frozen=True)
class AttnBlock:
    """Weights of one deformable attention block (per-head ``W_i``, ``W'_i``)."""

    value_proj: np.ndarray  # (heads, C/heads, C)
    output_proj: np.ndarray  # (heads, C, C/heads)
    offset_w: np.ndarray  # (C, heads*keys*2)
    offset_b: np.ndarray
    attn_w: np.ndarray  # (C, heads*keys)
    attn_b: np.ndarray

    @property
    def heads(self) -> int:
        return self.value_proj.shape[0]

    @property
    def keys(self) -> int:
        return self.attn_w.shape[1] // self.heads

    def sampling(self, q):
        """Offsets ``(..., heads, keys, 2)`` and softmax weights ``(..., heads, keys)``."""
        q = np.asarray(q, dtype=float)
        h, k = self.heads, self.keys
        off = (q @ self.offset_w + self.offset_b).reshape(q.shape[:-1] + (h, k, 2))
        logits = (q @ self.attn_w + self.attn_b).reshape(q.shape[:-1] + (h, k))
        logits = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        return off, e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class KernelWeights:
    config: KernelConfig
    tensors: dict = field(repr=False)

    def __post_init__(self):
        expected = tensor_shapes(self.config)
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ValueError(f"weight names mismatch; missing={missing} unexpected={extra}")
        clean = {}
        for name, shape in expected.items():
            t = np.array(self.tensors[name], dtype=float)
            if t.shape != shape:
                raise ValueError(f"{name}: shape {t.shape} != expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"{name}: non-finite values")
            t.setflags(write=False)
            clean[name] = t
        object.__setattr__(self, "tensors", clean)

    def __getitem__(self, name) -> np.ndarray:
        return self.tensors[name]

    def block(self, prefix: str) -> AttnBlock:
        t = self.tensors
        return AttnBlock(t[f"{prefix}.value_proj"], t[f"{prefix}.output_proj"],
                         t[f"{prefix}.offset.weight"], t[f"{prefix}.offset.bias"],
                         t[f"{prefix}.attn.weight"], t[f"{prefix}.attn.bias"])

    def __eq__(self, other):
        return (isinstance(other, KernelWeights) and self.config == other.config
                and all(np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items()))

    __hash__ = None


def init_weights(cfg: KernelConfig, seed: int = 0, offset_scale: float = 2.0) -> KernelWeights:
    """Seeded random weights.

    A ``numpy.random.default_rng(seed)`` stream fills tensors in sorted-name
    order with standard normals, scaled by ``1/sqrt(fan_in)`` for matrices,
    0.1 for biases, 1.0 for the positional embedding and
    ``offset_scale/sqrt(C)`` for offset predictors.  Values are rounded to
    float32 so a saved-and-reloaded container compares equal.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in sorted(tensor_shapes(cfg).items()):
        x = rng.standard_normal(shape)
        if name == "positional_embedding":
            scale = 1.0
        elif name.endswith("offset.weight"):
            scale = offset_scale / math.sqrt(cfg.C)
        elif name.endswith("bias") or name.split(".")[-1].startswith("b"):
            scale = 0.1
        elif name.endswith("value_proj"):
            scale = 1.0 / math.sqrt(shape[2])
        elif name.endswith("output_proj"):
            scale = 1.0 / math.sqrt(shape[2] * cfg.heads)
        else:
            scale = 1.0 / math.sqrt(shape[0])
        tensors[name] = (x * scale).astype(np.float32).astype(float)
    return KernelWeights(cfg, tensors)


# --------------------------------------------------------------------------
# sampling and attention primitives

def bilinear_sample(view, p) -> np.ndarray:
    """Sample a ``(C, H, W)`` map at continuous ``p = (col, row)``; zero outside."""
    return bilinear_sample_many(view, np.asarray(p, dtype=float)[None])[..., 0]


def bilinear_sample_many(view, pts) -> np.ndarray:
    """Sample ``(C, H, W)`` at points ``(..., 2)``; returns ``(C, ...)``."""
    view = np.asarray(view, dtype=float)
    C, H, W = view.shape
    pts = np.asarray(pts, dtype=float)
    u, v = pts[..., 0], pts[..., 1]
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    u = np.where(inside, u, 0.0)
    v = np.where(inside, v, 0.0)
    u0 = np.clip(np.floor(u).astype(int), 0, max(W - 2, 0))
    v0 = np.clip(np.floor(v).astype(int), 0, max(H - 2, 0))
    fu, fv = u - u0, v - v0
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    out = ((1 - fu) * (1 - fv) * view[:, v0, u0] + fu * (1 - fv) * view[:, v0, u1]
           + (1 - fu) * fv * view[:, v1, u0] + fu * fv * view[:, v1, u1])
    return np.where(inside, out, 0.0)


def _sample_heads(values, loc):
    """Per-head bilinear sampling.

    values ``(h, d, H, W)``; loc ``(P, h, k, 2)`` -> ``(P, h, k, d)``.
    """
    h, d, H, W = values.shape
    u, v = loc[..., 0], loc[..., 1]
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    u = np.where(inside, u, 0.0)
    v = np.where(inside, v, 0.0)
    u0 = np.clip(np.floor(u).astype(np.int64), 0, max(W - 2, 0))
    v0 = np.clip(np.floor(v).astype(np.int64), 0, max(H - 2, 0))
    fu, fv = u - u0, v - v0
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    flat = values.reshape(h, d, H * W).transpose(0, 2, 1)  # (h, HW, d)
    hidx = np.arange(h).reshape((1, h, 1))
    inside = inside.astype(float)
    out = flat[hidx, v0 * W + u0] * ((1 - fu) * (1 - fv) * inside)[..., None]
    out += flat[hidx, v0 * W + u1] * (fu * (1 - fv) * inside)[..., None]
    out += flat[hidx, v1 * W + u0] * ((1 - fu) * fv * inside)[..., None]
    out += flat[hidx, v1 * W + u1] * (fu * fv * inside)[..., None]
    return out


def _deform_many(q, ref, mask, view, block: AttnBlock):
    """Sum over reference points of deformable attention.

    q ``(M, C)``, ref ``(M, R, 2)``, mask ``(M, R)``, view ``(C, H, W)``.
    Only masked-in (query, reference) pairs are sampled.  Returns ``(M, C)``.
    """
    off, A = block.sampling(q)  # (M, h, k, 2), (M, h, k)
    values = np.einsum("hdc,cyx->hdyx", block.value_proj, view)
    m_idx, r_idx = np.nonzero(mask)
    per_query = np.zeros((q.shape[0], block.heads, values.shape[1]))
    if len(m_idx):
        loc = ref[m_idx, r_idx][:, None, None, :] + off[m_idx]
        sampled = _sample_heads(values, loc)  # (P, h, k, d)
        per_pair = np.einsum("phkd,phk->phd", sampled, A[m_idx])
        uniq, starts = np.unique(m_idx, return_index=True)
        per_query[uniq] = np.add.reduceat(per_pair, starts, axis=0)
    return np.einsum("hcd,mhd->mc", block.output_proj, per_query)


def deform_attn(q, p, x, block: AttnBlock) -> np.ndarray:
    """Deformable attention of one query at reference point ``p = (col, row)`` over ``x (C, H, W)``."""
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    if q.shape != (x.shape[0],) or block.value_proj.shape[2] != q.shape[0]:
        raise ValueError("query / feature / weight channel mismatch")
    ref = np.asarray(p, dtype=float).reshape(1, 1, 2)
    return _deform_many(q[None], ref, np.ones((1, 1), dtype=bool), x, block)[0]


# --------------------------------------------------------------------------
# self-attention over the BEV scatter of queries

def bev_coords(xy, cfg: KernelConfig) -> np.ndarray:
    """Metric BEV positions to continuous grid ``(col, row)``; cell centres are integers."""
    xy = np.asarray(xy, dtype=float)
    x0, _, y0, _ = cfg.bev_range
    return np.stack([(xy[..., 0] - x0) / cfg.bev_res - 0.5, (xy[..., 1] - y0) / cfg.bev_res - 0.5], -1)


def scatter_queries(Q, P, cfg: KernelConfig) -> np.ndarray:
    """Mean-pool queries into the BEV cell holding their proposal point; ``(C, H, W)``."""
    Q = np.asarray(Q, dtype=float)
    H, W = cfg.bev_shape
    x0, _, y0, _ = cfg.bev_range
    flat_q = Q.reshape(-1, Q.shape[-1])
    xy = np.asarray(P, dtype=float)[..., :2].reshape(-1, 2)
    col = np.floor((xy[:, 0] - x0) / cfg.bev_res).astype(np.int64)
    row = np.floor((xy[:, 1] - y0) / cfg.bev_res).astype(np.int64)
    ok = (col >= 0) & (col < W) & (row >= 0) & (row < H)
    cell = row[ok] * W + col[ok]
    sums = np.zeros((H * W, flat_q.shape[1]))
    np.add.at(sums, cell, flat_q[ok])
    counts = np.bincount(cell, minlength=H * W).astype(float)
    grid = sums / np.maximum(counts, 1.0)[:, None]
    return grid.T.reshape(flat_q.shape[1], H, W)


def self_attn_step(Q, P, w: KernelWeights) -> np.ndarray:
    """Residual proposal-anchored deformable self-attention."""
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    if Q.shape[:2] != P.shape[:2] or P.shape[-1] != 3 or Q.shape[-1] != w.config.C:
        raise ValueError(f"shape mismatch: Q {Q.shape}, P {P.shape}")
    cfg = w.config
    grid = scatter_queries(Q, P, cfg)
    flat = Q.reshape(-1, cfg.C)
    ref = bev_coords(P[..., :2].reshape(-1, 2), cfg)[:, None, :]
    mask = np.ones(ref.shape[:2], dtype=bool)
    out = flat + _deform_many(flat, ref, mask, grid, w.block("sa"))
    return out.reshape(Q.shape)


# --------------------------------------------------------------------------
# pillar projection and spatial cross-attention

@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """Per-view feature maps ``(I, C, H, W)`` with their cameras.

    Feature coordinates are image pixels divided by ``stride``.
    """

    views: np.ndarray
    cameras: tuple
    stride: float = 8.0

    def __post_init__(self):
        v = np.array(self.views, dtype=float)
        if v.ndim != 4 or v.shape[2] < 2 or v.shape[3] < 2:
            raise ValueError("views must be (I, C, H, W) with H, W >= 2")
        if len(self.cameras) != v.shape[0]:
            raise ValueError("one camera per view is required")
        v.setflags(write=False)
        object.__setattr__(self, "views", v)
        object.__setattr__(self, "cameras", tuple(self.cameras))


def pillar_heights(z_range, n_ref) -> np.ndarray:
    return np.linspace(z_range[0], z_range[1], n_ref)


def project_points3d(points, cam: CameraModel):
    """World points ``(..., 3)`` -> pixels ``(..., 2)`` and hit flags."""
    pts = np.asarray(points, dtype=float)
    cam_pts = pts @ cam.rotation.T + cam.translation
    depth = cam_pts[..., 2]
    h = cam_pts @ cam.intrinsics.T
    with np.errstate(divide="ignore", invalid="ignore"):
        pix = h[..., :2] / h[..., 2:3]
    w_img, h_img = cam.image_size
    hit = ((depth > 0) & (pix[..., 0] >= 0) & (pix[..., 0] < w_img)
           & (pix[..., 1] >= 0) & (pix[..., 1] < h_img))
    pix = np.where(hit[..., None], pix, 0.0)
    return pix, hit


def project_pillar_points(corner, cam: CameraModel, z_range=(-1.0, 3.0), n_ref: int = 4):
    """Lift a BEV point into ``n_ref`` pillar heights and project; list of (pixel, hit)."""
    x, y = map(float, corner)
    z = pillar_heights(z_range, n_ref)
    pts = np.stack([np.full_like(z, x), np.full_like(z, y), z], -1)
    pix, hit = project_points3d(pts, cam)
    return [(pix[i], bool(hit[i])) for i in range(n_ref)]


def _sca_core(flat, pts3d, features: FeatureGrid, block: AttnBlock) -> np.ndarray:
    """Cross-attention contribution for queries ``(M, C)`` with pillar points ``(M, R, 3)``."""
    M = flat.shape[0]
    total = np.zeros_like(flat)
    n_hit_views = np.zeros(M)
    for view, cam in zip(features.views, features.cameras):
        pix, hit = project_points3d(pts3d, cam)
        any_hit = hit.any(axis=1)
        if not any_hit.any():
            continue
        idx = np.flatnonzero(any_hit)
        ref = pix[idx] / features.stride
        total[idx] += _deform_many(flat[idx], ref, hit[idx], view, block)
        n_hit_views += any_hit
    return total / np.maximum(n_hit_views, 1.0)[:, None]


def corner_pillars(P, dims: VehicleDims, cfg: KernelConfig) -> np.ndarray:
    """Pillar points of the four footprint corners per pose; ``(..., 4 * n_ref, 3)``."""
    P = np.asarray(P, dtype=float)
    off = dims.center_offset
    cx = P[..., 0] + off * np.cos(P[..., 2])
    cy = P[..., 1] + off * np.sin(P[..., 2])
    corners = corners_from_poses(cx, cy, P[..., 2], dims.length, dims.width)  # (..., 4, 2)
    z = pillar_heights(cfg.z_range, cfg.n_ref)
    c = np.broadcast_to(corners[..., :, None, :], corners.shape[:-1] + (len(z), 2))
    zz = np.broadcast_to(z, c.shape[:-1])[..., None]
    pts = np.concatenate([c, zz], axis=-1)
    return pts.reshape(P.shape[:-1] + (4 * len(z), 3))


def spatial_cross_attn(Q, P, features: FeatureGrid, dims: VehicleDims, w: KernelWeights) -> np.ndarray:
    """Residual cross-attention to multi-view features anchored at footprint-corner pillars."""
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    cfg = w.config
    if Q.shape[:2] != P.shape[:2] or P.shape[-1] != 3 or Q.shape[-1] != cfg.C:
        raise ValueError(f"shape mismatch: Q {Q.shape}, P {P.shape}")
    if features.views.shape[1] != cfg.C:
        raise ValueError("feature channels do not match C")
    if len(features.cameras) == 0:
        raise ValueError("at least one camera view is required")
    flat = Q.reshape(-1, cfg.C)
    pts = corner_pillars(P.reshape(-1, 3), dims, cfg)
    return (flat + _sca_core(flat, pts, features, w.block("sca"))).reshape(Q.shape)


# --------------------------------------------------------------------------
# full forward pass and heads

def _mlp(x, w1, b1, w2, b2):
    return np.maximum(x @ w1 + b1, 0.0) @ w2 + b2


def predict_proposals(Q, w: KernelWeights) -> np.ndarray:
    P = _mlp(Q, w["proposal_mlp.w1"], w["proposal_mlp.b1"], w["proposal_mlp.w2"], w["proposal_mlp.b2"])
    P[..., 2] = wrap_angle(P[..., 2])
    return P


def init_queries(status, w: KernelWeights) -> np.ndarray:
    status = np.asarray(status, dtype=float)
    if status.shape != (w.config.status_dim,):
        raise ValueError(f"ego status must have shape ({w.config.status_dim},)")
    ego = status @ w["ego_encoder.weight"] + w["ego_encoder.bias"]
    return w["positional_embedding"] + ego


def refine_step(Q, w: KernelWeights, features: FeatureGrid, dims: VehicleDims = DEFAULT_DIMS):
    """One predict-anchor-refine iteration; returns ``(P_k, Q_{k+1})``."""
    P = predict_proposals(Q, w)
    Q = self_attn_step(Q, P, w)
    Q = spatial_cross_attn(Q, P, features, dims, w)
    return P, Q @ w["query_update.weight"] + w["query_update.bias"]


def run_proformer(status, features: FeatureGrid, w: KernelWeights, dims: VehicleDims = DEFAULT_DIMS):
    """Returns ``(proposals (K, N, T, 3), Q_K (N, T, C))``."""
    Q = init_queries(status, w)
    props = []
    for _ in range(w.config.K):
        P, Q = refine_step(Q, w, features, dims)
        props.append(P)
    return np.stack(props), Q


def ego_status(scene, status_dim: int) -> np.ndarray:
    """Ego status vector ``[velocity, acceleration, 0, ...]`` from a scene."""
    s = np.zeros(status_dim)
    vals = [scene.ego_velocity, scene.ego_acceleration][:status_dim]
    s[: len(vals)] = vals
    return s


def score_head(Q, w: KernelWeights) -> np.ndarray:
    """Max-pool over time, MLP, logistic; one score in (0, 1) per proposal."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 3 or Q.shape[-1] != w.config.C:
        raise ValueError(f"Q must be (N, T, {w.config.C})")
    pooled = Q.max(axis=1)
    logit = _mlp(pooled, w["score_mlp.w1"], w["score_mlp.b1"], w["score_mlp.w2"], w["score_mlp.b2"])[:, 0]
    return 0.5 * (1.0 + np.tanh(0.5 * logit))


def select_best(scores) -> int:
    """Index of the highest score; ties go to the smallest index."""
    return int(np.argmax(np.asarray(scores)))
