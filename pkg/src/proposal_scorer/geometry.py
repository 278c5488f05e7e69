"""Planar geometry: oriented boxes, polygon containment and polyline projection.

Everything here is exact 2D math on float64 numpy arrays.  Scalar entry
points (``box_corners``, ``boxes_intersect``, ``point_in_polygon``,
``project_to_polyline``) have vectorised twins used by the metrics code.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

BOUNDARY_TOL = 1e-9

# Corner template in the box frame, order FL, FR, RR, RL.
_CORNER_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]])


@dataclass(frozen=True)
class OrientedBox:
    x: float
    y: float
    heading: float
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"box dimensions must be positive, got {self.length}x{self.width}")


def corners_from_poses(x, y, heading, length, width):
    """Corners of boxes centred at ``(x, y)``; returns shape ``(..., 4, 2)``.

    All arguments broadcast against each other.
    """
    x, y, heading, length, width = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, y, heading, length, width)))
    c, s = np.cos(heading), np.sin(heading)
    hl = 0.5 * length[..., None] * _CORNER_SIGNS[:, 0]
    hw = 0.5 * width[..., None] * _CORNER_SIGNS[:, 1]
    cx = x[..., None] + c[..., None] * hl - s[..., None] * hw
    cy = y[..., None] + s[..., None] * hl + c[..., None] * hw
    return np.stack([cx, cy], axis=-1)


def box_corners(box: OrientedBox) -> np.ndarray:
    """Corners ``(4, 2)`` in order front-left, front-right, rear-right, rear-left."""
    return corners_from_poses(box.x, box.y, box.heading, box.length, box.width)


def _axes(corners):
    # Two edge normals per rectangle suffice (opposite edges are parallel).
    e0 = corners[..., 1, :] - corners[..., 0, :]
    e1 = corners[..., 2, :] - corners[..., 1, :]
    return np.stack([np.stack([-e0[..., 1], e0[..., 0]], -1),
                     np.stack([-e1[..., 1], e1[..., 0]], -1)], axis=-2)


def corners_overlap(ca, cb) -> np.ndarray:
    """Separating-axis test for rectangles given by corner arrays ``(..., 4, 2)``.

    Broadcasts over leading dimensions.  Touching boundaries count as overlap.
    """
    ca = np.asarray(ca, dtype=float)
    cb = np.asarray(cb, dtype=float)
    ca, cb = np.broadcast_arrays(ca, cb)
    axes = np.concatenate([_axes(ca), _axes(cb)], axis=-2)  # (..., 4, 2)
    pa = np.einsum("...kd,...ad->...ak", ca, axes)  # (..., 4 axes, 4 corners)
    pb = np.einsum("...kd,...ad->...ak", cb, axes)
    separated = (pa.max(-1) < pb.min(-1)) | (pb.max(-1) < pa.min(-1))
    return ~separated.any(-1)


def boxes_intersect(a: OrientedBox, b: OrientedBox) -> bool:
    return bool(corners_overlap(box_corners(a), box_corners(b)))


def _as_polygon(poly) -> np.ndarray:
    poly = np.asarray(poly, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2:
        raise ValueError("polygon must be an (n, 2) array of vertices")
    if len(poly) > 1 and np.array_equal(poly[0], poly[-1]):
        poly = poly[:-1]
    if len(np.unique(poly, axis=0)) < 3:
        raise ValueError("degenerate polygon: fewer than 3 distinct vertices")
    return poly


def _segment_distance(points, a, b):
    """Distance from each point ``(M, 2)`` to each segment ``a[k]→b[k]``; ``(M, K)``."""
    d = b - a
    dd = np.einsum("kd,kd->k", d, d)
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("mkd,kd->mk", rel, d) / np.where(dd > 0, dd, 1.0), 0.0, 1.0)
    foot = a[None] + t[..., None] * d[None]
    return np.hypot(points[:, None, 0] - foot[..., 0], points[:, None, 1] - foot[..., 1])


def points_in_polygon(points, poly) -> np.ndarray:
    """Even-odd containment for many points; boundary (within 1e-9 m) is inside."""
    poly = _as_polygon(poly)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = poly
    b = np.roll(poly, -1, axis=0)
    px, py = pts[:, 0:1], pts[:, 1:2]
    crosses = (a[None, :, 1] > py) != (b[None, :, 1] > py)
    dy = b[:, 1] - a[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = a[:, 0] + (py - a[:, 1]) * (b[:, 0] - a[:, 0]) / np.where(dy == 0, 1.0, dy)
    inside = (np.count_nonzero(crosses & (px < x_at), axis=1) % 2) == 1
    on_edge = (_segment_distance(pts, a, b) <= BOUNDARY_TOL).any(axis=1)
    return inside | on_edge


def point_in_polygon(p, poly) -> bool:
    return bool(points_in_polygon(np.asarray(p, dtype=float)[None], poly)[0])


def points_in_union(points, polygons) -> np.ndarray:
    """True where a point lies in (or on) any of the polygons."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(pts), dtype=bool)
    for poly in polygons:
        out |= points_in_polygon(pts, poly)
    return out


def _segments_cross(p1, p2, p3, p4):
    def orient(a, b, c):
        return np.sign((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                       - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))

    def on_seg(a, b, c):
        return ((np.minimum(a[..., 0], b[..., 0]) <= c[..., 0]) & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
                & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1]) & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1])))

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    general = (o1 != o2) & (o3 != o4) & (o1 != 0) & (o2 != 0) & (o3 != 0) & (o4 != 0)
    touch = (((o1 == 0) & on_seg(p1, p2, p3)) | ((o2 == 0) & on_seg(p1, p2, p4))
             | ((o3 == 0) & on_seg(p3, p4, p1)) | ((o4 == 0) & on_seg(p3, p4, p2)))
    return general | touch


def is_simple_polygon(poly) -> bool:
    """True if no two non-adjacent edges touch or cross."""
    poly = _as_polygon(poly)
    n = len(poly)
    a, b = poly, np.roll(poly, -1, axis=0)
    if np.any(np.all(a == b, axis=1)):
        return False
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    if len(i) == 0:
        return True
    return not bool(np.any(_segments_cross(a[i], b[i], a[j], b[j])))


@dataclass(frozen=True, eq=False)
class Polyline:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least 2 points of shape (n, 2)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @cached_property
    def cumulative_arclength(self) -> np.ndarray:
        seg = np.hypot(*np.diff(self.points, axis=0).T)
        out = np.concatenate([[0.0], np.cumsum(seg)])
        out.setflags(write=False)
        return out

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])

    def __eq__(self, other):
        return isinstance(other, Polyline) and np.array_equal(self.points, other.points)

    __hash__ = None


def project_points(points, line: Polyline):
    """Vectorised projection: returns ``(arclength, signed_lateral, foot)`` arrays."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = line.points[:-1]
    d = np.diff(line.points, axis=0)
    dd = np.einsum("kd,kd->k", d, d)
    rel = pts[:, None, :] - a[None]
    t = np.einsum("mkd,kd->mk", rel, d) / np.where(dd > 0, dd, 1.0)
    t = np.clip(t, 0.0, 1.0)
    foot = a[None] + t[..., None] * d[None]
    dist = np.hypot(pts[:, None, 0] - foot[..., 0], pts[:, None, 1] - foot[..., 1])
    k = np.argmin(dist, axis=1)  # first minimum == smallest arclength
    rows = np.arange(len(pts))
    seg_len = np.sqrt(dd)
    s = line.cumulative_arclength[k] + t[rows, k] * seg_len[k]
    f = foot[rows, k]
    cross = d[k, 0] * (pts[:, 1] - f[:, 1]) - d[k, 1] * (pts[:, 0] - f[:, 0])
    sign = np.where(cross < 0, -1.0, 1.0)
    return s, sign * dist[rows, k], f


def project_to_polyline(p, line: Polyline) -> tuple[float, float]:
    """Arclength of the closest point and signed lateral offset (left positive)."""
    s, lat, _ = project_points(np.asarray(p, dtype=float)[None], line)
    return float(s[0]), float(lat[0])
