"""Rotated 3D box geometry: corners, convex clipping, BEV/3D IoU, rigid transforms, NMS.

All boxes are yaw-only (4-DoF pose): the footprint rotates about the z axis,
roll and pitch are always zero. Angles are radians, lengths are meters.
Every function here is pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Vertex/area epsilon for convex clipping, in meters.
EPS = 1e-9


@dataclass(frozen=True)
class Box3:
    """Yaw-rotated 3D bounding box.

    (cx, cy, cz) is the center, l the extent along the heading direction,
    w the lateral extent, h the vertical extent, yaw the heading in (-pi, pi].
    """

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError(f"box sizes must be positive, got l={self.l} w={self.w} h={self.h}")
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.cz, self.yaw)):
            raise ValueError("box fields must be finite")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def bev_area(self) -> float:
        return self.l * self.w

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def bev_diagonal(self) -> float:
        return math.hypot(self.l, self.w)

    def to_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw])

    @staticmethod
    def from_array(a) -> "Box3":
        cx, cy, cz, l, w, h, yaw = (float(v) for v in a)
        return Box3(cx, cy, cz, l, w, h, yaw)


@dataclass(frozen=True)
class Pose:
    """Yaw-only rigid transform of an agent frame relative to the world."""

    x: float
    y: float
    z: float
    yaw: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z, self.yaw)):
            raise ValueError("pose fields must be finite")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    def inverse(self) -> "Pose":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        # R(-yaw) @ -t
        ix = -(c * self.x + s * self.y)
        iy = -(-s * self.x + c * self.y)
        return Pose(ix, iy, -self.z, -self.yaw)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (n, 3) points from this frame into the parent frame."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = np.empty_like(pts)
        out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + self.x
        out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + self.y
        out[:, 2] = pts[:, 2] + self.z
        return out


def normalize_yaw(a: float) -> float:
    """Wrap an angle to (-pi, pi]; -pi maps to +pi by convention."""
    if not math.isfinite(a):
        raise ValueError(f"yaw must be finite, got {a}")
    m = math.fmod(a, 2.0 * math.pi)
    if m > math.pi:
        m -= 2.0 * math.pi
    elif m <= -math.pi:
        m += 2.0 * math.pi
    return m


def box_corners_bev(b: Box3) -> np.ndarray:
    """Four BEV footprint corners as a (4, 2) array in CCW order."""
    hl, hw = 0.5 * b.l, 0.5 * b.w
    local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([b.cx, b.cy])


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a CCW polygon, 0 for fewer than 3 vertices."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_halfplane(poly: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Keep the part of `poly` on the left of directed edge a->b (Sutherland-Hodgman step)."""
    if len(poly) == 0:
        return poly
    d = b - a
    # signed distance of each vertex to the edge line; >0 means inside (left)
    side = d[0] * (poly[:, 1] - a[1]) - d[1] * (poly[:, 0] - a[0])
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        pi, pj = poly[i], poly[j]
        si, sj = side[i], side[j]
        if si >= -EPS:
            out.append(pi)
        if (si > EPS and sj < -EPS) or (si < -EPS and sj > EPS):
            t = si / (si - sj)
            out.append(pi + t * (pj - pi))
    if not out:
        return np.empty((0, 2))
    res = np.array(out)
    # drop repeated consecutive vertices introduced by clipping at corners
    keep = np.ones(len(res), dtype=bool)
    for i in range(len(res)):
        j = (i + 1) % len(res)
        if keep[i] and np.max(np.abs(res[i] - res[j])) < EPS and len(res) - (~keep).sum() > 1:
            keep[j] = False
    return res[keep]


def convex_intersection_area(p: np.ndarray, q: np.ndarray) -> float:
    """Area of the intersection of two convex CCW polygons via iterative half-plane clipping."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if polygon_area(p) < EPS or polygon_area(q) < EPS:
        return 0.0
    clipped = p
    n = len(q)
    for i in range(n):
        clipped = _clip_halfplane(clipped, q[i], q[(i + 1) % n])
        if len(clipped) < 3:
            return 0.0
    return polygon_area(clipped)


def iou_bev(a: Box3, b: Box3) -> float:
    """Intersection-over-union of the BEV footprints, in [0, 1]."""
    inter = convex_intersection_area(box_corners_bev(a), box_corners_bev(b))
    union = a.bev_area + b.bev_area - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def z_overlap(a: Box3, b: Box3) -> float:
    """Length of the vertical overlap of two boxes."""
    lo = max(a.cz - 0.5 * a.h, b.cz - 0.5 * b.h)
    hi = min(a.cz + 0.5 * a.h, b.cz + 0.5 * b.h)
    return max(0.0, hi - lo)


def iou_3d(a: Box3, b: Box3) -> float:
    """3D IoU for yaw-only boxes: BEV intersection times vertical overlap, over volume union."""
    inter_bev = convex_intersection_area(box_corners_bev(a), box_corners_bev(b))
    inter = inter_bev * z_overlap(a, b)
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def transform_box(b: Box3, src_to_dst: Pose) -> Box3:
    """Re-express a box given the pose of its source frame in the destination frame."""
    c, s = math.cos(src_to_dst.yaw), math.sin(src_to_dst.yaw)
    cx = c * b.cx - s * b.cy + src_to_dst.x
    cy = s * b.cx + c * b.cy + src_to_dst.y
    return Box3(cx, cy, b.cz + src_to_dst.z, b.l, b.w, b.h, normalize_yaw(b.yaw + src_to_dst.yaw))


def points_to_box_frame(cloud: np.ndarray, b: Box3) -> np.ndarray:
    """Express (n, 3) points in the box frame (origin at center, x along heading)."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    c, s = math.cos(b.yaw), math.sin(b.yaw)
    dx = pts[:, 0] - b.cx
    dy = pts[:, 1] - b.cy
    out = np.empty_like(pts)
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = pts[:, 2] - b.cz
    return out


def points_in_box_mask(cloud: np.ndarray, b: Box3, expand: float = 1.0) -> np.ndarray:
    """Boolean mask of points whose box-frame coordinates lie within the expanded extents."""
    if expand < 1.0:
        raise ValueError(f"expand must be >= 1, got {expand}")
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros(0, dtype=bool)
    local = points_to_box_frame(pts, b)
    return (
        (np.abs(local[:, 0]) <= expand * 0.5 * b.l)
        & (np.abs(local[:, 1]) <= expand * 0.5 * b.w)
        & (np.abs(local[:, 2]) <= expand * 0.5 * b.h)
    )


def points_in_box(cloud: np.ndarray, b: Box3, expand: float = 1.0) -> np.ndarray:
    """Subset of `cloud` inside the box expanded by `expand`, input order preserved."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return pts[points_in_box_mask(pts, b, expand)]


def nms(boxes: list[Box3], scores, iou_thresh: float) -> list[int]:
    """Greedy BEV non-maximum suppression.

    Boxes are visited in descending score order (ties broken by lower index);
    a box is kept unless it overlaps an already-kept box with IoU > iou_thresh.
    Returns kept indices in descending score order.
    """
    scores = np.asarray(scores, dtype=float)
    if len(boxes) != len(scores):
        raise ValueError(f"{len(boxes)} boxes vs {len(scores)} scores")
    if not 0.0 <= iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must be in [0, 1], got {iou_thresh}")
    # stable sort on negated scores: ties resolve to the lower original index
    order = np.argsort(-scores, kind="stable")
    kept: list[int] = []
    for idx in order:
        i = int(idx)
        if all(iou_bev(boxes[i], boxes[k]) <= iou_thresh for k in kept):
            kept.append(i)
    return kept


def monte_carlo_iou_bev(a: Box3, b: Box3, n_samples: int, seed: int = 0) -> float:
    """Monte Carlo BEV IoU estimate by uniform sampling over the joint bounding box.

    Independent oracle for iou_bev: never calls the clipping path. float32
    throughout; sampling noise dominates rounding at any tolerance above ~1e-3.
    """
    allc = np.vstack([box_corners_bev(a), box_corners_bev(b)]).astype(np.float32)
    lo = allc.min(axis=0)
    hi = allc.max(axis=0)
    rng = np.random.default_rng(seed)
    px = rng.random(n_samples, dtype=np.float32) * (hi[0] - lo[0]) + lo[0]
    py = rng.random(n_samples, dtype=np.float32) * (hi[1] - lo[1]) + lo[1]

    def inside(box: Box3) -> np.ndarray:
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        dx = px - np.float32(box.cx)
        dy = py - np.float32(box.cy)
        lx = c * dx + s * dy
        np.abs(lx, out=lx)
        ly = -s * dx + c * dy
        np.abs(ly, out=ly)
        return (lx <= 0.5 * box.l) & (ly <= 0.5 * box.w)

    in_a = inside(a)
    in_b = inside(b)
    n_union = int(np.count_nonzero(in_a | in_b))
    if n_union == 0:
        return 0.0
    return float(np.count_nonzero(in_a & in_b)) / n_union
