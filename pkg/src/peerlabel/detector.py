"""Desk-scale trainable detector: ground removal, clustering, box fitting, learned scoring.

The detector proposes boxes by clustering the non-ground cloud on a BEV grid
and fitting minimum-area rotated rectangles, then scores and regresses each
proposal with the same point-set network and loss the ranker uses. That keeps
the one property self-training needs (a trainable, confidence-emitting
detector) while training in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import net, ranker
from .geom import Box3, nms, normalize_yaw
from .simkit import LabeledBox


@dataclass(frozen=True)
class ProposalConfig:
    ground_ransac_iters: int = 100
    ground_inlier_eps: float = 0.1   # meters from the fitted plane
    bev_cell: float = 0.5
    min_cluster_points: int = 5
    match_iou_for_training: float = 0.3
    nms_iou: float = 0.1
    point_cap: int = 256
    # single-face completion: a sliver thinner than thin_threshold is extended
    # away from the sensor to a vehicle-prior depth
    thin_threshold: float = 1.2
    face_split: float = 3.0          # visible extent below this means a width face
    prior_length: float = 4.7
    prior_width: float = 1.9

    def __post_init__(self):
        if min(self.ground_ransac_iters, self.min_cluster_points) < 1:
            raise ValueError("ground_ransac_iters and min_cluster_points must be >= 1")
        if min(self.ground_inlier_eps, self.bev_cell) <= 0:
            raise ValueError("ground_inlier_eps and bev_cell must be positive")
        if not 0.0 < self.match_iou_for_training < 1.0:
            raise ValueError("match_iou_for_training must be in (0, 1)")


@dataclass(frozen=True)
class DetectorTrainConfig:
    epochs: int = 30
    batch: int = 64
    lr: float = 1e-3


def remove_ground(cloud: np.ndarray, cfg: ProposalConfig, seed: int = 0):
    """RANSAC plane fit; returns (non-ground points, (unit_normal, d) or None).

    The best-of-iterations plane maximizes inliers within ground_inlier_eps;
    its inliers are removed. Fewer than 3 points: input returned unchanged.
    """
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        return pts, None
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x6D0D)))
    best_inliers = None
    best_count = -1
    best_plane = None
    for _ in range(cfg.ground_ransac_iters):
        i, j, k = rng.choice(len(pts), size=3, replace=False)
        n = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        norm = np.linalg.norm(n)
        if norm < 1e-9:
            continue
        n = n / norm
        d = -float(n @ pts[i])
        dist = np.abs(pts @ n + d)
        count = int((dist <= cfg.ground_inlier_eps).sum())
        if count > best_count:
            best_count = count
            best_plane = (n, d)
            best_inliers = dist <= cfg.ground_inlier_eps
    if best_plane is None:
        return pts, None
    n, d = best_plane
    if n[2] < 0:
        n, d = -n, -d
    return pts[~best_inliers], (n, d)


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull of (n, 2) points, CCW without the closing vertex."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(iterable):
        out = []
        for p in iterable:
            while len(out) >= 2:
                a = out[-1] - out[-2]
                b = p - out[-2]
                if a[0] * b[1] - a[1] * b[0] > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _rect_at_angle(points: np.ndarray, ang: float) -> tuple[float, float, float, float, float]:
    c, s = math.cos(ang), math.sin(ang)
    rx = c * points[:, 0] + s * points[:, 1]
    ry = -s * points[:, 0] + c * points[:, 1]
    w = float(rx.max() - rx.min())
    h = float(ry.max() - ry.min())
    cx_r = (rx.max() + rx.min()) / 2
    cy_r = (ry.max() + ry.min()) / 2
    return float(c * cx_r - s * cy_r), float(s * cx_r + c * cy_r), w, h, ang


def _orient(cx, cy, w, h, ang) -> tuple[float, float, float, float, float]:
    if w >= h:
        return cx, cy, float(w), float(h), normalize_yaw(ang)
    return cx, cy, float(h), float(w), normalize_yaw(ang + math.pi / 2)


def _candidate_angles(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hull = _convex_hull(points)
    if len(hull) < 3:
        if len(hull) == 2:
            d = hull[1] - hull[0]
            return hull, np.array([math.atan2(d[1], d[0]) % (math.pi / 2)])
        return hull, np.array([0.0])
    edges = np.diff(np.vstack([hull, hull[:1]]), axis=0)
    return hull, np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2))


def min_area_rect(points: np.ndarray) -> tuple[float, float, float, float, float]:
    """Minimum-area rotated rectangle via rotating calipers over hull edges.

    Returns (cx, cy, l, w, yaw) with l >= w and yaw along the long side.
    """
    pts = np.asarray(points, dtype=float)
    hull, angles = _candidate_angles(pts)
    if len(hull) == 1:
        return float(hull[0, 0]), float(hull[0, 1]), 0.0, 0.0, 0.0
    best = None
    for ang in angles:
        cx, cy, w, h, a = _rect_at_angle(hull, ang)
        if best is None or w * h < best[0]:
            best = (w * h, cx, cy, w, h, a)
    return _orient(*best[1:])


def fit_box_bev(points: np.ndarray) -> tuple[float, float, float, float, float]:
    """Rotated-rectangle fit for LiDAR clusters: orientation by edge closeness.

    A sensor sees one or two faces of a vehicle, so clusters are L-shaped and
    the minimum-AREA rectangle tilts to hug the L diagonally. Instead, among
    the hull-edge orientations, pick the one whose bounding rectangle keeps
    the points closest to its edges (the standard L-shape fitting criterion);
    for an L this aligns the rectangle with the faces.
    """
    pts = np.asarray(points, dtype=float)
    hull, angles = _candidate_angles(pts)
    if len(hull) == 1:
        return float(hull[0, 0]), float(hull[0, 1]), 0.0, 0.0, 0.0
    if len(hull) == 2:
        return min_area_rect(pts)
    best = None
    for ang in angles:
        c, s = math.cos(ang), math.sin(ang)
        rx = c * pts[:, 0] + s * pts[:, 1]
        ry = -s * pts[:, 0] + c * pts[:, 1]
        dx = np.minimum(rx.max() - rx, rx - rx.min())
        dy = np.minimum(ry.max() - ry, ry - ry.min())
        closeness = float(np.sum(1.0 / np.maximum(np.minimum(dx, dy), 0.03)))
        if best is None or closeness > best[0]:
            best = (closeness, ang)
    return _orient(*_rect_at_angle(pts, best[1]))


def _bev_clusters(pts: np.ndarray, cell: float, min_points: int) -> list[np.ndarray]:
    """4-connected components of occupied BEV grid cells; returns point-index arrays."""
    if len(pts) == 0:
        return []
    origin = pts[:, :2].min(axis=0)
    ij = np.floor((pts[:, :2] - origin) / cell).astype(np.int64)
    cells: dict[tuple[int, int], list[int]] = {}
    for idx, key in enumerate(map(tuple, ij)):
        cells.setdefault(key, []).append(idx)
    seen: set[tuple[int, int]] = set()
    clusters = []
    for start in cells:
        if start in seen:
            continue
        stack = [start]
        seen.add(start)
        member_cells = []
        while stack:
            c = stack.pop()
            member_cells.append(c)
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nb = (c[0] + di, c[1] + dj)
                if nb in cells and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        idxs = np.concatenate([np.array(cells[c], dtype=int) for c in member_cells])
        if len(idxs) >= min_points:
            clusters.append(np.sort(idxs))
    return clusters


def _complete_thin_fit(cx, cy, l, w, yaw, cfg: ProposalConfig, origin) -> tuple[float, float, float, float, float]:
    """Extend a single-face sliver away from the sensor to a vehicle-prior depth.

    A LiDAR sees only the near face of many objects; the fitted rectangle then
    hugs that face and carries no depth. The visible extent decides whether it
    was a width face (complete to prior_length) or a length face (complete to
    prior_width); the box grows along the face normal, pointing away from the
    sensor, so the near face stays where the points are.
    """
    vx, vy = -math.sin(yaw), math.cos(yaw)       # normal of the visible face
    ux, uy = cx - origin[0], cy - origin[1]
    if vx * ux + vy * uy < 0:
        vx, vy = -vx, -vy
    depth = cfg.prior_length if l <= cfg.face_split else cfg.prior_width
    shift = (depth - w) / 2
    cx, cy = cx + vx * shift, cy + vy * shift
    if l <= cfg.face_split:
        # short face seen: the long axis runs along the completion direction
        return cx, cy, depth, max(l, ranker.MIN_SIZE), normalize_yaw(math.atan2(vy, vx))
    return cx, cy, l, depth, yaw


def propose(nonground: np.ndarray, cfg: ProposalConfig, origin: tuple[float, float] = (0.0, 0.0)) -> list[Box3]:
    """Cluster the non-ground cloud and fit one rotated box per cluster.

    `origin` is the sensor position in the cloud frame; it anchors the
    single-face completion direction.
    """
    pts = np.asarray(nonground, dtype=float).reshape(-1, 3)
    out = []
    for idxs in _bev_clusters(pts, cfg.bev_cell, cfg.min_cluster_points):
        cl = pts[idxs]
        cx, cy, l, w, yaw = fit_box_bev(cl[:, :2])
        if w < cfg.thin_threshold:
            cx, cy, l, w, yaw = _complete_thin_fit(cx, cy, l, w, yaw, cfg, origin)
        z_lo, z_hi = cl[:, 2].min(), cl[:, 2].max()
        out.append(
            Box3(
                cx,
                cy,
                (z_lo + z_hi) / 2,
                max(l, ranker.MIN_SIZE),
                max(w, ranker.MIN_SIZE),
                max(z_hi - z_lo, ranker.MIN_SIZE),
                yaw,
            )
        )
    return out


def _proposal_samples(frames, labels_per_frame, cfg: ProposalConfig, seed: int) -> list[ranker.RankerSample]:
    """Training units: one per proposal, targeted at the best-overlapping label."""
    from .geom import iou_bev

    samples: list[ranker.RankerSample] = []
    for fr, labels in zip(frames, labels_per_frame):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, fr.frame_id, 21)))
        nonground, _ = remove_ground(fr.ego_cloud, cfg, seed=fr.frame_id)
        for prop in propose(nonground, cfg):
            best_iou, best = 0.0, None
            for lb in labels:
                v = iou_bev(prop, lb.box)
                if v > best_iou:
                    best_iou, best = v, lb
            pts = ranker.crop_normalized(nonground, prop, cfg.point_cap, rng)
            if best is not None and best_iou >= cfg.match_iou_for_training:
                # labels carry true headings but cluster fits know yaw only
                # modulo pi; fold the yaw delta accordingly
                samples.append(
                    ranker.RankerSample(
                        points=pts,
                        box_features=np.array([prop.l, prop.w, prop.h]),
                        target_iou=float(best_iou),
                        target_offset=ranker.encode_offset(prop, best.box, yaw_mod_pi=True),
                    )
                )
            else:
                samples.append(
                    ranker.RankerSample(
                        points=pts,
                        box_features=np.array([prop.l, prop.w, prop.h]),
                        target_iou=0.0,
                        target_offset=np.zeros(7),
                    )
                )
    return samples


def train_detector(
    frames,
    labels_per_frame,
    spec: net.NetSpec | None = None,
    train_cfg: DetectorTrainConfig | None = None,
    cfg: ProposalConfig | None = None,
    seed: int = 0,
    init: net.Weights | None = None,
) -> net.Weights:
    """Fit the proposal scorer/regressor on (pseudo) labels.

    Proposals overlapping a label at match_iou_for_training or better learn
    that IoU and the offset to the label; the rest train toward score zero
    with the offset loss masked. Frames with no labels contribute negatives.
    """
    cfg = cfg or ProposalConfig()
    train_cfg = train_cfg or DetectorTrainConfig()
    if len(frames) != len(labels_per_frame):
        raise ValueError("frames and labels must align")
    samples = _proposal_samples(frames, labels_per_frame, cfg, seed)
    if not samples:
        raise ValueError("no proposals found in any frame; nothing to train on")
    return ranker.train_on_samples(
        samples,
        spec=spec,
        weights=init,
        epochs=train_cfg.epochs,
        batch=train_cfg.batch,
        lr=train_cfg.lr,
        seed=seed,
    )


def detect(w: net.Weights, cloud: np.ndarray, cfg: ProposalConfig | None = None, seed: int = 0) -> list[LabeledBox]:
    """Propose, score, regress, and suppress; returns source="self" labels.

    Confidence is the scorer's predicted IoU; each proposal is moved by its
    predicted offset before NMS.
    """
    cfg = cfg or ProposalConfig()
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return []
    nonground, _ = remove_ground(pts, cfg, seed=seed)
    props = propose(nonground, cfg)
    if not props:
        return []
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xDE7EC7)))
    scores, offsets = ranker.score_candidates(w, nonground, props, cfg.point_cap, rng)
    boxes = [ranker.apply_offset(p, o, clamp=True) for p, o in zip(props, offsets)]
    keep = nms(boxes, scores, cfg.nms_iou)
    return [
        LabeledBox(box=boxes[i], confidence=float(scores[i]), source="self")
        for i in keep
    ]
