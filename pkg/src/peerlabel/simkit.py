"""Synthetic two-agent driving sequences with LiDAR-like clouds and noisy shared labels.

The world is flat: the ego agent drives along +x, a reference agent follows at
a configured separation schedule, and vehicles move on straight lines. Clouds
come from BEV polar ray casting (nearest silhouette per azimuth wins, so
occlusion and field-of-view effects are real); beam count only scales point
density. The reference agent's shared labels exhibit the two failure modes of
interest: viewpoint mismatch (objects it cannot see are missing, objects the
ego cannot see may appear) and mislocalization (synchronization delay times
velocity, plus a per-frame GPS offset).

All operations are pure functions of (inputs, seed); frames carry
independently derived sub-seeds, so callers may process frames concurrently.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .geom import Box3, Pose, box_corners_bev, points_in_box_mask, transform_box

# saturation constant for the point-count confidence proxy
CONF_HALFSAT = 25.0


@dataclass(frozen=True)
class VehicleState:
    id: int
    box: Box3                      # world frame
    velocity: tuple[float, float]  # (vx, vy) m/s

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass(frozen=True)
class SensorModel:
    """BEV ray-casting sensor. beam_count scales density, not geometry."""

    beam_count: int = 16
    azimuth_resolution: float = 0.005  # radians per azimuth bin; at 0.005 the
    # arc spacing stays under the 0.5 m clustering cell out to 100 m
    max_range: float = 90.0
    hit_jitter_sigma: float = 0.02
    dropout_prob: float = 0.05
    ground_range: float = 45.0         # farthest ground ring
    ground_stride: int = 10            # ground returns on every k-th azimuth

    def __post_init__(self):
        if self.beam_count < 1:
            raise ValueError(f"beam_count must be >= 1, got {self.beam_count}")
        if self.max_range <= 0 or self.azimuth_resolution <= 0:
            raise ValueError("max_range and azimuth_resolution must be positive")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError(f"dropout_prob must be in [0, 1), got {self.dropout_prob}")


@dataclass(frozen=True)
class NoiseModel:
    """Noise applied to the reference agent's shared labels."""

    gps_sigma: float = 0.2         # per-axis Gaussian on the frame's shared offset, meters
    sync_delay_frames: int = 1
    ref_fp_rate: float = 0.1       # clutter boxes per visible object
    ref_fn_rate: float = 0.05      # random per-object drop probability
    conf_noise_sigma: float = 0.05
    ref_min_points: int = 5        # visibility proxy: min reference-cloud points

    def __post_init__(self):
        if self.gps_sigma < 0 or self.sync_delay_frames < 0:
            raise ValueError("gps_sigma and sync_delay_frames must be >= 0")
        for name in ("ref_fp_rate", "ref_fn_rate"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")


@dataclass(frozen=True)
class SceneFrame:
    frame_id: int
    timestamp: float
    ego_pose: Pose
    ref_pose: Pose
    gt_boxes: tuple[VehicleState, ...]   # world frame
    ego_cloud: np.ndarray                # (n, 3) in ego frame
    ref_cloud: np.ndarray                # (m, 3) in reference frame
    ego_ref_distance: float
    ego_ground_mask: np.ndarray | None = None   # internal, not serialized
    ref_ground_mask: np.ndarray | None = None


@dataclass(frozen=True)
class LabeledBox:
    """A box used as (pseudo) label: geometry plus confidence and provenance."""

    box: Box3
    confidence: float | None
    ranker_score: float | None = None
    source: str = "reference"

    def __post_init__(self):
        if self.source not in ("reference", "self", "ground_truth"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.source in ("reference", "self") and self.confidence is None:
            raise ValueError(f"source={self.source} requires a confidence")


@dataclass(frozen=True)
class WorldConfig:
    n_frames: int = 200
    n_vehicles: int = 5
    frame_dt: float = 0.1
    ego_speed: float = 8.0
    separation: tuple[float, float] = (5.0, 95.0)  # ego-ref distance schedule endpoints
    separation_mode: str = "shuffled"              # "shuffled" decorrelates distance from time
    ref_bearing: float = math.radians(168.0)       # ref direction in the ego frame
    size_l: tuple[float, float] = (3.5, 6.0)
    size_w: tuple[float, float] = (1.6, 2.2)
    size_h: tuple[float, float] = (1.4, 2.0)
    speed_max: float = 22.0     # up to ~50 mph; sync-delay mislocalization then spans 0-2.2 m
    parked_frac: float = 0.25
    lane_noise: float = 0.15       # heading jitter around the +-x traffic flow
    spawn_y: tuple[float, float] = (-45.0, 45.0)
    spawn_margin_x: tuple[float, float] = (-60.0, 100.0)  # traffic window around the ego
    sensor: SensorModel = field(default_factory=SensorModel)

    def validate(self) -> None:
        problems = []
        if self.n_frames < 1:
            problems.append(f"n_frames={self.n_frames} (must be >= 1)")
        if self.n_vehicles < 0:
            problems.append(f"n_vehicles={self.n_vehicles} (must be >= 0)")
        if self.frame_dt <= 0:
            problems.append(f"frame_dt={self.frame_dt} (must be > 0)")
        if not (0 <= self.separation[0] and self.separation[0] <= 100 and 0 <= self.separation[1] <= 100):
            problems.append(f"separation={self.separation} (schedule must stay within 0-100 m)")
        if self.speed_max < 0:
            problems.append(f"speed_max={self.speed_max} (must be >= 0)")
        for name, (lo, hi) in (("size_l", self.size_l), ("size_w", self.size_w), ("size_h", self.size_h)):
            if lo <= 0 or hi < lo:
                problems.append(f"{name}=({lo}, {hi}) (need 0 < lo <= hi)")
        if not 0.0 <= self.parked_frac <= 1.0:
            problems.append(f"parked_frac={self.parked_frac} (must be in [0, 1])")
        if self.separation_mode not in ("shuffled", "ramp"):
            problems.append(f"separation_mode={self.separation_mode!r} (must be 'shuffled' or 'ramp')")
        if problems:
            raise ValueError("invalid world config: " + "; ".join(problems))

    def corridor_x(self, ego_x: float = 0.0) -> tuple[float, float]:
        """Traffic window around the ego; vehicles wrap inside it."""
        lo = ego_x + self.spawn_margin_x[0] - max(self.separation)
        hi = ego_x + self.spawn_margin_x[1]
        return lo, hi


def _spawn_vehicles(cfg: WorldConfig, rng: np.random.Generator) -> list[VehicleState]:
    """Place non-overlapping vehicles in the driving corridor."""
    x_lo, x_hi = cfg.corridor_x()
    out: list[VehicleState] = []
    tries = 0
    while len(out) < cfg.n_vehicles and tries < 200 * max(1, cfg.n_vehicles):
        tries += 1
        l = rng.uniform(*cfg.size_l)
        w = rng.uniform(*cfg.size_w)
        h = rng.uniform(*cfg.size_h)
        cx = rng.uniform(x_lo, x_hi)
        cy = rng.uniform(*cfg.spawn_y)
        if rng.random() < cfg.parked_frac:
            vx = vy = 0.0
            yaw = rng.uniform(-math.pi, math.pi)
        else:
            speed = rng.uniform(2.0, max(2.0, cfg.speed_max))
            if rng.random() < 0.7:
                heading = (0.0 if rng.random() < 0.5 else math.pi) + rng.normal(0, cfg.lane_noise)
            else:
                heading = rng.uniform(-math.pi, math.pi)
            vx, vy = speed * math.cos(heading), speed * math.sin(heading)
            yaw = heading
        box = Box3(cx, cy, h / 2, l, w, h, yaw)
        # reject spawns overlapping an existing vehicle footprint (with a gap)
        grown = Box3(cx, cy, h / 2, l + 1.0, w + 1.0, h, yaw)
        if any(_bev_overlaps(grown, v.box) for v in out):
            continue
        out.append(VehicleState(id=len(out), box=box, velocity=(vx, vy)))
    return out


def _bev_overlaps(a: Box3, b: Box3) -> bool:
    from .geom import iou_bev

    return iou_bev(a, b) > 0.0


def _vehicle_at(v: VehicleState, t: float, ego_x: float, cfg: WorldConfig) -> VehicleState:
    """Advance a vehicle by t seconds, wrapping inside the ego traffic window.

    Wrapping keeps density around the ego stationary for sequences of any
    length; without it moving vehicles disperse and late frames go empty.
    """
    b = v.box
    x_lo, x_hi = cfg.corridor_x(ego_x)
    y_lo, y_hi = cfg.spawn_y
    cx = (b.cx + v.velocity[0] * t - x_lo) % (x_hi - x_lo) + x_lo
    cy = (b.cy + v.velocity[1] * t - y_lo) % (y_hi - y_lo) + y_lo
    return replace(v, box=Box3(cx, cy, b.cz, b.l, b.w, b.h, b.yaw))


def _frame_seed(seed: int, frame_id: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, frame_id, stream)))


def render_cloud(boxes, agent_pose: Pose, sensor: SensorModel, seed: int) -> np.ndarray:
    """Ray-cast a point cloud in the agent frame; see render_cloud_labeled."""
    pts, _ = render_cloud_labeled(boxes, agent_pose, sensor, seed)
    return pts


def render_cloud_labeled(boxes, agent_pose: Pose, sensor: SensorModel, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """BEV polar ray casting: per azimuth the nearest box silhouette wins.

    Rays that reach a silhouette within max_range return beam_count points
    spread over the box height; azimuths on the ground stride return ground
    rings at z~0 wherever no box blocks them first. Gaussian jitter and
    dropout are applied per point. Returns (points, is_ground) with points in
    the agent frame.

    `boxes` is a list of Box3 in the world frame (pass [v.box for v in gts]).
    """
    rng = np.random.default_rng(seed)
    n_az = max(8, int(round(2 * math.pi / sensor.azimuth_resolution)))
    theta = -math.pi + (np.arange(n_az) + 0.5) * (2 * math.pi / n_az)
    dx, dy = np.cos(theta), np.sin(theta)

    world_to_agent = agent_pose.inverse()
    hit_t = np.full(n_az, np.inf)
    hit_h = np.zeros(n_az)
    for b in boxes:
        local = transform_box(b, world_to_agent)
        corners = box_corners_bev(local)
        t_box = np.full(n_az, np.inf)
        for i in range(4):
            p = corners[i]
            e = corners[(i + 1) % 4] - p
            denom = dx * e[1] - dy * e[0]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (p[0] * e[1] - p[1] * e[0]) / denom
                u = (p[0] * dy - p[1] * dx) / denom
            ok = (np.abs(denom) > 1e-12) & (t > 0.1) & (u >= 0.0) & (u <= 1.0)
            t_box = np.where(ok & (t < t_box), t, t_box)
        closer = t_box < hit_t
        hit_t = np.where(closer, t_box, hit_t)
        hit_h = np.where(closer, local.h, hit_h)

    pts = []
    ground = []
    beams = (np.arange(sensor.beam_count) + 0.5) / sensor.beam_count

    hit_mask = hit_t <= sensor.max_range
    if hit_mask.any():
        r = hit_t[hit_mask]
        px = r * dx[hit_mask]
        py = r * dy[hit_mask]
        h = hit_h[hit_mask]
        # beam_count points per hit azimuth, spread over the object height
        obj = np.empty((len(r) * sensor.beam_count, 3))
        obj[:, 0] = np.repeat(px, sensor.beam_count)
        obj[:, 1] = np.repeat(py, sensor.beam_count)
        obj[:, 2] = (h[:, None] * beams[None, :]).ravel()
        pts.append(obj)
        ground.append(np.zeros(len(obj), dtype=bool))

    g_az = np.arange(0, n_az, sensor.ground_stride)
    g_r = (np.arange(sensor.beam_count) + 1) / sensor.beam_count * min(sensor.ground_range, sensor.max_range)
    rr, aa = np.meshgrid(g_r, g_az)           # (len(g_az), beam_count)
    open_ray = rr < hit_t[aa]                 # blocked ground rings vanish
    if open_ray.any():
        rf = rr[open_ray]
        af = aa[open_ray]
        gnd = np.stack([rf * dx[af], rf * dy[af], np.zeros(len(rf))], axis=1)
        pts.append(gnd)
        ground.append(np.ones(len(gnd), dtype=bool))

    if not pts:
        return np.zeros((0, 3)), np.zeros(0, dtype=bool)
    cloud = np.vstack(pts)
    is_ground = np.concatenate(ground)
    if sensor.hit_jitter_sigma > 0:
        cloud = cloud + rng.normal(0.0, sensor.hit_jitter_sigma, size=cloud.shape)
    if sensor.dropout_prob > 0:
        keep = rng.random(len(cloud)) >= sensor.dropout_prob
        cloud, is_ground = cloud[keep], is_ground[keep]
    return cloud, is_ground


def generate_sequence(cfg: WorldConfig, seed: int) -> list[SceneFrame]:
    """Simulate one sequence; deterministic for a fixed (cfg, seed)."""
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xC0FFEE)))
    vehicles = _spawn_vehicles(cfg, rng)
    schedule = np.linspace(cfg.separation[0], cfg.separation[1], cfg.n_frames)
    if cfg.separation_mode == "shuffled":
        schedule = rng.permutation(schedule)

    frames = []
    for k in range(cfg.n_frames):
        t = k * cfg.frame_dt
        d = float(schedule[k])
        ego = Pose(cfg.ego_speed * t, 0.0, 0.0, 0.0)
        bearing = ego.yaw + cfg.ref_bearing
        ref = Pose(ego.x + d * math.cos(bearing), ego.y + d * math.sin(bearing), 0.0, ego.yaw)
        gts = tuple(_vehicle_at(v, t, ego.x, cfg) for v in vehicles)
        boxes = [v.box for v in gts]
        ego_cloud, ego_gmask = render_cloud_labeled(boxes, ego, cfg.sensor, seed=_stream_entropy(seed, k, 1))
        ref_cloud, ref_gmask = render_cloud_labeled(boxes, ref, cfg.sensor, seed=_stream_entropy(seed, k, 2))
        frames.append(
            SceneFrame(
                frame_id=k,
                timestamp=t,
                ego_pose=ego,
                ref_pose=ref,
                gt_boxes=gts,
                ego_cloud=ego_cloud,
                ref_cloud=ref_cloud,
                ego_ref_distance=d,
                ego_ground_mask=ego_gmask,
                ref_ground_mask=ref_gmask,
            )
        )
    return frames


def _stream_entropy(seed: int, frame_id: int, stream: int) -> int:
    # stable scalar seed per (run, frame, purpose)
    return int(np.random.SeedSequence(entropy=(seed, frame_id, stream)).generate_state(1)[0])


def gt_boxes_ego(frame: SceneFrame) -> list[Box3]:
    """Ground-truth boxes expressed in the ego frame."""
    w2e = frame.ego_pose.inverse()
    return [transform_box(v.box, w2e) for v in frame.gt_boxes]


def visible_gt_ego(frame: SceneFrame, min_points: int = 1) -> list[Box3]:
    """Ego-frame GT boxes with at least min_points ego returns (the learnable set)."""
    out = []
    for b in gt_boxes_ego(frame):
        if int(points_in_box_mask(frame.ego_cloud, b).sum()) >= min_points:
            out.append(b)
    return out


def _conf_proxy(n_points: int) -> float:
    return n_points / (n_points + CONF_HALFSAT)


def make_reference_predictions(
    frames: list[SceneFrame],
    noise: NoiseModel,
    seed: int,
    frame_dt: float | None = None,
) -> list[list[LabeledBox]]:
    """Noisy reference-agent labels per frame, expressed in the ego frame.

    Per frame: objects visible to the reference (>= ref_min_points returns in
    its cloud) are shared, displaced backwards along their velocity by the
    synchronization delay, offset by one shared GPS error draw, thinned at
    ref_fn_rate, and mixed with clutter false positives at ref_fp_rate.
    Confidence is the saturating point-count proxy plus Gaussian noise.
    """
    if frame_dt is None:
        frame_dt = (frames[1].timestamp - frames[0].timestamp) if len(frames) > 1 else 0.1
    delay = noise.sync_delay_frames * frame_dt

    out: list[list[LabeledBox]] = []
    for fr in frames:
        rng = _frame_seed(seed, fr.frame_id, 3)
        w2r = fr.ref_pose.inverse()
        w2e = fr.ego_pose.inverse()
        gps = rng.normal(0.0, noise.gps_sigma, size=2) if noise.gps_sigma > 0 else np.zeros(2)

        labels: list[LabeledBox] = []
        n_visible = 0
        for v in fr.gt_boxes:
            ref_box = transform_box(v.box, w2r)
            n_pts = int(points_in_box_mask(fr.ref_cloud, ref_box).sum())
            if n_pts < noise.ref_min_points:
                continue
            n_visible += 1
            if noise.ref_fn_rate > 0 and rng.random() < noise.ref_fn_rate:
                continue
            b = v.box
            world = Box3(
                b.cx - v.velocity[0] * delay + gps[0],
                b.cy - v.velocity[1] * delay + gps[1],
                b.cz,
                b.l,
                b.w,
                b.h,
                b.yaw,
            )
            conf = _conf_proxy(n_pts) + (rng.normal(0.0, noise.conf_noise_sigma) if noise.conf_noise_sigma > 0 else 0.0)
            labels.append(
                LabeledBox(
                    box=transform_box(world, w2e),
                    confidence=float(np.clip(conf, 0.0, 1.0)),
                    source="reference",
                )
            )

        if noise.ref_fp_rate > 0 and n_visible > 0:
            for _ in range(int(rng.binomial(n_visible, noise.ref_fp_rate))):
                r = rng.uniform(5.0, 0.8 * 90.0)
                az = rng.uniform(-math.pi, math.pi)
                h = rng.uniform(1.4, 2.0)
                local = Box3(
                    r * math.cos(az),
                    r * math.sin(az),
                    h / 2,
                    rng.uniform(3.5, 6.0),
                    rng.uniform(1.6, 2.2),
                    h,
                    rng.uniform(-math.pi, math.pi),
                )
                world = transform_box(local, fr.ref_pose)
                n_pts = int(points_in_box_mask(fr.ref_cloud, local).sum())
                conf = _conf_proxy(n_pts) + (rng.normal(0.0, noise.conf_noise_sigma) if noise.conf_noise_sigma > 0 else 0.0)
                labels.append(
                    LabeledBox(
                        box=transform_box(world, w2e),
                        confidence=float(np.clip(conf, 0.0, 1.0)),
                        source="reference",
                    )
                )
        out.append(labels)
    return out


def distance_recall_curve(frames, labels, gt, iou_thresh: float, bin_edges) -> list[tuple[tuple[float, float], float | None]]:
    """Recall of labels against GT per ego-reference-distance bin.

    `labels` and `gt` are per-frame lists aligned with `frames`; `gt` holds
    ego-frame Box3. Bins with no ground truth report None rather than 0.
    """
    if not (len(frames) == len(labels) == len(gt)):
        raise ValueError("frames, labels, gt must have equal lengths")
    edges = list(bin_edges)
    tp = np.zeros(len(edges) - 1)
    fn = np.zeros(len(edges) - 1)
    for fr, labs, gts in zip(frames, labels, gt):
        if not gts:
            continue
        k = int(np.searchsorted(edges, fr.ego_ref_distance, side="right")) - 1
        if k < 0 or k >= len(edges) - 1:
            continue
        pairs, _, unmatched_gt = metrics.match(labs, gts, iou_thresh)
        tp[k] += len(pairs)
        fn[k] += len(unmatched_gt)
    out = []
    for i in range(len(edges) - 1):
        n = tp[i] + fn[i]
        out.append(((edges[i], edges[i + 1]), float(tp[i] / n) if n > 0 else None))
    return out


# ---------------------------------------------------------------------------
# JSONL dataset format: <name>.frames.jsonl + <name>.reflabels.jsonl
# ---------------------------------------------------------------------------

def _cloud_to_json(cloud: np.ndarray) -> list:
    return [[round(float(x), 3), round(float(y), 3), round(float(z), 3)] for x, y, z in cloud]


def _pose_to_json(p: Pose) -> dict:
    return {"x": p.x, "y": p.y, "z": p.z, "yaw": p.yaw}


def _frame_to_json(fr: SceneFrame) -> dict:
    return {
        "frame_id": fr.frame_id,
        "timestamp": fr.timestamp,
        "ego_pose": _pose_to_json(fr.ego_pose),
        "ref_pose": _pose_to_json(fr.ref_pose),
        "gt": [
            {"id": v.id, "box": list(v.box.to_array()), "velocity": list(v.velocity)}
            for v in fr.gt_boxes
        ],
        "ego_cloud": _cloud_to_json(fr.ego_cloud),
        "ref_cloud": _cloud_to_json(fr.ref_cloud),
        "ego_ref_distance": fr.ego_ref_distance,
    }


def _frame_from_json(d: dict) -> SceneFrame:
    return SceneFrame(
        frame_id=int(d["frame_id"]),
        timestamp=float(d["timestamp"]),
        ego_pose=Pose(**d["ego_pose"]),
        ref_pose=Pose(**d["ref_pose"]),
        gt_boxes=tuple(
            VehicleState(id=int(g["id"]), box=Box3.from_array(g["box"]), velocity=tuple(g["velocity"]))
            for g in d["gt"]
        ),
        ego_cloud=np.array(d["ego_cloud"], dtype=float).reshape(-1, 3),
        ref_cloud=np.array(d["ref_cloud"], dtype=float).reshape(-1, 3),
        ego_ref_distance=float(d["ego_ref_distance"]),
    )


def label_to_json(lb: LabeledBox) -> dict:
    return {
        "box": list(lb.box.to_array()),
        "confidence": lb.confidence,
        "ranker_score": lb.ranker_score,
        "source": lb.source,
    }


def label_from_json(d: dict) -> LabeledBox:
    return LabeledBox(
        box=Box3.from_array(d["box"]),
        confidence=None if d.get("confidence") is None else float(d["confidence"]),
        ranker_score=None if d.get("ranker_score") is None else float(d["ranker_score"]),
        source=d.get("source", "reference"),
    )


def _write_jsonl(path: str, rows) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
            f.write("\n")
    os.replace(tmp, path)


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path) as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{i + 1}: bad JSONL line: {e}") from e
    return rows


def save_labels(path: str, per_frame_labels: list[list[LabeledBox]], frame_ids=None) -> None:
    ids = frame_ids if frame_ids is not None else range(len(per_frame_labels))
    _write_jsonl(
        path,
        (
            {"frame_id": int(fid), "labels": [label_to_json(lb) for lb in labs]}
            for fid, labs in zip(ids, per_frame_labels)
        ),
    )


def load_labels(path: str) -> list[list[LabeledBox]]:
    return [[label_from_json(x) for x in row["labels"]] for row in _read_jsonl(path)]


def save_dataset(basename: str, frames: list[SceneFrame], ref_labels: list[list[LabeledBox]]) -> tuple[str, str]:
    """Write the frame/label JSONL pair; returns the two paths."""
    fpath = basename + ".frames.jsonl"
    lpath = basename + ".reflabels.jsonl"
    _write_jsonl(fpath, (_frame_to_json(fr) for fr in frames))
    save_labels(lpath, ref_labels, [fr.frame_id for fr in frames])
    return fpath, lpath


def load_dataset(basename: str) -> tuple[list[SceneFrame], list[list[LabeledBox]]]:
    fpath = basename + ".frames.jsonl"
    lpath = basename + ".reflabels.jsonl"
    for p in (fpath, lpath):
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing dataset file: {p}")
    frames = [_frame_from_json(d) for d in _read_jsonl(fpath)]
    labels = load_labels(lpath)
    if len(frames) != len(labels):
        raise ValueError(f"{basename}: {len(frames)} frames but {len(labels)} label rows")
    return frames, labels
