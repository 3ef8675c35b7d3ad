"""Two-round curriculum self-training from a reference agent's shared labels.

Step 0 (ranker training) lives in `ranker`; this module runs the rest:
basic filtering of received labels, ranker refinement and thresholding,
training the detector on close frames first, then re-labeling every frame
with the detector's own filtered predictions and training again on all
frames. Distance enters twice: as the curriculum split and as a confidence
threshold that tightens for frames the detector was trained on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import detector as det
from . import net, ranker
from .geom import Box3, nms, points_in_box_mask
from .simkit import LabeledBox, SceneFrame


@dataclass(frozen=True)
class PipelineConfig:
    roi_x: tuple[float, float] = (-80.0, 80.0)
    roi_y: tuple[float, float] = (-40.0, 40.0)
    min_points: int = 1
    t_er: float = 40.0            # curriculum distance threshold, meters
    t_c: float = 0.2              # base confidence threshold
    lam: float = 1.0              # distance falloff: threshold = t_c + lam / d
    threshold_cap: float = 0.95
    rounds: int = 2
    refine_mode: str = "c2f"      # candidate search in both steps
    use_distance_filter: bool = True
    step2_union_reference: bool = False   # optionally merge near-reference step-1 labels back in
    union_ref_distance: float = 40.0
    refine: ranker.RefineConfig = field(default_factory=ranker.RefineConfig)
    proposal: det.ProposalConfig = field(default_factory=det.ProposalConfig)
    detector_train: det.DetectorTrainConfig = field(default_factory=det.DetectorTrainConfig)
    net_spec: net.NetSpec = field(default_factory=net.NetSpec)

    def __post_init__(self):
        if self.t_er <= 0:
            raise ValueError(f"t_er must be > 0, got {self.t_er}")
        if not 0.0 <= self.t_c < 1.0:
            raise ValueError(f"t_c must be in [0, 1), got {self.t_c}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.t_c < self.threshold_cap <= 1.0:
            raise ValueError(f"threshold_cap must be in (t_c, 1], got {self.threshold_cap}")
        if self.refine_mode not in ("c2f", "naive"):
            raise ValueError(f"refine_mode must be 'c2f' or 'naive', got {self.refine_mode!r}")


@dataclass(frozen=True)
class Dataset:
    frames: list[SceneFrame]
    ref_labels: list[list[LabeledBox]]

    def __post_init__(self):
        if len(self.frames) != len(self.ref_labels):
            raise ValueError(f"{len(self.frames)} frames vs {len(self.ref_labels)} label rows")


def basic_filter(labels: list[LabeledBox], ego_cloud: np.ndarray, cfg: PipelineConfig) -> list[LabeledBox]:
    """Drop labels outside the ROI or covering fewer than min_points ego returns."""
    out = []
    for lb in labels:
        b = lb.box
        if not (cfg.roi_x[0] <= b.cx <= cfg.roi_x[1] and cfg.roi_y[0] <= b.cy <= cfg.roi_y[1]):
            continue
        if int(points_in_box_mask(ego_cloud, b).sum()) < cfg.min_points:
            continue
        out.append(lb)
    return out


def curriculum_split(frames: list[SceneFrame], t_er: float) -> tuple[list[int], list[int]]:
    """Indices of near (distance <= t_er) and far frames; a disjoint partition."""
    near = [i for i, fr in enumerate(frames) if fr.ego_ref_distance <= t_er]
    far = [i for i, fr in enumerate(frames) if fr.ego_ref_distance > t_er]
    return near, far


def distance_threshold(d: float, cfg: PipelineConfig) -> float:
    if d <= 0:
        raise ValueError(f"distance must be > 0, got {d}")
    return min(cfg.threshold_cap, cfg.t_c + cfg.lam / d)


def distance_conf_filter(labels: list[LabeledBox], d: float, cfg: PipelineConfig) -> list[LabeledBox]:
    """Keep labels whose confidence clears the distance-raised threshold."""
    thr = distance_threshold(d, cfg)
    return [lb for lb in labels if lb.confidence is not None and lb.confidence >= thr]


def _frame_rng_seed(seed: int, frame_id: int, stage: int) -> int:
    return int(np.random.SeedSequence(entropy=(seed, frame_id, stage)).generate_state(1)[0])


def refine_frame_labels(
    fr: SceneFrame,
    labels: list[LabeledBox],
    ranker_w: net.Weights,
    cfg: PipelineConfig,
    seed: int,
) -> list[LabeledBox]:
    """basic filter -> ranker refinement -> ranker-score threshold, one frame."""
    kept = basic_filter(labels, fr.ego_cloud, cfg)
    refined = [
        ranker.refine_box(
            ranker_w, fr.ego_cloud, lb, cfg.refine,
            mode=cfg.refine_mode, seed=_frame_rng_seed(seed, fr.frame_id, 31) + i,
        )
        for i, lb in enumerate(kept)
    ]
    return ranker.filter_by_ranker(refined, cfg.refine.ranker_threshold)


def run_step1(
    dataset: Dataset,
    ranker_w: net.Weights,
    cfg: PipelineConfig,
    seed: int = 0,
    frame_map=map,
) -> tuple[net.Weights, list[list[LabeledBox]]]:
    """First self-training round: refine the received labels, train on near frames.

    Returns the step-1 detector and the refined labels for every frame.
    `frame_map` may be a parallel map; per-frame work is independently seeded.
    """
    frames = dataset.frames
    refined = list(
        frame_map(
            lambda pair: refine_frame_labels(pair[0], pair[1], ranker_w, cfg, seed),
            zip(frames, dataset.ref_labels),
        )
    )
    near, _ = curriculum_split(frames, cfg.t_er)
    if not near:
        raise ValueError(
            f"no frames with ego-reference distance <= t_er={cfg.t_er}; increase t_er"
        )
    det_w = det.train_detector(
        [frames[i] for i in near],
        [refined[i] for i in near],
        spec=cfg.net_spec,
        train_cfg=cfg.detector_train,
        cfg=cfg.proposal,
        seed=seed,
    )
    return det_w, refined


def _ref_position_ego(fr: SceneFrame) -> tuple[float, float]:
    w2e = fr.ego_pose.inverse()
    p = w2e.apply(np.array([[fr.ref_pose.x, fr.ref_pose.y, fr.ref_pose.z]]))[0]
    return float(p[0]), float(p[1])


def step2_frame_labels(
    fr: SceneFrame,
    det_w: net.Weights,
    ranker_w: net.Weights,
    cfg: PipelineConfig,
    seed: int,
    step1_labels: list[LabeledBox] | None = None,
) -> list[LabeledBox]:
    """Detect -> distance confidence filter -> refine -> ranker threshold, one frame."""
    dets = det.detect(det_w, fr.ego_cloud, cfg.proposal, seed=_frame_rng_seed(seed, fr.frame_id, 41))
    if cfg.use_distance_filter:
        dets = distance_conf_filter(dets, fr.ego_ref_distance, cfg)
    refined = [
        ranker.refine_box(
            ranker_w, fr.ego_cloud, lb, cfg.refine,
            mode=cfg.refine_mode, seed=_frame_rng_seed(seed, fr.frame_id, 42) + i,
        )
        for i, lb in enumerate(dets)
    ]
    labels = ranker.filter_by_ranker(refined, cfg.refine.ranker_threshold)
    if cfg.step2_union_reference and step1_labels:
        rx, ry = _ref_position_ego(fr)
        extra = [
            lb for lb in step1_labels
            if math.hypot(lb.box.cx - rx, lb.box.cy - ry) <= cfg.union_ref_distance
        ]
        merged = labels + extra
        keep = nms([lb.box for lb in merged], [lb.ranker_score or 0.0 for lb in merged], 0.3)
        labels = [merged[i] for i in sorted(keep)]
    return labels


def run_step2(
    dataset: Dataset,
    det1_w: net.Weights,
    ranker_w: net.Weights,
    cfg: PipelineConfig,
    seed: int = 0,
    step1_labels: list[list[LabeledBox]] | None = None,
    frame_map=map,
) -> tuple[net.Weights, list[list[LabeledBox]]]:
    """Second self-training round: label all frames with the detector, train on all.

    The final detector trains from scratch on the filtered, refined detections
    of every frame; a fixed per-round budget keeps detectors trained on
    different label sets directly comparable.
    """
    frames = dataset.frames
    s1 = step1_labels if step1_labels is not None else [None] * len(frames)
    final_labels = list(
        frame_map(
            lambda pair: step2_frame_labels(pair[0], det1_w, ranker_w, cfg, seed, step1_labels=pair[1]),
            zip(frames, s1),
        )
    )
    final_w = det.train_detector(
        frames,
        final_labels,
        spec=cfg.net_spec,
        train_cfg=cfg.detector_train,
        cfg=cfg.proposal,
        seed=seed + 1,
    )
    return final_w, final_labels


def merge_multi_reference(
    label_sets: list[list[LabeledBox]],
    ranker_w: net.Weights,
    ego_cloud: np.ndarray,
    nms_iou: float = 0.3,
    point_cap: int = 256,
    seed: int = 0,
) -> list[LabeledBox]:
    """Combine label sets from several references: score the union, suppress overlaps.

    Every box gets a ranker score from the ego cloud; greedy NMS on those
    scores keeps the best view of each object. With one input set this is the
    identity apart from the added scores.
    """
    if not label_sets:
        raise ValueError("need at least one label set")
    union = [lb for labs in label_sets for lb in labs]
    if not union:
        return []
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x3E26E)))
    scores, _ = ranker.score_candidates(ranker_w, ego_cloud, [lb.box for lb in union], point_cap, rng)
    keep = nms([lb.box for lb in union], scores, nms_iou)
    return [replace(union[i], ranker_score=float(scores[i])) for i in keep]
