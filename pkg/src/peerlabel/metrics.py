"""Label-quality and detection metrics: greedy matching, precision/recall, BEV AP.

Matching is greedy in descending confidence; AP uses the all-point
interpolated area under the precision envelope. Everything is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import Box3, iou_bev


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = (0.5, 0.7)
    range_bins: tuple[tuple[float, float], ...] = ((0, 30), (30, 50), (50, 80), (0, 80))
    roi_x: tuple[float, float] = (-80.0, 80.0)
    roi_y: tuple[float, float] = (-40.0, 40.0)

    def __post_init__(self):
        if any(not 0.0 < t < 1.0 for t in self.iou_thresholds):
            raise ValueError(f"iou_thresholds must be in (0, 1), got {self.iou_thresholds}")

    def in_roi(self, b: Box3) -> bool:
        return (
            self.roi_x[0] <= b.cx <= self.roi_x[1]
            and self.roi_y[0] <= b.cy <= self.roi_y[1]
        )


def _confidence(det) -> float:
    c = getattr(det, "confidence", None)
    return 1.0 if c is None else float(c)


def _det_box(det) -> Box3:
    return det.box if hasattr(det, "box") else det


def match(dets, gts, iou_thresh: float):
    """Greedy one-to-one matching of detections to ground truth.

    Detections are visited in descending confidence (ties by lower index) and
    claim the highest-IoU unclaimed GT with IoU >= iou_thresh (GT ties by
    lower index). Returns (pairs, unmatched_det_indices, unmatched_gt_indices)
    where pairs are (det_idx, gt_idx, iou) in claim order.
    """
    confs = np.array([_confidence(d) for d in dets])
    order = np.argsort(-confs, kind="stable")
    claimed = np.zeros(len(gts), dtype=bool)
    pairs = []
    unmatched_dets = []
    for oi in order:
        di = int(oi)
        box = _det_box(dets[di])
        best_iou, best_gt = 0.0, -1
        for gi, g in enumerate(gts):
            if claimed[gi]:
                continue
            v = iou_bev(box, g)
            if v >= iou_thresh and v > best_iou:
                best_iou, best_gt = v, gi
        if best_gt >= 0:
            claimed[best_gt] = True
            pairs.append((di, best_gt, best_iou))
        else:
            unmatched_dets.append(di)
    unmatched_gts = [gi for gi in range(len(gts)) if not claimed[gi]]
    return pairs, unmatched_dets, unmatched_gts


def precision_recall(labels, gts, iou_thresh: float) -> tuple[float, float]:
    """(precision, recall) of a label set vs GT boxes; empty-vs-empty is (1, 1)."""
    pairs, unmatched_dets, unmatched_gts = match(labels, gts, iou_thresh)
    tp = len(pairs)
    precision = tp / (tp + len(unmatched_dets)) if (tp + len(unmatched_dets)) else 1.0
    recall = tp / (tp + len(unmatched_gts)) if (tp + len(unmatched_gts)) else 1.0
    return precision, recall


def _roi_filter_boxes(boxes, cfg: EvalConfig):
    return [b for b in boxes if cfg.in_roi(b)]


def _roi_filter_dets(dets, cfg: EvalConfig):
    return [d for d in dets if cfg.in_roi(_det_box(d))]


def average_precision(dets_per_frame, gts_per_frame, iou_thresh: float, cfg: EvalConfig | None = None) -> float | None:
    """All-point interpolated BEV AP over a set of frames.

    Detections are ranked globally by confidence and matched greedily within
    their frame. Boxes outside the ROI (both sides) are excluded. Returns None
    when there is no ground truth at all.
    """
    cfg = cfg or EvalConfig()
    if len(dets_per_frame) != len(gts_per_frame):
        raise ValueError("detections and ground truth must cover the same frames")
    dets_f = [_roi_filter_dets(d, cfg) for d in dets_per_frame]
    gts_f = [_roi_filter_boxes(g, cfg) for g in gts_per_frame]
    n_gt = sum(len(g) for g in gts_f)
    if n_gt == 0:
        return None

    flat = []  # (confidence, frame_idx, det)
    for fi, dets in enumerate(dets_f):
        for d in dets:
            flat.append((_confidence(d), fi, d))
    if not flat:
        return 0.0
    order = np.argsort(-np.array([c for c, _, _ in flat]), kind="stable")

    claimed = [np.zeros(len(g), dtype=bool) for g in gts_f]
    is_tp = np.zeros(len(flat), dtype=bool)
    for rank, oi in enumerate(order):
        _, fi, det = flat[int(oi)]
        box = _det_box(det)
        best_iou, best_gt = 0.0, -1
        for gi, g in enumerate(gts_f[fi]):
            if claimed[fi][gi]:
                continue
            v = iou_bev(box, g)
            if v >= iou_thresh and v > best_iou:
                best_iou, best_gt = v, gi
        if best_gt >= 0:
            claimed[fi][best_gt] = True
            is_tp[rank] = True

    tp_c = np.cumsum(is_tp)
    fp_c = np.cumsum(~is_tp)
    recall = tp_c / n_gt
    precision = tp_c / (tp_c + fp_c)
    # precision envelope: best precision achievable at or beyond each recall point
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def range_binned_ap(dets_per_frame, gts_per_frame, cfg: EvalConfig | None = None) -> dict:
    """AP per (iou threshold, range bin); bins with no ground truth are absent.

    A box belongs to a bin by its own BEV range in the ego frame; detections
    are restricted to the bin they fall in.
    """
    cfg = cfg or EvalConfig()

    def rng_of(b: Box3) -> float:
        return float(np.hypot(b.cx, b.cy))

    out: dict[float, dict[tuple[float, float], float]] = {}
    for thr in cfg.iou_thresholds:
        per_bin: dict[tuple[float, float], float] = {}
        for lo, hi in cfg.range_bins:
            dets_bin = [
                [d for d in dets if lo <= rng_of(_det_box(d)) < hi]
                for dets in dets_per_frame
            ]
            gts_bin = [[g for g in gts if lo <= rng_of(g) < hi] for gts in gts_per_frame]
            ap = average_precision(dets_bin, gts_bin, thr, cfg)
            if ap is not None:
                per_bin[(float(lo), float(hi))] = ap
        out[float(thr)] = per_bin
    return out


def metrics_report(dets_per_frame, gts_per_frame, cfg: EvalConfig | None = None) -> dict:
    """JSON-ready report keyed by metric, IoU threshold, and range bin."""
    cfg = cfg or EvalConfig()
    binned = range_binned_ap(dets_per_frame, gts_per_frame, cfg)
    report: dict = {"ap": {}, "precision": {}, "recall": {}}
    for thr in cfg.iou_thresholds:
        key = f"iou={thr:g}"
        report["ap"][key] = {
            f"{lo:g}-{hi:g}m": ap for (lo, hi), ap in binned[float(thr)].items()
        }
        dets_all = [d for frame in dets_per_frame for d in _roi_filter_dets(frame, cfg)]
        # precision/recall pooled over frames at this threshold
        tp = fp = fn = 0
        for dets, gts in zip(dets_per_frame, gts_per_frame):
            pairs, ud, ug = match(_roi_filter_dets(dets, cfg), _roi_filter_boxes(gts, cfg), thr)
            tp += len(pairs)
            fp += len(ud)
            fn += len(ug)
        report["precision"][key] = tp / (tp + fp) if (tp + fp) else 1.0
        report["recall"][key] = tp / (tp + fn) if (tp + fn) else 1.0
        report.setdefault("n_detections", len(dets_all))
    report["n_frames"] = len(dets_per_frame)
    return report
