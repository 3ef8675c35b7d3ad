"""Train the box ranker on a small labeling budget and watch it repair labels.

Uses a reduced world so the whole script runs in about two minutes; the full
benchmark recipe lives in peerlabel.benchmark.

Run:  python3 demos/02_train_and_refine.py
"""

import numpy as np

from peerlabel import net, ranker
from peerlabel.geom import iou_bev
from peerlabel.pipeline import PipelineConfig, basic_filter
from peerlabel.simkit import (
    NoiseModel,
    WorldConfig,
    generate_sequence,
    make_reference_predictions,
    visible_gt_ego,
)

frames = generate_sequence(WorldConfig(n_frames=60), seed=0)
labels = make_reference_predictions(frames, NoiseModel(), seed=0)

# step 0: a handful of annotated frames make the training set
annotated = frames[::4][:15]
samples = ranker.gen_training_samples(annotated, per_box=60, seed=0)
print(f"{len(samples)} training samples from {len(annotated)} annotated frames")

losses = []
w = ranker.train_on_samples(
    samples,
    spec=net.NetSpec(point_mlp_widths=(32, 64, 128), head_hidden=96),
    epochs=15,
    seed=0,
    on_epoch=lambda e, l: losses.append(l),
)
print(f"loss {losses[0]:.3f} -> {losses[-1]:.3f} over {len(losses)} epochs")

# refine the shared labels and measure the localization gain
cfg = PipelineConfig()
init_iou, refined_iou, kept = [], [], 0
for fr, labs in zip(frames, labels):
    gts = visible_gt_ego(fr)
    if not gts:
        continue
    for lb in basic_filter(labs, fr.ego_cloud, cfg):
        before = max(iou_bev(lb.box, g) for g in gts)
        out = ranker.refine_box(w, fr.ego_cloud, lb, cfg.refine, mode="c2f", seed=fr.frame_id)
        after = max(iou_bev(out.box, g) for g in gts)
        if before >= 0.1:
            init_iou.append(before)
            refined_iou.append(after)
        kept += out.ranker_score >= cfg.refine.ranker_threshold

print(f"matched labels: IoU {np.mean(init_iou):.3f} -> {np.mean(refined_iou):.3f} after C2F refinement")
print(f"{kept} labels clear the ranker threshold {cfg.refine.ranker_threshold}")
