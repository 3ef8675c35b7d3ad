"""Train a 3D detector from a nearby agent's shared box predictions, at desk scale.

Subpackages:
  geom      rotated-box geometry kernels (IoU, transforms, NMS)
  simkit    synthetic two-agent LiDAR sequences with noisy shared labels
  net       minimal point-set network with exact gradients and Adam
  ranker    learned box quality ranking and coarse-to-fine refinement
  detector  cluster-and-score detector trainable from pseudo labels
  pipeline  two-round curriculum self-training orchestration
  metrics   matching, precision/recall, BEV average precision
  cli       command-line entry points (simulate/refine/selftrain/...)
"""

__version__ = "0.1.0"
