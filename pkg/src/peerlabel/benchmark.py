"""The seeded desk-scale benchmark: standard datasets, budgets, and recipes.

Everything downstream of the simulator (ranker budget, pipeline defaults,
evaluation splits) is pinned here so that tests, demos, and the CLI exercise
one configuration. The canonical benchmark is 200 training frames and 100
held-out evaluation frames with the default world, sensor, and noise models,
all derived from one master seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import net, ranker
from .pipeline import Dataset, PipelineConfig
from .simkit import (
    NoiseModel,
    SceneFrame,
    WorldConfig,
    generate_sequence,
    gt_boxes_ego,
    make_reference_predictions,
    visible_gt_ego,
)

N_TRAIN_FRAMES = 200
N_EVAL_FRAMES = 100
N_ANNOTATED = 40          # labeling budget for ranker training
PER_BOX = 100
RANKER_SPEC = net.NetSpec(head_hidden=96)
RANKER_EPOCHS = 45
RANKER_BATCH = 64
RANKER_LR = 1e-3


def world_config(n_frames: int = N_TRAIN_FRAMES) -> WorldConfig:
    return WorldConfig(n_frames=n_frames)


def make_dataset(n_frames: int, seed: int, noise: NoiseModel | None = None) -> Dataset:
    frames = generate_sequence(world_config(n_frames), seed=seed)
    labels = make_reference_predictions(frames, noise or NoiseModel(), seed=seed)
    return Dataset(frames=frames, ref_labels=labels)


def train_split(seed: int = 0) -> Dataset:
    return make_dataset(N_TRAIN_FRAMES, seed=seed)


def eval_split(seed: int = 0) -> Dataset:
    # held-out world: different master seed stream
    return make_dataset(N_EVAL_FRAMES, seed=seed + 1000)


def annotated_frames(frames: list[SceneFrame], n: int = N_ANNOTATED) -> list[SceneFrame]:
    """Evenly spaced frames standing in for the human-annotated subset."""
    idx = np.round(np.linspace(0, len(frames) - 1, min(n, len(frames)))).astype(int)
    return [frames[i] for i in sorted(set(idx.tolist()))]


def train_benchmark_ranker(frames: list[SceneFrame], seed: int = 0, n_annotated: int = N_ANNOTATED) -> net.Weights:
    """Ranker trained under the benchmark labeling budget (40 frames)."""
    samples = ranker.gen_training_samples(annotated_frames(frames, n_annotated), per_box=PER_BOX, seed=seed)
    return ranker.train_on_samples(
        samples, spec=RANKER_SPEC, epochs=RANKER_EPOCHS, batch=RANKER_BATCH, lr=RANKER_LR, seed=seed
    )


def pipeline_config(**overrides) -> PipelineConfig:
    return PipelineConfig(net_spec=net.NetSpec(), **overrides)


def eval_gt(dataset: Dataset) -> list[list]:
    """Ego-frame ground truth per frame, as used for benchmark evaluation."""
    return [gt_boxes_ego(fr) for fr in dataset.frames]


def visible_eval_gt(dataset: Dataset, min_points: int = 1) -> list[list]:
    """GT restricted to objects the ego sensor actually returns points from."""
    return [visible_gt_ego(fr, min_points=min_points) for fr in dataset.frames]
