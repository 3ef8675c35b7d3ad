import math
from dataclasses import replace

import numpy as np
import pytest

from peerlabel import metrics
from peerlabel.geom import Box3, Pose, points_in_box_mask, transform_box
from peerlabel.simkit import (
    LabeledBox,
    NoiseModel,
    SceneFrame,
    SensorModel,
    VehicleState,
    WorldConfig,
    distance_recall_curve,
    generate_sequence,
    gt_boxes_ego,
    load_dataset,
    load_labels,
    make_reference_predictions,
    render_cloud,
    save_dataset,
    save_labels,
    visible_gt_ego,
)

FAST_SENSOR = SensorModel(beam_count=8, azimuth_resolution=0.02)

NO_NOISE = NoiseModel(
    gps_sigma=0.0, sync_delay_frames=0, ref_fp_rate=0.0, ref_fn_rate=0.0,
    conf_noise_sigma=0.0, ref_min_points=1,
)


def small_cfg(**kw):
    base = dict(n_frames=10, n_vehicles=4, sensor=FAST_SENSOR, separation=(5.0, 30.0))
    base.update(kw)
    return WorldConfig(**base)


class TestGenerateSequence:
    def test_empty_world_has_ground_only_clouds(self):
        frames = generate_sequence(small_cfg(n_vehicles=0), seed=0)
        for fr in frames:
            assert len(fr.gt_boxes) == 0
            assert len(fr.ego_cloud) > 0
            assert fr.ego_ground_mask.all()

    def test_deterministic(self):
        a = generate_sequence(small_cfg(), seed=3)
        b = generate_sequence(small_cfg(), seed=3)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa.ego_cloud, fb.ego_cloud)
            np.testing.assert_array_equal(fa.ref_cloud, fb.ref_cloud)
            assert fa.gt_boxes == fb.gt_boxes
            assert fa.ego_ref_distance == fb.ego_ref_distance

    def test_seed_changes_world(self):
        a = generate_sequence(small_cfg(), seed=0)
        b = generate_sequence(small_cfg(), seed=1)
        assert a[0].gt_boxes != b[0].gt_boxes

    def test_separation_matches_schedule(self):
        cfg = small_cfg(n_frames=40, separation=(10.0, 90.0))
        frames = generate_sequence(cfg, seed=0)
        # recompute from the emitted poses
        for fr in frames:
            d = math.hypot(fr.ego_pose.x - fr.ref_pose.x, fr.ego_pose.y - fr.ref_pose.y)
            assert d == pytest.approx(fr.ego_ref_distance, abs=0.5)
        dists = sorted(fr.ego_ref_distance for fr in frames)
        np.testing.assert_allclose(dists, np.linspace(10, 90, 40), atol=1e-9)

    def test_vehicles_move_by_velocity(self):
        cfg = small_cfg(n_frames=3, parked_frac=0.0)
        frames = generate_sequence(cfg, seed=5)
        for v0, v1 in zip(frames[0].gt_boxes, frames[1].gt_boxes):
            dx = v1.box.cx - v0.box.cx
            dy = v1.box.cy - v0.box.cy
            # wrap-around jumps are the only departure from straight motion
            if abs(dx) < 5 and abs(dy) < 5:
                assert dx == pytest.approx(v0.velocity[0] * cfg.frame_dt, abs=1e-9)
                assert dy == pytest.approx(v0.velocity[1] * cfg.frame_dt, abs=1e-9)

    def test_invalid_config_names_field(self):
        with pytest.raises(ValueError, match="n_frames"):
            generate_sequence(small_cfg(n_frames=0), seed=0)
        with pytest.raises(ValueError, match="frame_dt"):
            generate_sequence(small_cfg(frame_dt=-0.1), seed=0)


class TestRenderCloud:
    def test_point_count_decreases_with_range(self):
        sensor = SensorModel(dropout_prob=0.0, hit_jitter_sigma=0.0)
        pose = Pose(0, 0, 0, 0)
        counts = []
        for r in (10.0, 40.0):
            box = Box3(r, 0, 0.8, 4.5, 1.9, 1.6, 0.2)
            cloud = render_cloud([box], pose, sensor, seed=0)
            counts.append(int(points_in_box_mask(cloud, box).sum()))
        assert counts[0] > counts[1] > 0

    def test_full_occlusion(self):
        sensor = SensorModel(dropout_prob=0.0, hit_jitter_sigma=0.0)
        front = Box3(10, 0, 1.0, 6.0, 4.0, 2.0, 0.0)
        hidden = Box3(20, 0, 0.8, 2.0, 1.0, 1.6, 0.0)
        cloud = render_cloud([front, hidden], Pose(0, 0, 0, 0), sensor, seed=0)
        assert points_in_box_mask(cloud, hidden).sum() == 0
        assert points_in_box_mask(cloud, front).sum() > 0

    def test_noise_free_render_is_reproducible(self):
        sensor = SensorModel(dropout_prob=0.0, hit_jitter_sigma=0.0)
        box = Box3(15, 3, 0.8, 4.5, 1.9, 1.6, 0.4)
        a = render_cloud([box], Pose(1, 2, 0, 0.3), sensor, seed=1)
        b = render_cloud([box], Pose(1, 2, 0, 0.3), sensor, seed=2)  # no stochastic channel left
        np.testing.assert_array_equal(a, b)

    def test_jittered_render_deterministic_per_seed(self):
        box = Box3(15, 3, 0.8, 4.5, 1.9, 1.6, 0.4)
        a = render_cloud([box], Pose(0, 0, 0, 0), SensorModel(), seed=7)
        b = render_cloud([box], Pose(0, 0, 0, 0), SensorModel(), seed=7)
        np.testing.assert_array_equal(a, b)

    def test_beam_count_scales_density(self):
        box = Box3(12, 0, 0.8, 4.5, 1.9, 1.6, 0.0)
        n8 = len(render_cloud([box], Pose(0, 0, 0, 0), SensorModel(beam_count=8, dropout_prob=0), seed=0))
        n32 = len(render_cloud([box], Pose(0, 0, 0, 0), SensorModel(beam_count=32, dropout_prob=0), seed=0))
        assert n32 > 2 * n8


def _handmade_frame(frame_id=0, velocity=(0.0, 0.0), n_pts=12):
    """Single-vehicle frame with a synthetic cloud guaranteed inside the box."""
    box = Box3(10, 0, 0.8, 4.5, 1.9, 1.6, 0.0)
    pts = np.tile([10.0, 0.0, 0.8], (n_pts, 1)) + np.linspace(-0.3, 0.3, n_pts)[:, None] * [1, 0, 0]
    return SceneFrame(
        frame_id=frame_id,
        timestamp=frame_id * 0.1,
        ego_pose=Pose(0, 0, 0, 0),
        ref_pose=Pose(-5, 0, 0, 0),
        gt_boxes=(VehicleState(id=0, box=box, velocity=velocity),),
        ego_cloud=pts,
        ref_cloud=pts,  # ref frame differs, but points still land inside after transform
        ego_ref_distance=5.0,
    )


class TestReferencePredictions:
    def test_noiseless_labels_equal_ego_gt(self):
        frames = generate_sequence(small_cfg(separation=(5.0, 10.0)), seed=2)
        labels = make_reference_predictions(frames, NO_NOISE, seed=0)
        for fr, labs in zip(frames, labels):
            gts = gt_boxes_ego(fr)
            for lb in labs:
                assert lb.source == "reference"
                best = max(metrics.iou_bev(lb.box, g) for g in gts)
                assert best == pytest.approx(1.0, abs=1e-9)

    def test_sync_delay_displacement_magnitude(self):
        # 60 mph vehicle, one-frame delay at 0.1 s: about 2.7 m of mislocalization
        fr = _handmade_frame(velocity=(26.8, 0.0))
        fr = replace(fr, ref_cloud=np.tile([15.0, 0.0, 0.8], (12, 1)))  # inside box in ref frame
        noise = NoiseModel(gps_sigma=0.0, sync_delay_frames=1, ref_fp_rate=0.0,
                           ref_fn_rate=0.0, conf_noise_sigma=0.0, ref_min_points=1)
        labels = make_reference_predictions([fr], noise, seed=0)[0]
        assert len(labels) == 1
        disp = math.hypot(labels[0].box.cx - 10.0, labels[0].box.cy - 0.0)
        assert disp == pytest.approx(2.68, abs=1e-9)

    def test_gps_error_magnitude_matches_rayleigh_mean(self):
        # static scene, delay 0: mean 2D center error over many draws is sigma*sqrt(pi/2)
        base = _handmade_frame()
        base = replace(base, ref_cloud=np.tile([15.0, 0.0, 0.8], (12, 1)))
        frames = [replace(base, frame_id=i) for i in range(10_000)]
        noise = NoiseModel(gps_sigma=0.2, sync_delay_frames=0, ref_fp_rate=0.0,
                           ref_fn_rate=0.0, conf_noise_sigma=0.0, ref_min_points=1)
        labels = make_reference_predictions(frames, noise, seed=0)
        errs = [math.hypot(labs[0].box.cx - 10.0, labs[0].box.cy) for labs in labels if labs]
        assert np.mean(errs) == pytest.approx(0.2 * math.sqrt(math.pi / 2), abs=0.01)

    def test_deterministic(self):
        frames = generate_sequence(small_cfg(), seed=4)
        a = make_reference_predictions(frames, NoiseModel(), seed=9)
        b = make_reference_predictions(frames, NoiseModel(), seed=9)
        assert a == b

    def test_fn_rate_removes_labels(self):
        frames = generate_sequence(small_cfg(separation=(5.0, 10.0)), seed=2)
        full = make_reference_predictions(frames, NO_NOISE, seed=0)
        thin = make_reference_predictions(frames, replace(NO_NOISE, ref_fn_rate=0.8), seed=0)
        assert sum(map(len, thin)) < sum(map(len, full))

    def test_fp_rate_adds_clutter(self):
        frames = generate_sequence(small_cfg(separation=(5.0, 10.0)), seed=2)
        base = make_reference_predictions(frames, NO_NOISE, seed=0)
        fp = make_reference_predictions(frames, replace(NO_NOISE, ref_fp_rate=0.9), seed=0)
        assert sum(map(len, fp)) > sum(map(len, base))


class TestDistanceRecall:
    def test_noiseless_recall_is_one(self):
        frames = generate_sequence(small_cfg(n_frames=20, separation=(5.0, 60.0)), seed=1)
        labels = make_reference_predictions(frames, NO_NOISE, seed=0)
        # measure against what the reference could actually see and share
        gt = [[lb.box for lb in labs] for labs in labels]
        curve = distance_recall_curve(frames, labels, gt, 0.5, [0, 20, 40, 60, 80])
        for _, r in curve:
            assert r is None or r == pytest.approx(1.0)

    def test_near_beats_far_with_default_noise(self):
        frames = generate_sequence(WorldConfig(n_frames=150, n_vehicles=5), seed=0)
        labels = make_reference_predictions(frames, NoiseModel(), seed=0)
        gt = [visible_gt_ego(f) for f in frames]
        curve = dict((tuple(b), r) for b, r in distance_recall_curve(frames, labels, gt, 0.5, [0, 20, 40, 60, 80]))
        assert curve[(0, 20)] > curve[(60, 80)]

    def test_single_frame_occupies_one_bin(self):
        fr = _handmade_frame()
        labels = [[LabeledBox(box=gt_boxes_ego(fr)[0], confidence=0.9)]]
        gt = [gt_boxes_ego(fr)]
        curve = distance_recall_curve([fr], labels, gt, 0.5, [0, 20, 40, 60, 80])
        occupied = [(b, r) for b, r in curve if r is not None]
        assert len(occupied) == 1
        assert occupied[0][0] == (0, 20) and occupied[0][1] == 1.0

    def test_empty_bins_are_absent_not_zero(self):
        fr = _handmade_frame()
        curve = distance_recall_curve([fr], [[]], [gt_boxes_ego(fr)], 0.5, [0, 20, 40, 60, 80])
        assert curve[0][1] == 0.0  # occupied bin with no labels: genuine zero
        assert all(r is None for _, r in curve[1:])

    def test_mislocalization_fraction(self):
        # with default gps/delay noise a sizable share of matched labels drops below IoU 0.7
        frames = generate_sequence(WorldConfig(n_frames=60, n_vehicles=5), seed=0)
        labels = make_reference_predictions(frames, NoiseModel(), seed=0)
        below = total = 0
        for fr, labs in zip(frames, labels):
            pairs, _, _ = metrics.match(labs, visible_gt_ego(fr), 0.1)
            for _, _, iou in pairs:
                total += 1
                below += iou < 0.7
        assert total > 50
        assert below / total >= 0.2


class TestLabeledBox:
    def test_source_validation(self):
        with pytest.raises(ValueError):
            LabeledBox(box=Box3(0, 0, 0, 1, 1, 1, 0), confidence=0.5, source="oracle")

    def test_reference_requires_confidence(self):
        with pytest.raises(ValueError):
            LabeledBox(box=Box3(0, 0, 0, 1, 1, 1, 0), confidence=None, source="reference")

    def test_ground_truth_confidence_optional(self):
        LabeledBox(box=Box3(0, 0, 0, 1, 1, 1, 0), confidence=None, source="ground_truth")


class TestDatasetIO:
    def test_roundtrip(self, tmp_path):
        frames = generate_sequence(small_cfg(n_frames=4), seed=6)
        labels = make_reference_predictions(frames, NoiseModel(), seed=6)
        base = str(tmp_path / "ds")
        save_dataset(base, frames, labels)
        frames2, labels2 = load_dataset(base)
        assert len(frames2) == len(frames)
        for a, b in zip(frames, frames2):
            assert a.frame_id == b.frame_id
            assert a.ego_pose == b.ego_pose
            assert a.gt_boxes == b.gt_boxes
            assert a.ego_ref_distance == b.ego_ref_distance
            np.testing.assert_allclose(a.ego_cloud, b.ego_cloud, atol=5e-4)
        assert labels2 == labels

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(str(tmp_path / "nope"))

    def test_corrupt_line_raises(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"frame_id": 0, "labels": []}\nnot json\n')
        with pytest.raises(ValueError, match="bad.jsonl:2"):
            load_labels(str(p))

    def test_labels_roundtrip_with_none_fields(self, tmp_path):
        labs = [[
            LabeledBox(box=Box3(1, 2, 0.5, 4, 2, 1.5, 0.3), confidence=0.7, ranker_score=None),
            LabeledBox(box=Box3(5, 2, 0.5, 4, 2, 1.5, -0.3), confidence=0.2, ranker_score=0.9, source="self"),
        ]]
        path = str(tmp_path / "labs.jsonl")
        save_labels(path, labs)
        assert load_labels(path) == labs
