import math
from dataclasses import replace

import numpy as np
import pytest

from peerlabel import net, ranker
from peerlabel.geom import Box3, iou_bev, normalize_yaw
from peerlabel.ranker import (
    RankerSample,
    RefineConfig,
    SamplerSpec,
    apply_offset,
    build_sample,
    encode_offset,
    filter_by_ranker,
    gen_training_samples,
    ranker_loss,
    refine_box,
    sample_candidates,
    train_ranker,
)
from peerlabel.simkit import LabeledBox, SensorModel, WorldConfig, generate_sequence, gt_boxes_ego


def rand_box(rng, span=10.0):
    return Box3(
        rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(0.5, 1.2),
        rng.uniform(3.5, 6.0), rng.uniform(1.6, 2.2), rng.uniform(1.4, 2.0),
        rng.uniform(-np.pi, np.pi),
    )


class TestOffsetCodec:
    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            cand, gt = rand_box(rng), rand_box(rng)
            off = encode_offset(cand, gt)
            back = apply_offset(cand, off)
            np.testing.assert_allclose(back.to_array()[:6], gt.to_array()[:6], atol=1e-6)
            assert abs(normalize_yaw(back.yaw - gt.yaw)) < 1e-6

    def test_identity(self):
        b = Box3(3, -2, 0.8, 4.5, 1.9, 1.6, 0.7)
        np.testing.assert_allclose(encode_offset(b, b), np.zeros(7), atol=1e-12)

    def test_clamped_application_bounds_motion(self):
        cand = Box3(0, 0, 0, 4, 2, 1.5, 0)
        wild = np.array([10.0, -10.0, 5.0, 3.0, -3.0, 2.0, 0.5])
        out = apply_offset(cand, wild, clamp=True)
        assert math.hypot(out.cx, out.cy) <= 2 * ranker.MAX_OFFSET_SHIFT * cand.bev_diagonal
        assert out.l <= cand.l * math.exp(ranker.MAX_OFFSET_LOGSIZE) + 1e-9


class TestBuildSample:
    CLOUD = np.random.default_rng(1).uniform([-10, -10, 0], [10, 10, 2], (600, 3))

    def test_gt_candidate_has_perfect_targets(self):
        g = Box3(0, 0, 1.0, 4.5, 1.9, 1.6, 0.4)
        s = build_sample(self.CLOUD, g, g, np.random.default_rng(0))
        assert s.target_iou == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(s.target_offset, np.zeros(7), atol=1e-12)

    def test_points_normalized_within_crop(self):
        g = Box3(0, 0, 1.0, 4.5, 1.9, 1.6, 0.4)
        s = build_sample(self.CLOUD, g, g, np.random.default_rng(0))
        assert len(s.points) > 0
        assert np.abs(s.points).max() <= ranker.CROP_EXPAND + 1e-9

    def test_empty_crop_allowed(self):
        g = Box3(500, 500, 1.0, 4.5, 1.9, 1.6, 0.0)
        s = build_sample(self.CLOUD, g, g, np.random.default_rng(0))
        assert s.points.shape == (0, 3)


class TestGenTrainingSamples:
    @pytest.fixture(scope="class")
    def frames(self):
        return generate_sequence(
            WorldConfig(n_frames=6, n_vehicles=4, sensor=SensorModel(beam_count=8), separation=(5.0, 20.0)),
            seed=2,
        )

    def test_count_is_per_box_times_roi_gt(self, frames):
        samples = gen_training_samples(frames, per_box=10, seed=0)
        n_gt = sum(
            1
            for fr in frames
            for g in gt_boxes_ego(fr)
            if -80 <= g.cx <= 80 and -40 <= g.cy <= 40
        )
        assert len(samples) == n_gt * 10

    def test_deterministic(self, frames):
        a = gen_training_samples(frames, per_box=5, seed=3)
        b = gen_training_samples(frames, per_box=5, seed=3)
        assert len(a) == len(b)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.points, sb.points)
            assert sa.target_iou == sb.target_iou

    def test_offset_targets_reconstruct_gt(self, frames):
        # rebuilding a sample for a known (candidate, gt) pair reproduces the gt
        fr = frames[0]
        g = gt_boxes_ego(fr)[0]
        rng = np.random.default_rng(5)
        for cand in sample_candidates(g, SamplerSpec.naive(), 20, rng=rng):
            s = build_sample(fr.ego_cloud, cand, g, rng)
            rebuilt = apply_offset(cand, s.target_offset)
            np.testing.assert_allclose(rebuilt.to_array()[:6], g.to_array()[:6], atol=1e-6)
            assert abs(normalize_yaw(rebuilt.yaw - g.yaw)) < 1e-6


class TestRankerLoss:
    def sample(self, iou, offset=None):
        return RankerSample(
            points=np.zeros((1, 3)),
            box_features=np.ones(3),
            target_iou=iou,
            target_offset=np.zeros(7) if offset is None else np.asarray(offset, dtype=float),
        )

    def test_perfect_prediction_zero_loss(self):
        loss, (d_iou, d_off) = ranker_loss((0.8, np.zeros(7)), self.sample(0.8))
        assert loss == pytest.approx(0.0)
        assert d_iou == pytest.approx(0.0)
        np.testing.assert_allclose(d_off, np.zeros(7))

    def test_low_iou_masks_offset_term(self):
        loss, (_, d_off) = ranker_loss((0.2, np.full(7, 5.0)), self.sample(0.2))
        assert loss == pytest.approx(0.0)
        np.testing.assert_allclose(d_off, np.zeros(7))

    def test_iou_error_arithmetic(self):
        loss, (d_iou, _) = ranker_loss((0.3, np.zeros(7)), self.sample(0.2))
        assert loss == pytest.approx(5 * 0.01)
        assert d_iou == pytest.approx(10 * 0.1)

    def test_smooth_l1_regions(self):
        # small error: quadratic; large error: linear with slope 1
        s = self.sample(0.9)
        loss_small, (_, d_small) = ranker_loss((0.9, np.array([0.5, 0, 0, 0, 0, 0, 0])), s)
        assert loss_small == pytest.approx(0.5 * 0.25)
        assert d_small[0] == pytest.approx(0.5)
        loss_big, (_, d_big) = ranker_loss((0.9, np.array([3.0, 0, 0, 0, 0, 0, 0])), s)
        assert loss_big == pytest.approx(3.0 - 0.5)
        assert d_big[0] == pytest.approx(1.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        s = RankerSample(np.zeros((1, 3)), np.ones(3), 0.6, rng.standard_normal(7))
        iou0, off0 = 0.4, rng.standard_normal(7)
        loss0, (d_iou, d_off) = ranker_loss((iou0, off0), s)
        h = 1e-6
        fd_iou = (ranker_loss((iou0 + h, off0), s)[0] - ranker_loss((iou0 - h, off0), s)[0]) / (2 * h)
        assert d_iou == pytest.approx(fd_iou, rel=1e-5)
        for j in range(7):
            e = np.zeros(7)
            e[j] = h
            fd = (ranker_loss((iou0, off0 + e), s)[0] - ranker_loss((iou0, off0 - e), s)[0]) / (2 * h)
            assert d_off[j] == pytest.approx(fd, rel=1e-4, abs=1e-8)


class TestSamplers:
    INIT = Box3(5, -3, 0.8, 4.5, 1.9, 1.6, 0.4)

    def test_zero_noise_returns_init(self):
        spec = SamplerSpec(mode="naive", trans_sigma=(0, 0, 0), size_sigma=(0, 0, 0), yaw_sigma=0)
        out = sample_candidates(self.INIT, spec, 1, seed=0)
        np.testing.assert_allclose(out[0].to_array(), self.INIT.to_array())

    def test_coarse_keeps_size_and_yaw_fixed(self):
        out = sample_candidates(self.INIT, SamplerSpec.coarse(), 64, seed=1)
        for b in out:
            assert (b.l, b.w, b.h, b.yaw) == (self.INIT.l, self.INIT.w, self.INIT.h, self.INIT.yaw)
            assert abs(b.cx - self.INIT.cx) <= 1.0 + 1e-9
            assert abs(b.cy - self.INIT.cy) <= 1.0 + 1e-9

    def test_naive_translation_stddev(self):
        out = sample_candidates(self.INIT, SamplerSpec.naive(), 100_000, seed=2)
        dx = np.array([b.cx for b in out]) - self.INIT.cx
        assert np.std(dx) == pytest.approx(1.0, abs=0.02)

    def test_fine_sigmas(self):
        out = sample_candidates(self.INIT, SamplerSpec.fine(), 100_000, seed=3)
        dx = np.array([b.cx for b in out]) - self.INIT.cx
        dl = np.array([b.l for b in out]) - self.INIT.l
        dw = np.array([b.w for b in out]) - self.INIT.w
        assert np.std(dx) == pytest.approx(0.25, abs=0.01)
        assert np.std(dl) == pytest.approx(0.4, abs=0.01)
        assert np.std(dw) == pytest.approx(0.2, abs=0.01)

    def test_sizes_clamped_positive(self):
        spec = SamplerSpec(mode="fine", trans_sigma=(0, 0, 0), size_sigma=(5, 5, 5), yaw_sigma=0)
        out = sample_candidates(self.INIT, spec, 500, seed=4)
        for b in out:
            assert min(b.l, b.w, b.h) >= ranker.MIN_SIZE

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            SamplerSpec(mode="weird")
        with pytest.raises(ValueError):
            SamplerSpec(mode="naive", trans_sigma=(-1, 0, 0))

    def test_deterministic_per_seed(self):
        a = sample_candidates(self.INIT, SamplerSpec.naive(), 10, seed=5)
        b = sample_candidates(self.INIT, SamplerSpec.naive(), 10, seed=5)
        assert [x.to_array().tolist() for x in a] == [x.to_array().tolist() for x in b]


class TestFilterByRanker:
    def mk(self, score):
        return LabeledBox(box=Box3(0, 0, 0, 4, 2, 1.5, 0), confidence=0.5, ranker_score=score)

    def test_threshold_zero_is_identity(self):
        labels = [self.mk(0.0), self.mk(0.7)]
        assert filter_by_ranker(labels, 0.0) == labels

    def test_threshold_one_keeps_only_exact_ones(self):
        labels = [self.mk(0.999), self.mk(1.0)]
        assert filter_by_ranker(labels, 1.0) == [labels[1]]

    def test_between(self):
        labels = [self.mk(0.4), self.mk(0.6)]
        assert filter_by_ranker(labels, 0.5) == [labels[1]]

    def test_missing_score_errors(self):
        with pytest.raises(ValueError):
            filter_by_ranker([self.mk(None)], 0.5)


class TestRefineBoxStructure:
    """Behavioral checks with an untrained net (quality checks live in acceptance)."""

    W = net.init_weights(net.NetSpec(point_mlp_widths=(8, 16), head_hidden=8), seed=0)
    CFG = RefineConfig(n_total=32)

    def test_zero_point_area_returns_init_with_zero_score(self):
        init = LabeledBox(box=Box3(0, 0, 0.8, 4, 2, 1.6, 0), confidence=0.9)
        out = refine_box(self.W, np.zeros((0, 3)), init, self.CFG, mode="c2f", seed=0)
        assert out.box == init.box
        assert out.ranker_score == 0.0
        out = refine_box(self.W, np.zeros((0, 3)), init, self.CFG, mode="naive", seed=0)
        assert out.ranker_score == 0.0

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        cloud = rng.uniform([-8, -8, 0], [8, 8, 2], (300, 3))
        init = LabeledBox(box=Box3(0, 0, 0.8, 4, 2, 1.6, 0.2), confidence=0.9)
        a = refine_box(self.W, cloud, init, self.CFG, mode="c2f", seed=5)
        b = refine_box(self.W, cloud, init, self.CFG, mode="c2f", seed=5)
        assert a == b

    def test_preserves_confidence_and_source(self):
        rng = np.random.default_rng(9)
        cloud = rng.uniform([-8, -8, 0], [8, 8, 2], (300, 3))
        init = LabeledBox(box=Box3(0, 0, 0.8, 4, 2, 1.6, 0.2), confidence=0.77)
        out = refine_box(self.W, cloud, init, self.CFG, mode="naive", seed=5)
        assert out.confidence == 0.77
        assert out.source == "reference"

    def test_unknown_mode_rejected(self):
        init = LabeledBox(box=Box3(0, 0, 0.8, 4, 2, 1.6, 0), confidence=0.9)
        with pytest.raises(ValueError):
            refine_box(self.W, np.zeros((1, 3)), init, self.CFG, mode="best", seed=0)


def test_train_ranker_empty_samples_rejected():
    with pytest.raises(ValueError):
        train_ranker([], spec=net.NetSpec(point_mlp_widths=(8,), head_hidden=4))


def test_train_ranker_smoke_loss_decreases():
    rng = np.random.default_rng(10)
    frames = generate_sequence(
        WorldConfig(n_frames=4, n_vehicles=3, sensor=SensorModel(beam_count=8), separation=(5.0, 15.0)),
        seed=11,
    )
    samples = gen_training_samples(frames, per_box=20, seed=0)
    losses = []
    train_ranker(
        samples,
        spec=net.NetSpec(point_mlp_widths=(8, 16), head_hidden=8),
        epochs=5,
        batch=32,
        seed=0,
        on_epoch=lambda e, l: losses.append(l),
    )
    assert losses[-1] < losses[0]
    # non-increasing within 5% jitter
    for a, b in zip(losses, losses[1:]):
        assert b <= a * 1.05
