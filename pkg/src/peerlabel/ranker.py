"""Learned box quality ranking: training data, loss, samplers, and refinement.

The ranker scores a candidate box by cropping the points around it (three
times the box extent), normalizing them into the candidate frame, and
predicting both the IoU against the (unknown) true box and a corrective
7-component offset. Refinement samples candidates around an initial noisy box
and keeps the best-scored one; the coarse-to-fine mode first sweeps a wide
uniform translation grid, then resamples all degrees of freedom tightly
around the top-scored candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import net
from .geom import Box3, normalize_yaw, points_in_box_mask, points_to_box_frame
from .simkit import LabeledBox

CROP_EXPAND = 3.0         # point crop reach, in box extents
MIN_SIZE = 0.2            # meters; floor for perturbed box extents
OFFSET_MASK_IOU = 0.3     # offset loss only trains on candidates at least this good
IOU_LOSS_WEIGHT = 5.0
MAX_OFFSET_SHIFT = 0.8    # cap on applied translation offsets, in BEV diagonals
MAX_OFFSET_LOGSIZE = 1.5  # cap on applied log size ratios


# ---------------------------------------------------------------------------
# offset parameterization
# ---------------------------------------------------------------------------

def encode_offset(cand: Box3, gt: Box3, yaw_mod_pi: bool = False) -> np.ndarray:
    """7-vector taking `cand` to `gt`: candidate-frame translation over the BEV
    diagonal, log size ratios, and raw yaw delta.

    yaw_mod_pi folds the yaw delta into (-pi/2, pi/2]: a cuboid is identical
    under a half-turn, so when candidate and target come from different yaw
    conventions (a cluster fit knows orientation only modulo pi while labels
    carry true headings) the folded delta is the meaningful one. Without the
    fold such pairs produce bimodal {d, d+pi} regression targets.
    """
    diag = cand.bev_diagonal
    c, s = math.cos(cand.yaw), math.sin(cand.yaw)
    dx = gt.cx - cand.cx
    dy = gt.cy - cand.cy
    dyaw = normalize_yaw(gt.yaw - cand.yaw)
    if yaw_mod_pi:
        if dyaw > math.pi / 2:
            dyaw -= math.pi
        elif dyaw <= -math.pi / 2:
            dyaw += math.pi
    return np.array(
        [
            (c * dx + s * dy) / diag,
            (-s * dx + c * dy) / diag,
            (gt.cz - cand.cz) / diag,
            math.log(gt.l / cand.l),
            math.log(gt.w / cand.w),
            math.log(gt.h / cand.h),
            dyaw,
        ]
    )


def apply_offset(cand: Box3, offset, clamp: bool = False) -> Box3:
    """Apply a predicted/encoded offset to a candidate box.

    With clamp=True (used on network predictions) translations are limited to
    MAX_OFFSET_SHIFT diagonals and log size ratios to MAX_OFFSET_LOGSIZE, so a
    wild prediction cannot teleport or explode a box.
    """
    off = np.asarray(offset, dtype=float).reshape(7)
    if clamp:
        off = off.copy()
        off[:3] = np.clip(off[:3], -MAX_OFFSET_SHIFT, MAX_OFFSET_SHIFT)
        off[3:6] = np.clip(off[3:6], -MAX_OFFSET_LOGSIZE, MAX_OFFSET_LOGSIZE)
    diag = cand.bev_diagonal
    c, s = math.cos(cand.yaw), math.sin(cand.yaw)
    tx, ty, tz = off[0] * diag, off[1] * diag, off[2] * diag
    return Box3(
        cand.cx + c * tx - s * ty,
        cand.cy + s * tx + c * ty,
        cand.cz + tz,
        cand.l * math.exp(off[3]),
        cand.w * math.exp(off[4]),
        cand.h * math.exp(off[5]),
        normalize_yaw(cand.yaw + off[6]),
    )


# ---------------------------------------------------------------------------
# training samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankerSample:
    points: np.ndarray        # (k, 3) candidate-frame, normalized by half extents
    box_features: np.ndarray  # candidate (l, w, h)
    target_iou: float
    target_offset: np.ndarray  # 7-vector, encode_offset(candidate, gt)

    def as_input(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points, self.box_features


def crop_normalized(cloud: np.ndarray, cand: Box3, point_cap: int, rng: np.random.Generator) -> np.ndarray:
    """Candidate-frame points within CROP_EXPAND box extents, scaled by half sizes."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros((0, 3))
    sel = pts[points_in_box_mask(pts, cand, expand=CROP_EXPAND)]
    sel = net.subsample_points(sel, point_cap, rng)
    if len(sel) == 0:
        return np.zeros((0, 3))
    local = points_to_box_frame(sel, cand)
    return local / np.array([cand.l / 2, cand.w / 2, cand.h / 2])


def _augment(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random angular-sector occlusion plus i.i.d. point dropping."""
    pts = points
    if len(pts) and rng.random() < 0.5:
        center = rng.uniform(-math.pi, math.pi)
        width = rng.uniform(math.radians(30), math.radians(120))
        ang = np.arctan2(pts[:, 1], pts[:, 0])
        delta = np.abs(np.arctan2(np.sin(ang - center), np.cos(ang - center)))
        pts = pts[delta > width / 2]
    if len(pts):
        drop = rng.uniform(0.0, 0.5)
        pts = pts[rng.random(len(pts)) >= drop]
    return pts


def build_sample(
    cloud: np.ndarray,
    cand: Box3,
    gt: Box3,
    rng: np.random.Generator,
    point_cap: int = 256,
    augment: bool = False,
    iou_kind: str = "bev",
) -> RankerSample:
    """Construct one training sample for a (candidate, ground truth) pair."""
    from .geom import iou_3d, iou_bev

    pts = crop_normalized(cloud, cand, point_cap, rng)
    if augment:
        pts = _augment(pts, rng)
    iou_fn = iou_bev if iou_kind == "bev" else iou_3d
    return RankerSample(
        points=pts,
        box_features=np.array([cand.l, cand.w, cand.h]),
        target_iou=float(iou_fn(cand, gt)),
        target_offset=encode_offset(cand, gt),
    )


def gen_training_samples(
    frames,
    per_box: int = 100,
    seed: int = 0,
    roi_x: tuple[float, float] = (-80.0, 80.0),
    roi_y: tuple[float, float] = (-40.0, 40.0),
    point_cap: int = 256,
    iou_kind: str = "bev",
    mixture: tuple[float, float, float] = (0.4, 0.3, 0.3),
) -> list[RankerSample]:
    """Samples for ranker training from annotated frames.

    For every ego-frame GT box inside the ROI, draws per_box candidates around
    it, crops and normalizes the ego cloud around each, applies
    occlusion/dropping augmentation, and computes the IoU and offset targets.
    Candidates mix wide naive-mode noise, tight fine-mode noise, and size-only
    perturbations (`mixture` gives the shares): refinement spends its
    decisions on near-truth and size-perturbed boxes, and a net trained only
    on wide noise is least accurate exactly there.
    A GT box over a void still emits samples (with empty point lists).
    """
    from .simkit import gt_boxes_ego

    out: list[RankerSample] = []
    naive = SamplerSpec.naive()
    fine = SamplerSpec.fine()
    size_only = SamplerSpec(mode="fine", trans_sigma=(0.05, 0.05, 0.05), size_sigma=(0.4, 0.2, 0.2), yaw_sigma=0.05)
    n_fine = int(round(per_box * mixture[1]))
    n_size = int(round(per_box * mixture[2]))
    n_naive = max(1, per_box - n_fine - n_size)
    for fr in frames:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, fr.frame_id, 11)))
        for g in gt_boxes_ego(fr):
            if not (roi_x[0] <= g.cx <= roi_x[1] and roi_y[0] <= g.cy <= roi_y[1]):
                continue
            cands = sample_candidates(g, naive, n_naive, rng=rng)
            if n_fine:
                cands += sample_candidates(g, fine, n_fine, rng=rng)
            if n_size:
                cands += sample_candidates(g, size_only, n_size, rng=rng)
            for cand in cands:
                out.append(
                    build_sample(fr.ego_cloud, cand, g, rng, point_cap=point_cap, augment=True, iou_kind=iou_kind)
                )
    return out


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def smooth_l1(e: np.ndarray) -> np.ndarray:
    a = np.abs(e)
    return np.where(a < 1.0, 0.5 * e * e, a - 0.5)


def smooth_l1_grad(e: np.ndarray) -> np.ndarray:
    return np.clip(e, -1.0, 1.0)


def ranker_loss(pred: tuple[float, np.ndarray], target: RankerSample):
    """Weighted score + offset loss with its exact gradients at the outputs.

    loss = 5 * (iou_pred - target_iou)^2 + [target_iou >= 0.3] * sum smooth_l1(offset error)
    Returns (loss, (d_iou, d_offset)).
    """
    iou_pred, off_pred = pred
    e = float(iou_pred) - target.target_iou
    mask = 1.0 if target.target_iou >= OFFSET_MASK_IOU else 0.0
    oe = np.asarray(off_pred, dtype=float).reshape(7) - target.target_offset
    loss = IOU_LOSS_WEIGHT * e * e + mask * float(smooth_l1(oe).sum())
    d_iou = 2.0 * IOU_LOSS_WEIGHT * e
    d_off = mask * smooth_l1_grad(oe)
    return loss, (d_iou, d_off)


def _batch_loss_grads(ious: np.ndarray, offs: np.ndarray, t_iou: np.ndarray, t_off: np.ndarray):
    """Vectorized mean ranker loss over a batch, plus per-sample output gradients."""
    b = len(ious)
    e = ious - t_iou
    mask = (t_iou >= OFFSET_MASK_IOU).astype(float)
    oe = offs - t_off
    losses = IOU_LOSS_WEIGHT * e * e + mask * smooth_l1(oe).sum(axis=1)
    d_iou = 2.0 * IOU_LOSS_WEIGHT * e / b
    d_off = mask[:, None] * smooth_l1_grad(oe) / b
    return float(losses.mean()), d_iou, d_off


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_on_samples(
    samples: list[RankerSample],
    spec: net.NetSpec | None = None,
    weights: net.Weights | None = None,
    epochs: int = 10,
    batch: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    lr_decay: float = 0.01,
    on_epoch=None,
) -> net.Weights:
    """Adam training of the score/offset net on RankerSamples.

    Starts from `weights` when given (fine-tuning), else from a fresh
    initialization of `spec`. The learning rate follows a cosine decay from lr
    down to lr * lr_decay. Shuffling is seeded per epoch; on_epoch, when
    provided, receives (epoch_index, mean_epoch_loss).
    """
    if not samples:
        raise ValueError("cannot train on an empty sample list")
    if weights is None:
        weights = net.init_weights(spec or net.NetSpec(), seed)
    w = weights
    opt = net.OptimState.for_weights(w, lr=lr)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x7EA1)))
    inputs = [s.as_input() for s in samples]
    t_iou = np.array([s.target_iou for s in samples])
    t_off = np.stack([s.target_offset for s in samples])

    n_pts = np.array([len(s.points) for s in samples])
    lr_lo = lr * lr_decay
    for epoch in range(epochs):
        opt.lr = lr_lo + 0.5 * (lr - lr_lo) * (1.0 + math.cos(math.pi * epoch / max(1, epochs - 1)))
        order = rng.permutation(len(samples))
        # group similar crop sizes within local windows: same samples per epoch,
        # far less padding waste in the batched forward
        window = batch * 8
        order = np.concatenate([
            chunk[np.argsort(n_pts[chunk], kind="stable")]
            for chunk in np.array_split(order, max(1, len(order) // window))
        ])
        losses = []
        for start in range(0, len(samples), batch):
            idx = order[start : start + batch]
            # float32 batch math: 2x cheaper, irrelevant next to SGD noise
            ious, offs, cache = net._forward_full(w, [inputs[i] for i in idx], dtype=np.float32)
            loss, d_iou, d_off = _batch_loss_grads(ious, offs, t_iou[idx], t_off[idx])
            grads = net._backward_cached(w, cache, d_iou, d_off)
            w, opt = net.adam_step(w, grads, opt)
            losses.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(losses)))
    return w


def train_ranker(
    samples: list[RankerSample],
    spec: net.NetSpec | None = None,
    epochs: int = 10,
    batch: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    on_epoch=None,
) -> net.Weights:
    """Train the box ranker from scratch on generated samples."""
    return train_on_samples(samples, spec=spec, epochs=epochs, batch=batch, lr=lr, seed=seed, on_epoch=on_epoch)


# ---------------------------------------------------------------------------
# candidate samplers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerSpec:
    """Candidate distribution around an initial box.

    naive: Gaussian translation on xyz, multiplicative (scaling) size noise,
    additive yaw noise. coarse: uniform xy translation, Gaussian z, sizes and
    yaw kept fixed. fine: tight Gaussians on every degree of freedom with
    additive size noise in meters.
    """

    mode: str
    trans_sigma: tuple[float, float, float] = (1.0, 1.0, 1.0)
    size_sigma: tuple[float, float, float] = (0.1, 0.1, 0.1)   # (l, w, h)
    size_noise: str = "scale"    # "scale": l *= 1+eps; "additive": l += eps meters
    yaw_sigma: float = 0.1
    uniform_xy: float = 1.0
    coarse_z_sigma: float = 0.5

    def __post_init__(self):
        if self.mode not in ("naive", "coarse", "fine"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.size_noise not in ("scale", "additive"):
            raise ValueError(f"size_noise must be 'scale' or 'additive', got {self.size_noise!r}")
        scales = (*self.trans_sigma, *self.size_sigma, self.yaw_sigma, self.uniform_xy, self.coarse_z_sigma)
        if any(s < 0 for s in scales):
            raise ValueError(f"sampler noise scales must be >= 0, got {scales}")

    @staticmethod
    def naive() -> "SamplerSpec":
        return SamplerSpec(mode="naive")

    @staticmethod
    def coarse() -> "SamplerSpec":
        return SamplerSpec(mode="coarse")

    @staticmethod
    def fine() -> "SamplerSpec":
        return SamplerSpec(mode="fine", trans_sigma=(0.25, 0.25, 0.25), size_sigma=(0.4, 0.2, 0.2), size_noise="additive")


def sample_candidates(init: Box3, spec: SamplerSpec, n: int, seed: int | None = None, rng: np.random.Generator | None = None) -> list[Box3]:
    """Draw n candidate boxes around `init` according to the sampler spec."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if rng is None:
        rng = np.random.default_rng(seed)
    if spec.mode == "coarse":
        dx = rng.uniform(-spec.uniform_xy, spec.uniform_xy, size=n)
        dy = rng.uniform(-spec.uniform_xy, spec.uniform_xy, size=n)
        dz = rng.normal(0.0, spec.coarse_z_sigma, size=n) if spec.coarse_z_sigma > 0 else np.zeros(n)
        ls = np.full(n, init.l)
        ws = np.full(n, init.w)
        hs = np.full(n, init.h)
        dyaw = np.zeros(n)
    else:
        sx, sy, sz = spec.trans_sigma
        dx = rng.normal(0.0, sx, size=n) if sx > 0 else np.zeros(n)
        dy = rng.normal(0.0, sy, size=n) if sy > 0 else np.zeros(n)
        dz = rng.normal(0.0, sz, size=n) if sz > 0 else np.zeros(n)
        sl, sw, sh = spec.size_sigma
        draw = lambda s: rng.normal(0.0, s, size=n) if s > 0 else np.zeros(n)
        el, ew, eh = draw(sl), draw(sw), draw(sh)
        if spec.size_noise == "scale":
            ls, ws, hs = init.l * (1 + el), init.w * (1 + ew), init.h * (1 + eh)
        else:
            ls, ws, hs = init.l + el, init.w + ew, init.h + eh
        dyaw = rng.normal(0.0, spec.yaw_sigma, size=n) if spec.yaw_sigma > 0 else np.zeros(n)
    out = []
    for i in range(n):
        out.append(
            Box3(
                init.cx + dx[i],
                init.cy + dy[i],
                init.cz + dz[i],
                max(MIN_SIZE, ls[i]),
                max(MIN_SIZE, ws[i]),
                max(MIN_SIZE, hs[i]),
                normalize_yaw(init.yaw + dyaw[i]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RefineConfig:
    n_total: int = 512
    top_k: int = 3
    apply_offset: bool = True
    ranker_threshold: float = 0.5
    point_cap: int = 256

    def __post_init__(self):
        if self.n_total < 2 or self.n_total % 2:
            raise ValueError(f"n_total must be even and >= 2, got {self.n_total}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0.0 <= self.ranker_threshold <= 1.0:
            raise ValueError("ranker_threshold must be in [0, 1]")

    @property
    def coarse_n(self) -> int:
        return self.n_total // 2

    @property
    def fine_n(self) -> int:
        return self.n_total // 2


def _precrop(cloud: np.ndarray, init: Box3) -> np.ndarray:
    """Superset of every candidate crop: cheap radius cut around the initial box."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    r = 1.5 * (init.l + 1.0) + MAX_OFFSET_SHIFT * init.bev_diagonal + 4.0
    keep = (np.hypot(pts[:, 0] - init.cx, pts[:, 1] - init.cy) <= r) & (
        np.abs(pts[:, 2] - init.cz) <= 1.5 * (init.h + 0.5) + MAX_OFFSET_SHIFT * init.bev_diagonal + 2.0
    )
    return pts[keep]


def score_candidates(
    w: net.Weights,
    cloud: np.ndarray,
    cands: list[Box3],
    point_cap: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Ranker scores and predicted offsets for candidate boxes over a cloud.

    Vectorized across candidates: every crop/normalize happens in one shot and
    a single float32 batched forward scores them all. Crops match the training
    recipe (x3 extent, candidate frame, half-size normalization, uniform cap).
    """
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    n_c = len(cands)
    if n_c == 0:
        return np.zeros(0), np.zeros((0, net.OFFSET_DIM))
    if len(pts) == 0:
        return np.zeros(n_c), np.zeros((n_c, net.OFFSET_DIM))
    # one shared shuffle makes "first k inside" a uniform without-replacement draw
    pts = pts[rng.permutation(len(pts))]

    centers = np.array([[c.cx, c.cy, c.cz] for c in cands])      # (C, 3)
    half = np.array([[c.l / 2, c.w / 2, c.h / 2] for c in cands])
    yaw = np.array([c.yaw for c in cands])
    cosy, siny = np.cos(yaw), np.sin(yaw)

    rel = pts[None, :, :] - centers[:, None, :]                   # (C, n, 3)
    lx = cosy[:, None] * rel[:, :, 0] + siny[:, None] * rel[:, :, 1]
    ly = -siny[:, None] * rel[:, :, 0] + cosy[:, None] * rel[:, :, 1]
    lz = rel[:, :, 2]
    inside = (
        (np.abs(lx) <= CROP_EXPAND * half[:, 0:1])
        & (np.abs(ly) <= CROP_EXPAND * half[:, 1:2])
        & (np.abs(lz) <= CROP_EXPAND * half[:, 2:3])
    )
    counts = inside.sum(axis=1)
    if counts.max(initial=0) == 0:
        return np.zeros(n_c), np.zeros((n_c, net.OFFSET_DIM))
    order_full = np.argsort(~inside, axis=1, kind="stable")       # inside first, shuffle order kept

    iou = np.zeros(n_c)
    off = np.zeros((n_c, net.OFFSET_DIM))
    # bucket candidates by crop size so small crops are not padded to the max
    by_count = np.argsort(counts, kind="stable")
    for bucket in np.array_split(by_count, max(1, n_c // 192)):
        k = int(min(point_cap, counts[bucket].max(initial=0)))
        if k == 0:
            continue
        order = order_full[bucket, :k]                            # (Cb, k)
        take = lambda a: np.take_along_axis(a[bucket], order, axis=1)
        sel = np.stack([take(lx), take(ly), take(lz)], axis=2) / half[bucket, None, :]
        # pad rows beyond each candidate's count with its first selected point
        pad = np.arange(k)[None, :] >= counts[bucket, None]
        sel = np.where(pad[:, :, None], np.broadcast_to(sel[:, 0:1, :], sel.shape), sel)
        b_iou, b_off, _ = net._forward_full(
            w,
            net.PreBatched(sel, 2.0 * half[bucket], np.minimum(counts[bucket], k)),
            dtype=np.float32,
            need_grad=False,
        )
        iou[bucket] = b_iou
        off[bucket] = b_off
    return iou, off


def refine_box(
    w: net.Weights,
    ego_cloud: np.ndarray,
    init: LabeledBox,
    cfg: RefineConfig,
    mode: str = "c2f",
    seed: int = 0,
) -> LabeledBox:
    """Refine one noisy label by sampling candidates and keeping the best-scored.

    naive: score n_total naive-noise candidates once, apply the predicted
    offset to the argmax. c2f: score coarse_n wide uniform-translation
    candidates, take the top_k, apply their offsets, then score fine_n tight
    full-DoF candidates around them and keep the best. The returned label
    carries the winning predicted IoU as ranker_score.
    """
    if mode not in ("naive", "c2f"):
        raise ValueError(f"unknown refine mode {mode!r}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x5EF1)))
    cloud = _precrop(ego_cloud, init.box)

    if mode == "naive":
        cands = sample_candidates(init.box, SamplerSpec.naive(), cfg.n_total, rng=rng)
        scores, offsets = score_candidates(w, cloud, cands, cfg.point_cap, rng)
        if not np.any(scores > 0.0):
            return replace(init, ranker_score=0.0)
        best = int(np.argmax(scores))
        box = apply_offset(cands[best], offsets[best], clamp=True) if cfg.apply_offset else cands[best]
        return replace(init, box=box, ranker_score=float(scores[best]))

    coarse = sample_candidates(init.box, SamplerSpec.coarse(), cfg.coarse_n, rng=rng)
    c_scores, c_offsets = score_candidates(w, cloud, coarse, cfg.point_cap, rng)
    if not np.any(c_scores > 0.0):
        return replace(init, ranker_score=0.0)
    top = np.argsort(-c_scores, kind="stable")[: cfg.top_k]
    seeds = [apply_offset(coarse[i], c_offsets[i], clamp=True) for i in top]

    # split the fine budget as evenly as possible across the top candidates
    counts = [cfg.fine_n // len(seeds)] * len(seeds)
    for i in range(cfg.fine_n - sum(counts)):
        counts[i] += 1
    fine_spec = SamplerSpec.fine()
    fine: list[Box3] = []
    for s, c in zip(seeds, counts):
        fine.extend(sample_candidates(s, fine_spec, c, rng=rng))
    f_scores, f_offsets = score_candidates(w, cloud, fine, cfg.point_cap, rng)
    # final pick runs over every sampled candidate, coarse and fine: the
    # coarse stage's size/yaw-exact boxes stay competitive at small errors
    cands = coarse + fine
    scores = np.concatenate([c_scores, f_scores])
    offsets = np.vstack([c_offsets, f_offsets])
    best = int(np.argmax(scores))
    box = apply_offset(cands[best], offsets[best], clamp=True) if cfg.apply_offset else cands[best]
    return replace(init, box=box, ranker_score=float(scores[best]))


def filter_by_ranker(labels: list[LabeledBox], threshold: float) -> list[LabeledBox]:
    """Keep labels whose ranker_score is at least threshold, order preserved."""
    for lb in labels:
        if lb.ranker_score is None:
            raise ValueError("label without ranker_score; refine or score it first")
    return [lb for lb in labels if lb.ranker_score >= threshold]
