"""Minimal point-set network: shared per-point MLP, max-pool, two small heads.

One head predicts a localization-quality score squashed to [0, 1] through a
logistic; the other predicts a 7-component box offset (unsquashed). Gradients
are exact and hand-derived; training uses Adam. Weights are immutable values,
so forward/backward are safe to run concurrently.

Parameter values always lie on the float32 grid (quantized at init and after
every optimizer step) so that the float32 weight file round-trips bit-exactly.
Arithmetic is float64 throughout.
"""

from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass, field

import numpy as np

WEIGHTS_FORMAT = "peerlabel-pointnet-weights"
WEIGHTS_VERSION = 1

POINT_DIM = 3
OFFSET_DIM = 7


@dataclass(frozen=True)
class NetSpec:
    point_mlp_widths: tuple[int, ...] = (32, 64, 128)
    head_hidden: int = 64
    extra_feature_dim: int = 3

    def __post_init__(self):
        widths = tuple(int(w) for w in self.point_mlp_widths)
        object.__setattr__(self, "point_mlp_widths", widths)
        if any(w < 1 for w in widths) or not widths:
            raise ValueError(f"point_mlp_widths must be >= 1, got {widths}")
        if self.head_hidden < 1 or self.extra_feature_dim < 0:
            raise ValueError("head_hidden must be >= 1 and extra_feature_dim >= 0")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every layer, in serialization order."""
        shapes = []
        fan = POINT_DIM
        for w in self.point_mlp_widths:
            shapes.append((fan, w))
            fan = w
        head_in = self.point_mlp_widths[-1] + self.extra_feature_dim
        shapes.append((head_in, self.head_hidden))      # score hidden
        shapes.append((self.head_hidden, 1))            # score out
        shapes.append((head_in, self.head_hidden))      # offset hidden
        shapes.append((self.head_hidden, OFFSET_DIM))   # offset out
        return shapes

    def to_dict(self) -> dict:
        return {
            "point_mlp_widths": list(self.point_mlp_widths),
            "head_hidden": self.head_hidden,
            "extra_feature_dim": self.extra_feature_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetSpec":
        return NetSpec(
            tuple(d["point_mlp_widths"]),
            int(d["head_hidden"]),
            int(d["extra_feature_dim"]),
        )


@dataclass(frozen=True)
class Weights:
    """Network parameters: (W, b) per layer in NetSpec.layer_shapes() order."""

    spec: NetSpec
    params: tuple[np.ndarray, ...]
    version: int = WEIGHTS_VERSION

    def __post_init__(self):
        expect = self.spec.layer_shapes()
        if len(self.params) != 2 * len(expect):
            raise ValueError(f"expected {2 * len(expect)} arrays, got {len(self.params)}")
        for k, (fi, fo) in enumerate(expect):
            w, b = self.params[2 * k], self.params[2 * k + 1]
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ValueError(f"layer {k}: bad shapes {w.shape}, {b.shape}; want ({fi},{fo}), ({fo},)")
        if not all(np.isfinite(p).all() for p in self.params):
            raise ValueError("weights contain non-finite entries")

    @property
    def n_point_layers(self) -> int:
        return len(self.spec.point_mlp_widths)

    def layer(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.params[2 * k], self.params[2 * k + 1]


@dataclass
class OptimState:
    """Adam moments mirroring a Weights value."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_weights(w: Weights, lr: float = 1e-3) -> "OptimState":
        return OptimState(
            m=[np.zeros_like(p) for p in w.params],
            v=[np.zeros_like(p) for p in w.params],
            lr=lr,
        )


def _quantize32(a: np.ndarray) -> np.ndarray:
    # snap to the float32 grid but keep float64 compute precision
    return a.astype(np.float32).astype(np.float64)


def init_weights(spec: NetSpec, seed: int) -> Weights:
    """Xavier-uniform weight matrices (zero biases), deterministic for a seed."""
    rng = np.random.default_rng(seed)
    params: list[np.ndarray] = []
    for fan_in, fan_out in spec.layer_shapes():
        a = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(_quantize32(rng.uniform(-a, a, size=(fan_in, fan_out))))
        params.append(np.zeros(fan_out))
    return Weights(spec=spec, params=tuple(params))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class PreBatched:
    """Already padded (B, n, 3) input for the batched forward pass.

    Rows past each sample's count must repeat one of its real points (or be
    zero for empty samples) so the max-pool is unaffected.
    """

    def __init__(self, pts: np.ndarray, extras: np.ndarray, counts: np.ndarray):
        self.pts, self.extras, self.counts = pts, extras, np.asarray(counts, dtype=int)


def _pad_batch(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack variable-length point sets into (B, n, 3) by repeating each first point.

    Duplicate padding leaves the per-channel max (and its first-occurrence
    argmax) unchanged. Empty point sets pad with zeros and are masked out.
    """
    if isinstance(samples, PreBatched):
        return samples.pts, samples.extras, samples.counts
    b = len(samples)
    counts = np.array([len(p) for p, _ in samples], dtype=int)
    n = max(1, int(counts.max()) if b else 1)
    pts = np.zeros((b, n, POINT_DIM))
    extras = np.zeros((b, len(samples[0][1]) if b else 0))
    for i, (p, e) in enumerate(samples):
        p = np.asarray(p, dtype=float).reshape(-1, POINT_DIM)
        if len(p):
            pts[i, : len(p)] = p
            pts[i, len(p):] = p[0]
        extras[i] = np.asarray(e, dtype=float)
    return pts, extras, counts


class _ForwardCache:
    __slots__ = ("pts", "extras", "counts", "hs", "argmax", "u", "sh", "oh", "iou", "offset", "head", "point_ws")


def _forward_full(w: Weights, samples, dtype=np.float64, need_grad: bool = True) -> tuple[np.ndarray, np.ndarray, _ForwardCache]:
    """Batched forward pass keeping every intermediate needed by the backward pass.

    dtype=float32 roughly halves training cost; the default float64 path is
    the reference used by the finite-difference checks. need_grad=False skips
    the argmax bookkeeping (inference only).
    """
    pts, extras, counts = _pad_batch(samples)
    if extras.shape[1] != w.spec.extra_feature_dim:
        raise ValueError(f"extra feature dim {extras.shape[1]} != spec {w.spec.extra_feature_dim}")
    if dtype is not np.float64:
        pts = pts.astype(dtype)
        extras = extras.astype(dtype)
    cache = _ForwardCache()
    cache.pts, cache.extras, cache.counts = pts, extras, counts

    b, n, _ = pts.shape
    h = pts
    hs = [h]
    cache.point_ws = []
    for k in range(w.n_point_layers):
        wk, bk = w.layer(k)
        if dtype is not np.float64:
            wk, bk = wk.astype(dtype), bk.astype(dtype)
        cache.point_ws.append(wk)
        z = h.reshape(b * n, -1) @ wk
        z += bk
        np.maximum(z, 0.0, out=z)
        h = z.reshape(b, n, -1)
        hs.append(h)
    cache.hs = hs

    if need_grad:
        cache.argmax = hs[-1].argmax(axis=1)        # (B, C): first max index per channel
        g = np.take_along_axis(hs[-1], cache.argmax[:, None, :], axis=1)[:, 0, :]
    else:
        cache.argmax = None
        g = hs[-1].max(axis=1)
    u = np.concatenate([g, extras], axis=1)
    cache.u = u

    k0 = w.n_point_layers
    head = [w.layer(k0 + j) for j in range(4)]
    if dtype is not np.float64:
        head = [(a.astype(dtype), b.astype(dtype)) for a, b in head]
    (ws1, bs1), (ws2, bs2), (wo1, bo1), (wo2, bo2) = head
    cache.head = head
    sh = np.maximum(u @ ws1 + bs1, 0.0)
    oh = np.maximum(u @ wo1 + bo1, 0.0)
    cache.sh, cache.oh = sh, oh
    logit = (sh @ ws2 + bs2)[:, 0]
    iou = _sigmoid(logit.astype(np.float64))
    offset = (oh @ wo2 + bo2).astype(np.float64)

    empty = counts == 0
    if empty.any():
        iou = np.where(empty, 0.0, iou)
        offset[empty] = 0.0
    cache.iou, cache.offset = iou, offset
    return iou, offset, cache


def _backward_cached(w: Weights, cache: _ForwardCache, d_iou: np.ndarray, d_offset: np.ndarray) -> list[np.ndarray]:
    """Exact gradients of sum_i (d_iou_i * iou_i + d_offset_i . offset_i) wrt parameters."""
    d_iou = np.asarray(d_iou, dtype=float).copy()
    d_offset = np.asarray(d_offset, dtype=float).copy()
    empty = cache.counts == 0
    if empty.any():
        d_iou[empty] = 0.0
        d_offset[empty] = 0.0

    grads = [np.zeros_like(p) for p in w.params]
    k0 = w.n_point_layers
    (ws1, _), (ws2, _), (wo1, _), (wo2, _) = cache.head
    dtype = cache.u.dtype

    # score head (through the logistic)
    dlogit = (d_iou * cache.iou * (1.0 - cache.iou)).astype(dtype)
    d_offset = d_offset.astype(dtype)
    grads[2 * (k0 + 1)] = cache.sh.T @ dlogit[:, None]
    grads[2 * (k0 + 1) + 1] = np.array([dlogit.sum()])
    dsh = dlogit[:, None] * ws2[:, 0][None, :]
    dsh[cache.sh <= 0.0] = 0.0
    grads[2 * k0] = cache.u.T @ dsh
    grads[2 * k0 + 1] = dsh.sum(axis=0)
    du = dsh @ ws1.T

    # offset head (linear output)
    grads[2 * (k0 + 3)] = cache.oh.T @ d_offset
    grads[2 * (k0 + 3) + 1] = d_offset.sum(axis=0)
    doh = d_offset @ wo2.T
    doh[cache.oh <= 0.0] = 0.0
    grads[2 * (k0 + 2)] = cache.u.T @ doh
    grads[2 * (k0 + 2) + 1] = doh.sum(axis=0)
    du += doh @ wo1.T

    # max-pool: route each channel's gradient to the (first) argmax point
    c_global = w.spec.point_mlp_widths[-1]
    dg = du[:, :c_global]
    dh = np.zeros_like(cache.hs[-1])
    np.put_along_axis(dh, cache.argmax[:, None, :], dg[:, None, :], axis=1)

    # shared per-point MLP
    for k in range(w.n_point_layers - 1, -1, -1):
        wk = cache.point_ws[k]
        dh[cache.hs[k + 1] <= 0.0] = 0.0
        h_prev = cache.hs[k]
        b_sz, n, _ = h_prev.shape
        grads[2 * k] = h_prev.reshape(b_sz * n, -1).T @ dh.reshape(b_sz * n, -1)
        grads[2 * k + 1] = dh.sum(axis=(0, 1))
        if k > 0:
            dh = dh @ wk.T
    return grads


def forward(w: Weights, points, extra) -> tuple[float, np.ndarray]:
    """Score one point set: (predicted quality in [0, 1], 7-component offset).

    Permutation-invariant over points; an empty point set returns (0, zeros).
    """
    iou, offset, _ = _forward_full(w, [(np.asarray(points, dtype=float).reshape(-1, POINT_DIM), extra)])
    return float(iou[0]), offset[0]


def forward_batch(w: Weights, samples) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized forward over [(points, extra), ...]; returns (B,) scores and (B, 7) offsets."""
    if not samples:
        return np.zeros(0), np.zeros((0, OFFSET_DIM))
    iou, offset, _ = _forward_full(w, samples)
    return iou, offset


def backward(w: Weights, batch) -> list[np.ndarray]:
    """Parameter gradients for a batch of (points, extra, (d_iou, d_offset)) triples.

    Gradients are summed over the batch (gradient of a sum of per-sample
    losses). d_iou is the loss gradient at the squashed score, d_offset at the
    raw offset output.
    """
    samples = [(np.asarray(p, dtype=float).reshape(-1, POINT_DIM), e) for p, e, _ in batch]
    d_iou = np.array([float(np.asarray(d[0])) for _, _, d in batch])
    d_off = np.stack([np.asarray(d[1], dtype=float).reshape(OFFSET_DIM) for _, _, d in batch])
    _, _, cache = _forward_full(w, samples)
    return _backward_cached(w, cache, d_iou, d_off)


def adam_step(w: Weights, grads, opt: OptimState) -> tuple[Weights, OptimState]:
    """One Adam update with bias correction; returns new weights and state."""
    if len(grads) != len(w.params):
        raise ValueError(f"{len(grads)} gradient arrays for {len(w.params)} parameters")
    for g, p in zip(grads, w.params):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            raise ValueError("non-finite gradient")
    t = opt.step + 1
    new_params = []
    new_m, new_v = [], []
    for p, g, m, v in zip(w.params, grads, opt.m, opt.v):
        m2 = opt.beta1 * m + (1 - opt.beta1) * g
        v2 = opt.beta2 * v + (1 - opt.beta2) * g * g
        mh = m2 / (1 - opt.beta1**t)
        vh = v2 / (1 - opt.beta2**t)
        new_params.append(_quantize32(p - opt.lr * mh / (np.sqrt(vh) + opt.eps)))
        new_m.append(m2)
        new_v.append(v2)
    new_w = Weights(spec=w.spec, params=tuple(new_params), version=w.version)
    new_opt = OptimState(m=new_m, v=new_v, step=t, lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
    return new_w, new_opt


def save_weights(w: Weights, path: str) -> None:
    """Write weights as JSON header plus a base64 little-endian float32 blob.

    Blob layout: for each layer in NetSpec.layer_shapes() order, the weight
    matrix (C order) then the bias vector.
    """
    blob = np.concatenate([p.ravel() for p in w.params]).astype("<f4").tobytes()
    doc = {
        "format": WEIGHTS_FORMAT,
        "version": w.version,
        "spec": w.spec.to_dict(),
        "blob": base64.b64encode(blob).decode("ascii"),
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f)
    os.replace(tmp, path)


def load_weights(path: str) -> Weights:
    """Read a weight file written by save_weights; rejects unknown versions and bad blobs."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ValueError(f"corrupt weight file {path}: {e}") from e
    if doc.get("format") != WEIGHTS_FORMAT:
        raise ValueError(f"{path}: not a {WEIGHTS_FORMAT} file")
    if doc.get("version") != WEIGHTS_VERSION:
        raise ValueError(f"{path}: unsupported weights version {doc.get('version')}")
    spec = NetSpec.from_dict(doc["spec"])
    try:
        flat = np.frombuffer(base64.b64decode(doc["blob"]), dtype="<f4").astype(np.float64)
    except Exception as e:
        raise ValueError(f"corrupt weight blob in {path}: {e}") from e
    params = []
    pos = 0
    for fan_in, fan_out in spec.layer_shapes():
        need = fan_in * fan_out
        if pos + need + fan_out > len(flat):
            raise ValueError(f"{path}: truncated weight blob")
        params.append(flat[pos : pos + need].reshape(fan_in, fan_out))
        pos += need
        params.append(flat[pos : pos + fan_out])
        pos += fan_out
    if pos != len(flat):
        raise ValueError(f"{path}: weight blob has {len(flat) - pos} trailing values")
    return Weights(spec=spec, params=tuple(params))


def subsample_points(points: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly subsample (without replacement) to at most `cap` points."""
    pts = np.asarray(points, dtype=float).reshape(-1, POINT_DIM)
    if len(pts) <= cap:
        return pts
    idx = rng.choice(len(pts), size=cap, replace=False)
    return pts[np.sort(idx)]
