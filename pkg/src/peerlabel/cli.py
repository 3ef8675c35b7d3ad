"""Command-line interface: simulate | gen-ranker-data | train-ranker | refine |
selftrain | evaluate | plot.

Conventions: exit 0 on success, 1 on usage errors, 2 on data errors (missing
or malformed files). Every stochastic command requires a seed, either --seed
or the POP_SEED environment variable. All paths resolve against --workdir.
Each command writes a manifest (config snapshot, seed, inputs, output hashes,
per-stage wall-clock) next to its outputs; re-running with the same inputs
and seed reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import detector, metrics, net, pipeline, plots, ranker, simkit

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1 here
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

_NESTED = {
    "sensor": simkit.SensorModel,
    "refine": ranker.RefineConfig,
    "proposal": detector.ProposalConfig,
    "detector_train": detector.DetectorTrainConfig,
    "net_spec": net.NetSpec,
}


def _dataclass_from_dict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise DataError(f"{where}: expected an object for {cls.__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise DataError(f"{where}: unknown field {key!r} for {cls.__name__}")
        if key in _NESTED and isinstance(value, dict):
            value = _dataclass_from_dict(_NESTED[key], value, f"{where}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise DataError(f"{where}: {e}") from e


def _dataclass_to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _dataclass_to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def load_json_config(path: str, cls):
    if not os.path.exists(path):
        raise DataError(f"missing config file: {path}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not valid JSON: {e}") from e
    return _dataclass_from_dict(cls, doc, path)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: str, command: str, config, seed, inputs: list[str], outputs: list[str], stages: dict[str, float]) -> None:
    doc = {
        "command": command,
        "config": _dataclass_to_dict(config) if config is not None else None,
        "seed": seed,
        "inputs": sorted(os.path.abspath(p) for p in inputs),
        "outputs": {os.path.basename(p): _sha256(p) for p in sorted(outputs)},
        "stage_seconds": {k: round(v, 3) for k, v in stages.items()},
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def _write_json(path: str, doc) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _need_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("POP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"POP_SEED must be an integer, got {env!r}")
    raise UsageError("this command is stochastic: pass --seed or set POP_SEED")


def _load_dataset(args) -> pipeline.Dataset:
    base = os.path.join(args.workdir, args.dataset)
    try:
        frames, ref_labels = simkit.load_dataset(base)
    except (FileNotFoundError, ValueError) as e:
        raise DataError(str(e)) from e
    return pipeline.Dataset(frames=frames, ref_labels=ref_labels)


def _load_weights(path: str) -> net.Weights:
    if not os.path.exists(path):
        raise DataError(f"missing weights file: {path}")
    try:
        return net.load_weights(path)
    except ValueError as e:
        raise DataError(str(e)) from e


def _mapper(threads: int):
    if threads <= 1:
        return map
    pool = ThreadPoolExecutor(max_workers=threads)
    return pool.map


def _ego_gt_per_frame(frames):
    return [simkit.gt_boxes_ego(fr) for fr in frames]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    seed = _need_seed(args)
    world = load_json_config(os.path.join(args.workdir, args.config), simkit.WorldConfig) if args.config else simkit.WorldConfig()
    noise = load_json_config(os.path.join(args.workdir, args.noise_config), simkit.NoiseModel) if args.noise_config else simkit.NoiseModel()
    if args.frames:
        world = dataclasses.replace(world, n_frames=args.frames)
    t0 = time.monotonic()
    try:
        frames = simkit.generate_sequence(world, seed=seed)
    except ValueError as e:
        raise DataError(str(e)) from e
    t1 = time.monotonic()
    labels = simkit.make_reference_predictions(frames, noise, seed=seed, frame_dt=world.frame_dt)
    t2 = time.monotonic()
    base = os.path.join(args.workdir, args.out)
    fpath, lpath = simkit.save_dataset(base, frames, labels)
    write_manifest(
        base + ".manifest.json", "simulate", world, seed, [], [fpath, lpath],
        {"simulate": t1 - t0, "reference_labels": t2 - t1, "write": time.monotonic() - t2},
    )
    print(f"wrote {fpath} and {lpath} ({len(frames)} frames)")
    return EXIT_OK


def _sample_to_json(s: ranker.RankerSample) -> dict:
    return {
        "points": np.round(s.points, 4).tolist(),
        "box_features": list(s.box_features),
        "target_iou": s.target_iou,
        "target_offset": list(s.target_offset),
    }


def _sample_from_json(d: dict) -> ranker.RankerSample:
    return ranker.RankerSample(
        points=np.array(d["points"], dtype=float).reshape(-1, 3),
        box_features=np.array(d["box_features"], dtype=float),
        target_iou=float(d["target_iou"]),
        target_offset=np.array(d["target_offset"], dtype=float),
    )


def cmd_gen_ranker_data(args) -> int:
    seed = _need_seed(args)
    ds = _load_dataset(args)
    idx = np.round(np.linspace(0, len(ds.frames) - 1, min(args.frames, len(ds.frames)))).astype(int)
    annotated = [ds.frames[i] for i in sorted(set(idx.tolist()))]
    t0 = time.monotonic()
    samples = ranker.gen_training_samples(annotated, per_box=args.per_box, seed=seed)
    out = os.path.join(args.workdir, args.out)
    simkit._write_jsonl(out, (_sample_to_json(s) for s in samples))
    write_manifest(
        out + ".manifest.json", "gen-ranker-data", None, seed,
        [os.path.join(args.workdir, args.dataset) + ".frames.jsonl"], [out],
        {"generate": time.monotonic() - t0},
    )
    print(f"wrote {out}: {len(samples)} samples from {len(annotated)} annotated frames")
    return EXIT_OK


def cmd_train_ranker(args) -> int:
    seed = _need_seed(args)
    path = os.path.join(args.workdir, args.samples)
    if not os.path.exists(path):
        raise DataError(f"missing samples file: {path}")
    try:
        samples = [_sample_from_json(d) for d in simkit._read_jsonl(path)]
    except (ValueError, KeyError) as e:
        raise DataError(f"{path}: bad sample file: {e}") from e
    if not samples:
        raise DataError(f"{path}: no samples")
    spec = net.NetSpec(point_mlp_widths=tuple(int(x) for x in args.widths.split(",")), head_hidden=args.head_hidden)
    t0 = time.monotonic()
    losses: list[float] = []
    w = ranker.train_ranker(
        samples, spec=spec, epochs=args.epochs, batch=args.batch, lr=args.lr, seed=seed,
        on_epoch=lambda e, l: losses.append(l),
    )
    out = os.path.join(args.workdir, args.out)
    net.save_weights(w, out)
    write_manifest(
        out + ".manifest.json", "train-ranker", spec, seed, [path], [out],
        {"train": time.monotonic() - t0},
    )
    print(f"wrote {out}; epoch losses {losses[0]:.4f} -> {losses[-1]:.4f}")
    return EXIT_OK


def cmd_refine(args) -> int:
    seed = _need_seed(args)
    ds = _load_dataset(args)
    ranker_w = _load_weights(os.path.join(args.workdir, args.ranker))
    cfg = load_json_config(os.path.join(args.workdir, args.config), pipeline.PipelineConfig) if args.config else pipeline.PipelineConfig()
    cfg = dataclasses.replace(cfg, refine_mode=args.mode)
    t0 = time.monotonic()
    fmap = _mapper(args.threads)
    refined = list(
        fmap(
            lambda pair: pipeline.refine_frame_labels(pair[0], pair[1], ranker_w, cfg, seed),
            zip(ds.frames, ds.ref_labels),
        )
    )
    out = os.path.join(args.workdir, args.out)
    simkit.save_labels(out, refined, [fr.frame_id for fr in ds.frames])
    write_manifest(
        out + ".manifest.json", "refine", cfg, seed,
        [os.path.join(args.workdir, args.dataset) + ".frames.jsonl"], [out],
        {"refine": time.monotonic() - t0},
    )
    n_in = sum(map(len, ds.ref_labels))
    n_out = sum(map(len, refined))
    print(f"wrote {out}: {n_in} labels in, {n_out} refined labels kept")
    return EXIT_OK


def cmd_selftrain(args) -> int:
    seed = _need_seed(args)
    ds = _load_dataset(args)
    ranker_w = _load_weights(os.path.join(args.workdir, args.ranker))
    cfg = load_json_config(os.path.join(args.workdir, args.config), pipeline.PipelineConfig) if args.config else pipeline.PipelineConfig()
    out_dir = os.path.join(args.workdir, args.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    fmap = _mapper(args.threads)
    stages: dict[str, float] = {}

    t0 = time.monotonic()
    det1, refined = pipeline.run_step1(ds, ranker_w, cfg, seed=seed, frame_map=fmap)
    stages["step1"] = time.monotonic() - t0
    t0 = time.monotonic()
    det_final, final_labels = pipeline.run_step2(
        ds, det1, ranker_w, cfg, seed=seed, step1_labels=refined, frame_map=fmap
    )
    stages["step2"] = time.monotonic() - t0

    t0 = time.monotonic()
    ids = [fr.frame_id for fr in ds.frames]
    paths = {
        "step1_labels": os.path.join(out_dir, "step1.labels.jsonl"),
        "final_labels": os.path.join(out_dir, "final.labels.jsonl"),
        "det1": os.path.join(out_dir, "detector_step1.weights.json"),
        "det_final": os.path.join(out_dir, "detector_final.weights.json"),
        "metrics": os.path.join(out_dir, "metrics.json"),
    }
    simkit.save_labels(paths["step1_labels"], refined, ids)
    simkit.save_labels(paths["final_labels"], final_labels, ids)
    net.save_weights(det1, paths["det1"])
    net.save_weights(det_final, paths["det_final"])

    gt = _ego_gt_per_frame(ds.frames)
    report = {
        "label_quality": {
            "raw": metrics.metrics_report(ds.ref_labels, gt),
            "step1": metrics.metrics_report(refined, gt),
            "final": metrics.metrics_report(final_labels, gt),
        }
    }
    if args.eval_dataset:
        eval_ds = simkit.load_dataset(os.path.join(args.workdir, args.eval_dataset))
        eval_frames = eval_ds[0]
        dets = [
            detector.detect(det_final, fr.ego_cloud, cfg.proposal, seed=fr.frame_id)
            for fr in eval_frames
        ]
        report["detector_eval"] = metrics.metrics_report(dets, _ego_gt_per_frame(eval_frames))
    _write_json(paths["metrics"], report)
    stages["write"] = time.monotonic() - t0
    write_manifest(
        os.path.join(out_dir, "run.manifest.json"), "selftrain", cfg, seed,
        [os.path.join(args.workdir, args.dataset) + ".frames.jsonl"],
        list(paths.values()), stages,
    )
    print(f"selftrain done: outputs in {out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ds = _load_dataset(args)
    lpath = os.path.join(args.workdir, args.labels)
    if not os.path.exists(lpath):
        raise DataError(f"missing labels file: {lpath}")
    try:
        labels = simkit.load_labels(lpath)
    except ValueError as e:
        raise DataError(str(e)) from e
    if len(labels) != len(ds.frames):
        raise DataError(f"{lpath}: {len(labels)} label rows vs {len(ds.frames)} frames")
    report = metrics.metrics_report(labels, _ego_gt_per_frame(ds.frames))
    out = os.path.join(args.workdir, args.out)
    _write_json(out, report)
    write_manifest(out + ".manifest.json", "evaluate", None, None, [lpath], [out], {})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    ds = _load_dataset(args)
    out = os.path.join(args.workdir, args.out)
    label_sets = {}
    for spec_item in args.labels or []:
        if "=" in spec_item:
            name, path = spec_item.split("=", 1)
        else:
            name, path = os.path.basename(spec_item).split(".")[0], spec_item
        full = os.path.join(args.workdir, path)
        if not os.path.exists(full):
            raise DataError(f"missing labels file: {full}")
        label_sets[name] = simkit.load_labels(full)

    if args.kind == "scene":
        if not 0 <= args.frame < len(ds.frames):
            raise DataError(f"frame {args.frame} out of range (dataset has {len(ds.frames)})")
        fr = ds.frames[args.frame]
        layers = {"gt": simkit.gt_boxes_ego(fr)}
        layers["reference"] = [lb.box for lb in ds.ref_labels[args.frame]]
        for name, labs in label_sets.items():
            layers[name] = [lb.box for lb in labs[args.frame]]
        plots.write_svg(out, plots.scene_svg(fr, layers))
    elif args.kind == "distance-recall":
        gt = [simkit.visible_gt_ego(fr) for fr in ds.frames]
        series = []
        sets = {"reference": ds.ref_labels, **label_sets}
        for name, labs in sets.items():
            curve = simkit.distance_recall_curve(ds.frames, labs, gt, args.iou, [0, 20, 40, 60, 80])
            pts = [((lo + hi) / 2, r) for (lo, hi), r in curve if r is not None]
            if pts:
                series.append((name, [p[0] for p in pts], [p[1] for p in pts]))
        plots.write_svg(out, plots.curve_svg(series, "ego-reference distance (m)", f"recall@{args.iou:g}", "label recall vs separation"))
    elif args.kind == "pr":
        gt = _ego_gt_per_frame(ds.frames)
        series = []
        sets = {"reference": ds.ref_labels, **label_sets}
        for name, labs in sets.items():
            xs, ys = _pr_curve_points(labs, gt, args.iou)
            series.append((name, xs, ys))
        plots.write_svg(out, plots.curve_svg(series, "recall", "precision", f"PR at IoU {args.iou:g}"))
    print(f"wrote {out}")
    return EXIT_OK


def _pr_curve_points(labels, gts, iou):
    flat = []
    for fi, labs in enumerate(labels):
        for lb in labs:
            flat.append((lb.confidence if lb.confidence is not None else 1.0, fi, lb))
    order = np.argsort(-np.array([c for c, _, _ in flat]), kind="stable") if flat else []
    claimed = [np.zeros(len(g), dtype=bool) for g in gts]
    n_gt = sum(len(g) for g in gts)
    tp = fp = 0
    xs, ys = [0.0], [1.0]
    from .geom import iou_bev

    for oi in order:
        _, fi, lb = flat[int(oi)]
        best, bi = 0.0, -1
        for gi, g in enumerate(gts[fi]):
            if not claimed[fi][gi]:
                v = iou_bev(lb.box, g)
                if v >= iou and v > best:
                    best, bi = v, gi
        if bi >= 0:
            claimed[fi][bi] = True
            tp += 1
        else:
            fp += 1
        xs.append(tp / max(1, n_gt))
        ys.append(tp / (tp + fp))
    return xs, ys


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="peerlabel", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=True):
        sp.add_argument("--workdir", default=".", help="base directory for all paths (default: .)")
        sp.add_argument("--seed", type=int, default=None, help="random seed (or set POP_SEED)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for per-frame work (default 1, the deterministic reference path)")

    sp = sub.add_parser("simulate", help="generate a synthetic two-agent dataset (JSONL pair)")
    common(sp)
    sp.add_argument("--config", default=None, help="world config JSON (defaults used when absent)")
    sp.add_argument("--noise-config", default=None, help="reference-label noise config JSON")
    sp.add_argument("--frames", type=int, default=None, help="override n_frames")
    sp.add_argument("--out", required=True, help="dataset basename (writes .frames.jsonl and .reflabels.jsonl)")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("gen-ranker-data", help="build ranker training samples from annotated frames")
    common(sp)
    sp.add_argument("--dataset", required=True, help="dataset basename")
    sp.add_argument("--frames", type=int, default=40, help="number of annotated frames to use (default 40)")
    sp.add_argument("--per-box", type=int, default=100, help="candidates per ground-truth box (default 100)")
    sp.add_argument("--out", required=True, help="output samples JSONL")
    sp.set_defaults(fn=cmd_gen_ranker_data)

    sp = sub.add_parser("train-ranker", help="train the box ranker on generated samples")
    common(sp)
    sp.add_argument("--samples", required=True, help="samples JSONL from gen-ranker-data")
    sp.add_argument("--out", required=True, help="output weights JSON")
    sp.add_argument("--epochs", type=int, default=45)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--widths", default="32,64,128", help="per-point MLP widths (default 32,64,128)")
    sp.add_argument("--head-hidden", type=int, default=96)
    sp.set_defaults(fn=cmd_train_ranker)

    sp = sub.add_parser("refine", help="refine the dataset's reference labels with a trained ranker")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--ranker", required=True, help="ranker weights JSON")
    sp.add_argument("--mode", choices=("c2f", "naive"), default="c2f")
    sp.add_argument("--config", default=None, help="pipeline config JSON")
    sp.add_argument("--out", required=True, help="output labels JSONL")
    sp.set_defaults(fn=cmd_refine)

    sp = sub.add_parser("selftrain", help="run the full two-round curriculum self-training")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--ranker", required=True)
    sp.add_argument("--config", default=None, help="pipeline config JSON")
    sp.add_argument("--eval-dataset", default=None, help="optional held-out dataset for detector AP")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(fn=cmd_selftrain)

    sp = sub.add_parser("evaluate", help="precision/recall/AP of a label file against dataset ground truth")
    common(sp, seed_required=False)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True, help="output metrics JSON")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("plot", help="emit an SVG: BEV scene, distance-recall, or PR curves")
    common(sp, seed_required=False)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--kind", choices=("scene", "distance-recall", "pr"), default="scene")
    sp.add_argument("--frame", type=int, default=0, help="frame index for scene plots")
    sp.add_argument("--labels", action="append", default=None, help="label overlay, name=path or path (repeatable)")
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
