import json
import os

import numpy as np
import pytest

from peerlabel.cli import main

FAST_WORLD = {
    "n_frames": 8,
    "n_vehicles": 4,
    "separation": [5.0, 30.0],
    "sensor": {"beam_count": 10},
}


def run(args, workdir):
    return main(["--workdir", str(workdir)] if False else [args[0], "--workdir", str(workdir), *args[1:]])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    wd = tmp_path_factory.mktemp("cliwork")
    with open(wd / "world.json", "w") as f:
        json.dump(FAST_WORLD, f)
    return wd


@pytest.fixture(scope="module")
def dataset(workdir):
    rc = run(["simulate", "--config", "world.json", "--out", "tiny", "--seed", "3"], workdir)
    assert rc == 0
    return "tiny"


class TestExitCodes:
    def test_missing_seed_is_usage_error(self, workdir):
        assert run(["simulate", "--out", "x"], workdir) == 1

    def test_pop_seed_env_accepted(self, workdir, monkeypatch):
        monkeypatch.setenv("POP_SEED", "5")
        assert run(["simulate", "--frames", "2", "--config", "world.json", "--out", "envseed"], workdir) == 0

    def test_seed_flag_overrides_env(self, workdir, monkeypatch):
        monkeypatch.setenv("POP_SEED", "5")
        rc = run(["simulate", "--frames", "2", "--config", "world.json", "--out", "cliseed", "--seed", "7"], workdir)
        assert rc == 0
        # --seed 7 output differs from the POP_SEED=5 output
        a = (workdir / "envseed.frames.jsonl").read_text()
        b = (workdir / "cliseed.frames.jsonl").read_text()
        assert a != b

    def test_missing_dataset_is_data_error(self, workdir):
        rc = run(["evaluate", "--dataset", "nope", "--labels", "also-nope.jsonl", "--out", "m.json"], workdir)
        assert rc == 2

    def test_bad_config_field_is_data_error(self, workdir):
        with open(workdir / "bad.json", "w") as f:
            json.dump({"not_a_field": 1}, f)
        rc = run(["simulate", "--config", "bad.json", "--out", "x", "--seed", "0"], workdir)
        assert rc == 2

    def test_invalid_config_value_is_data_error(self, workdir):
        with open(workdir / "badval.json", "w") as f:
            json.dump({"n_frames": -3}, f)
        rc = run(["simulate", "--config", "badval.json", "--out", "x", "--seed", "0"], workdir)
        assert rc == 2

    def test_unknown_command_is_usage_error(self, workdir):
        assert main(["frobnicate"]) == 1


class TestHelp:
    def test_all_subcommands_document_flags(self, capsys):
        from peerlabel.cli import build_parser

        parser = build_parser()
        for cmd, flags in {
            "simulate": ["--out", "--seed", "--config", "--workdir"],
            "gen-ranker-data": ["--dataset", "--frames", "--per-box", "--out"],
            "train-ranker": ["--samples", "--epochs", "--batch", "--lr"],
            "refine": ["--ranker", "--mode", "--out"],
            "selftrain": ["--ranker", "--config", "--out-dir", "--threads"],
            "evaluate": ["--labels", "--dataset", "--out"],
            "plot": ["--kind", "--frame", "--labels", "--out"],
        }.items():
            sub = next(
                a for a in parser._subparsers._group_actions[0].choices.items() if a[0] == cmd
            )[1]
            text = sub.format_help()
            for flag in flags:
                assert flag in text, f"{cmd} help lacks {flag}"


class TestSimulateEvaluate:
    def test_dataset_files_written(self, workdir, dataset):
        assert (workdir / "tiny.frames.jsonl").exists()
        assert (workdir / "tiny.reflabels.jsonl").exists()
        manifest = json.loads((workdir / "tiny.manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 3
        assert set(manifest["outputs"]) == {"tiny.frames.jsonl", "tiny.reflabels.jsonl"}

    def test_simulate_deterministic(self, workdir, dataset):
        rc = run(["simulate", "--config", "world.json", "--out", "tiny2", "--seed", "3"], workdir)
        assert rc == 0
        assert (workdir / "tiny.frames.jsonl").read_text() == (workdir / "tiny2.frames.jsonl").read_text()
        assert (workdir / "tiny.reflabels.jsonl").read_text() == (workdir / "tiny2.reflabels.jsonl").read_text()

    def test_evaluate_raw_labels(self, workdir, dataset):
        rc = run(["evaluate", "--dataset", "tiny", "--labels", "tiny.reflabels.jsonl", "--out", "raw.metrics.json"], workdir)
        assert rc == 0
        rep = json.loads((workdir / "raw.metrics.json").read_text())
        assert "precision" in rep and "recall" in rep and "ap" in rep
        assert 0.0 <= rep["precision"]["iou=0.5"] <= 1.0


class TestRankerCommands:
    def test_gen_train_refine_chain(self, workdir, dataset):
        rc = run(["gen-ranker-data", "--dataset", "tiny", "--frames", "4", "--per-box", "6",
                  "--out", "samples.jsonl", "--seed", "1"], workdir)
        assert rc == 0
        assert sum(1 for _ in open(workdir / "samples.jsonl")) > 20

        rc = run(["train-ranker", "--samples", "samples.jsonl", "--out", "ranker.json",
                  "--epochs", "2", "--widths", "8,16", "--head-hidden", "8", "--seed", "2"], workdir)
        assert rc == 0

        rc = run(["refine", "--dataset", "tiny", "--ranker", "ranker.json", "--mode", "c2f",
                  "--out", "refined.jsonl", "--seed", "4"], workdir)
        assert rc == 0
        from peerlabel.simkit import load_labels

        refined = load_labels(str(workdir / "refined.jsonl"))
        assert len(refined) == FAST_WORLD["n_frames"]

    def test_refine_deterministic_across_threads(self, workdir, dataset):
        for name, threads in (("r1.jsonl", "1"), ("r2.jsonl", "2")):
            rc = run(["refine", "--dataset", "tiny", "--ranker", "ranker.json", "--mode", "naive",
                      "--out", name, "--seed", "9", "--threads", threads], workdir)
            assert rc == 0
        assert (workdir / "r1.jsonl").read_text() == (workdir / "r2.jsonl").read_text()

    def test_corrupt_weights_rejected(self, workdir, dataset):
        (workdir / "junk.json").write_text("{]")
        rc = run(["refine", "--dataset", "tiny", "--ranker", "junk.json", "--mode", "c2f",
                  "--out", "x.jsonl", "--seed", "0"], workdir)
        assert rc == 2


class TestPlot:
    def test_scene_svg_structure(self, workdir, dataset):
        rc = run(["plot", "--dataset", "tiny", "--kind", "scene", "--frame", "0",
                  "--labels", "refined=refined.jsonl", "--out", "scene.svg"], workdir)
        assert rc == 0
        svg = (workdir / "scene.svg").read_text()
        assert svg.startswith("<svg")
        for cls in ('class="gt"', 'class="reference"', 'class="refined"'):
            assert cls in svg
        assert "<polygon" in svg
        assert "<text" in svg  # legend entries
        assert "gt (" in svg and "reference (" in svg

    def test_distance_recall_svg(self, workdir, dataset):
        rc = run(["plot", "--dataset", "tiny", "--kind", "distance-recall", "--out", "dr.svg"], workdir)
        assert rc == 0
        svg = (workdir / "dr.svg").read_text()
        assert "<polyline" in svg and "recall" in svg

    def test_pr_svg(self, workdir, dataset):
        rc = run(["plot", "--dataset", "tiny", "--kind", "pr", "--out", "pr.svg"], workdir)
        assert rc == 0
        svg = (workdir / "pr.svg").read_text()
        assert "<polyline" in svg and "precision" in svg

    def test_bad_frame_index(self, workdir, dataset):
        rc = run(["plot", "--dataset", "tiny", "--kind", "scene", "--frame", "99", "--out", "x.svg"], workdir)
        assert rc == 2
