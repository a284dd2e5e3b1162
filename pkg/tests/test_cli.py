import hashlib
import json
import os
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from roadcond import cli
from roadcond.cli import run
from roadcond.metrics import ConfusionMatrix, class_report, confidence_histogram, emit_report
from roadcond.train import TrainingError


def _tree_digest(root: Path) -> dict[str, str]:
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def mini(tmp_path_factory):
    """A small end-to-end run with every step's input digested before and after."""
    root = tmp_path_factory.mktemp("mini")
    q = ["--log-level", "WARNING"]
    digests = {}
    assert run(["synth", "--scenes", "24", "--seed", "3", "--dims", "32x40", "--out", str(root / "synth")] + q) == 0
    steps = [
        ("train-seg", root / "synth" / "seg",
         ["train-seg", "--data", str(root / "synth" / "seg"), "--out", str(root / "seg"), "--seg-size", "32x40",
          "--epochs", "2", "--lr", "2e-3", "--batch", "8"]),
        ("extract-road", root / "synth" / "cls",
         ["extract-road", "--data", str(root / "synth" / "cls"), "--out", str(root / "ext"),
          "--checkpoint", str(root / "seg" / "segmenter.ckpt"), "--size", "16x16"]),
        ("train-cls", root / "ext",
         ["train-cls", "--data", str(root / "ext"), "--out", str(root / "cls"), "--size", "16x16",
          "--epochs", "2", "--lr", "1e-3", "--batch", "8"]),
        ("evaluate", root / "ext",
         ["evaluate", "--data", str(root / "ext"), "--out", str(root / "eval"),
          "--checkpoint", str(root / "cls" / "classifier.ckpt"), "--format", "csv"]),
    ]
    for name, data, argv in steps:
        before = _tree_digest(data)
        assert run(argv + q) == 0, name
        digests[name] = (before, _tree_digest(data))
    return root, digests


class TestUsage:
    @pytest.mark.parametrize("argv", [
        [],
        ["frobnicate"],
        ["synth"],
        ["synth", "--out", "x", "--bogus"],
        ["synth", "--out", "x", "--dims", "64by80"],
        ["train-cls", "--data", "a", "--out", "b", "--lambda", "-1"],
        ["train-cls", "--data", "a", "--out", "b", "--denominator", "other"],
        ["train-seg", "--data", "a", "--out", "b", "--split", "0.5,0.5,0.5"],
        ["evaluate", "--data", "a", "--out", "b", "--checkpoint", "c", "--format", "pdf"],
    ])
    def test_exit_one(self, argv, capsys):
        assert run(argv) == 1
        assert "usage" in capsys.readouterr().err

    def test_help(self, capsys):
        assert run(["--help"]) == 0
        assert "train-cls" in capsys.readouterr().out

    def test_log_level_after_subcommand(self, tmp_path):
        assert run(["synth", "--out", str(tmp_path / "s"), "--scenes", "3", "--dims", "8x8", "--log-level",
                    "ERROR"]) == 0

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "roadcond", "nope"], capture_output=True, text=True)
        assert proc.returncode == 1 and proc.stdout == ""


class TestValidation:
    def test_missing_dataset(self, tmp_path):
        assert run(["train-cls", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1

    def test_out_inside_data(self, mini):
        root, _ = mini
        assert run(["train-cls", "--data", str(root / "ext"), "--out", str(root / "ext" / "sub")]) == 1
        assert not (root / "ext" / "sub").exists()

    def test_wrong_checkpoint_kind(self, mini, tmp_path):
        root, _ = mini
        assert run(["extract-road", "--data", str(root / "synth" / "cls"), "--out", str(tmp_path / "x"),
                    "--checkpoint", str(root / "cls" / "classifier.ckpt")]) == 1

    def test_bad_synth_classes(self, tmp_path):
        assert run(["synth", "--out", str(tmp_path / "s"), "--classes", "asphalt_good,lava"]) == 1
        assert run(["synth", "--out", str(tmp_path / "s"), "--classes", "asphalt_good"]) == 1

    def test_indivisible_seg_size(self, mini, tmp_path):
        root, _ = mini
        assert run(["train-seg", "--data", str(root / "synth" / "seg"), "--out", str(tmp_path / "s"),
                    "--seg-size", "30x40"]) == 1

    def test_runtime_failure_exit_two(self, mini, tmp_path, monkeypatch):
        root, _ = mini

        def boom(*a, **k):
            raise TrainingError("non-finite loss nan at epoch 1, batch 0")

        monkeypatch.setattr(cli, "train_classifier", boom)
        assert run(["train-cls", "--data", str(root / "ext"), "--out", str(tmp_path / "c"), "--size", "16x16",
                    "--log-level", "ERROR"]) == 2


class TestSynth:
    def test_twice_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert run(["synth", "--scenes", "60", "--seed", "7", "--out", str(tmp_path / name),
                        "--log-level", "WARNING"]) == 0
        a, b = _tree_digest(tmp_path / "a"), _tree_digest(tmp_path / "b")
        assert a == b and len(a) == 180


class TestPipelineSteps:
    def test_inputs_not_mutated(self, mini):
        _, digests = mini
        for name, (before, after) in digests.items():
            assert before == after, name

    def test_artifacts(self, mini):
        root, _ = mini
        seg = json.loads((root / "seg" / "seg_metrics.json").read_text())
        assert {"best_epoch", "val_dice", "test_dice", "history"} <= set(seg)
        assert len(list((root / "ext").rglob("*.ppm"))) == 24
        summary = json.loads((root / "cls" / "cls_summary.json").read_text())
        assert summary["n_train"] + summary["n_val"] + summary["n_test"] == 24
        for part in ("train", "val", "test"):
            text = (root / "cls" / "splits" / f"{part}.csv").read_text()
            assert text.startswith("path,label\n") and str(root) not in text
        rows = (root / "eval" / "report.csv").read_text().splitlines()
        assert len(rows) == 1 + 3 + 1
        report = json.loads((root / "eval" / "report.json").read_text())
        assert report["extra"]["subset"] == "test"
        assert report["macro"]["support"] == summary["n_test"]

    def test_evaluate_subsets(self, mini, tmp_path):
        root, _ = mini
        assert run(["evaluate", "--data", str(root / "ext"), "--out", str(tmp_path / "all"), "--subset", "all",
                    "--checkpoint", str(root / "cls" / "classifier.ckpt"), "--log-level", "WARNING"]) == 0
        report = json.loads((tmp_path / "all" / "report.json").read_text())
        assert report["extra"]["n"] == 24 and np.sum(report["confusion_matrix"]["counts"]) == 24

    def test_parallel_mode_is_deterministic(self, mini, tmp_path):
        root, _ = mini
        argv = [sys.executable, "-m", "roadcond", "train-cls", "--data", str(root / "ext"), "--size", "16x16",
                "--epochs", "1", "--batch", "8", "--log-level", "WARNING"]
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            env = {**os.environ, "ROADCOND_THREADS": "3"}
            assert subprocess.run(argv + ["--out", str(out)], env=env).returncode == 0
            outs.append(_tree_digest(out))
        assert outs[0] == outs[1]


class TestReport:
    @pytest.fixture
    def report_json(self, tmp_path):
        cm = ConfusionMatrix([[5, 1], [2, 4]], ["good", "bad"])
        path = tmp_path / "report.json"
        path.write_bytes(emit_report(class_report(cm), cm, confidence_histogram([0.5, 0.9, 0.95]), "json",
                                     {"subset": "test"}))
        return path

    def test_json_to_stdout_is_identical(self, report_json, capsysbinary):
        assert run(["report", "--data", str(report_json)]) == 0
        assert capsysbinary.readouterr().out == report_json.read_bytes()

    def test_csv_and_svg_files(self, report_json, tmp_path):
        assert run(["report", "--data", str(report_json), "--format", "csv", "--out", str(tmp_path / "r.csv")]) == 0
        assert len((tmp_path / "r.csv").read_text().splitlines()) == 4
        assert run(["report", "--data", str(report_json), "--format", "svg", "--out", str(tmp_path / "r.svg")]) == 0
        ET.parse(tmp_path / "r.svg")

    def test_bad_report(self, tmp_path):
        (tmp_path / "r.json").write_text('{"schema": "x"}')
        assert run(["report", "--data", str(tmp_path / "r.json")]) == 1
        assert run(["report", "--data", str(tmp_path / "missing.json")]) == 1


class TestGradcheck:
    def test_passes(self, capsys):
        assert run(["gradcheck", "--instances", "2"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 25 and all(line.endswith("ok") for line in out)

    def test_failure_exit_two(self, monkeypatch, capsys):
        from roadcond.gradcheck import SuiteResult
        monkeypatch.setattr(cli, "run_suites", lambda **k: [SuiteResult("conv2d", 20, 1.0)])
        assert run(["gradcheck", "--log-level", "ERROR"]) == 2
        assert "FAIL" in capsys.readouterr().out
