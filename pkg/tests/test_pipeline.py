"""Artifacts of the shared synthetic run: existence, schema and cross-artifact consistency."""

import csv
import json
import xml.etree.ElementTree as ET

import numpy as np

from roadcond import checkpoint
from roadcond.metrics import parse_report


def test_artifacts_exist(pipeline_run):
    for name, path in pipeline_run.artifacts.items():
        assert path.is_file() and path.stat().st_size > 0, name


def test_checkpoint_kinds(pipeline_run):
    a = pipeline_run.artifacts
    assert checkpoint.load(a["segmenter"]).kind == "segmenter"
    ck = checkpoint.load(a["classifier"])
    assert ck.kind == "classifier"
    assert ck.epoch == pipeline_run.cls_summary["best_epoch"]
    assert ck.val_metric == pipeline_run.cls_summary["val_macro_f1"]


def test_history_is_complete(pipeline_run):
    hist = pipeline_run.cls_summary["history"]
    assert [h["epoch"] for h in hist] == list(range(1, 21))
    assert all(np.isfinite([h["train_loss"], h["val_loss"], h["val_metric"]]).all() for h in hist)
    best = max(hist, key=lambda h: h["val_metric"])
    assert pipeline_run.cls_summary["val_macro_f1"] == best["val_metric"]


def test_splits_partition_extracted_set(pipeline_run):
    root = pipeline_run.root
    seen = []
    for part in ("train", "val", "test"):
        with open(root / "cls" / "splits" / f"{part}.csv", newline="") as f:
            seen += [row[0] for row in list(csv.reader(f))[1:]]
    on_disk = sorted(str(p.relative_to(root / "extracted")) for p in (root / "extracted").rglob("*.ppm"))
    assert sorted(seen) == on_disk and len(set(seen)) == len(seen)


def test_report_consistent(pipeline_run):
    rep, cm, hist = parse_report(pipeline_run.artifacts["report_json"].read_bytes())
    total = int(cm.counts.sum())
    assert total == pipeline_run.report["extra"]["n"] == pipeline_run.cls_summary["n_test"]
    assert hist.total == total == rep.total_support
    assert abs(rep.macro_f1 - pipeline_run.report["macro"]["f1"]) < 1e-12


def test_report_svg_well_formed(pipeline_run):
    root = ET.fromstring(pipeline_run.artifacts["report_svg"].read_bytes())
    assert root.tag.endswith("svg")
    n = len(pipeline_run.report["classes"])
    cells = [e for e in root.iter() if e.tag.endswith("rect") and e.get("class") == "cell"]
    assert len(cells) == n * n


def test_contrastive_term_widens_margin(pipeline_run, lambda0_summary):
    assert pipeline_run.cls_summary["val_separation_margin"] > lambda0_summary["val_separation_margin"]


def test_summaries_are_path_free(pipeline_run):
    for name in ("seg_metrics", "cls_summary", "report_json"):
        assert str(pipeline_run.root) not in pipeline_run.artifacts[name].read_text(), name
    json.loads(pipeline_run.artifacts["report_json"].read_text())
