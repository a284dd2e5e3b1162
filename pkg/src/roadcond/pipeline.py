"""The synthetic end-to-end run, expressed as the CLI invocations an operator would type."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .cli import run

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineSpec:
    scenes: int = 150
    seed: int = 7
    dims: tuple[int, int] = (64, 80)
    # the segmenter runs at scene resolution and needs a faster step than the
    # classifier defaults to converge within 20 epochs on ~30 training scenes
    seg_lr: float = 2e-3
    lam: float = 1.0
    denominator: str = "paper"


@dataclass
class PipelineResult:
    root: Path
    seg_metrics: dict
    cls_summary: dict
    report: dict
    seconds: dict = field(default_factory=dict)

    @property
    def artifacts(self) -> dict[str, Path]:
        return {
            "segmenter": self.root / "seg" / "segmenter.ckpt",
            "classifier": self.root / "cls" / "classifier.ckpt",
            "report_json": self.root / "eval" / "report.json",
            "report_svg": self.root / "eval" / "report.svg",
            "seg_metrics": self.root / "seg" / "seg_metrics.json",
            "cls_summary": self.root / "cls" / "cls_summary.json",
        }


def _step(name: str, argv: list[str], seconds: dict) -> None:
    t0 = time.perf_counter()
    code = run(argv + ["--log-level", "WARNING"])
    seconds[name] = time.perf_counter() - t0
    if code != 0:
        raise RuntimeError(f"step {name!r} exited with {code}: {' '.join(argv)}")


def run_synthetic_pipeline(root, spec: PipelineSpec = PipelineSpec()) -> PipelineResult:
    """synth, train-seg, extract-road, train-cls, evaluate into ``root``."""
    root = Path(root)
    h, w = spec.dims
    size = f"{h}x{w}"
    seconds: dict[str, float] = {}
    s = str(spec.seed)
    _step("synth", ["synth", "--scenes", str(spec.scenes), "--seed", s, "--dims", size,
                    "--out", str(root / "synth")], seconds)
    _step("train-seg", ["train-seg", "--data", str(root / "synth" / "seg"), "--out", str(root / "seg"),
                        "--seed", s, "--lr", repr(spec.seg_lr), "--seg-size", size], seconds)
    _step("extract-road", ["extract-road", "--data", str(root / "synth" / "cls"), "--out", str(root / "extracted"),
                           "--checkpoint", str(root / "seg" / "segmenter.ckpt")], seconds)
    _step("train-cls", ["train-cls", "--data", str(root / "extracted"), "--out", str(root / "cls"), "--seed", s,
                        "--lambda", repr(spec.lam), "--denominator", spec.denominator], seconds)
    _step("evaluate", ["evaluate", "--data", str(root / "extracted"), "--out", str(root / "eval"),
                       "--checkpoint", str(root / "cls" / "classifier.ckpt"), "--format", "svg"], seconds)
    result = PipelineResult(
        root=root,
        seg_metrics=json.loads((root / "seg" / "seg_metrics.json").read_text()),
        cls_summary=json.loads((root / "cls" / "cls_summary.json").read_text()),
        report=json.loads((root / "eval" / "report.json").read_text()),
        seconds=seconds,
    )
    log.info("pipeline finished in %.1fs", sum(seconds.values()))
    return result
