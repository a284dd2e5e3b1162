"""Command-line entry point: synth, train-seg, extract-road, train-cls, evaluate, report, gradcheck.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
Progress goes to stderr; results go to files under ``--out`` or to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import CheckpointError
from .config import DENOMINATOR_MODES, SegTrainConfig, TrainConfig, UNetConfig
from .data import DatasetManifest, SplitSpec, resize_bilinear, scan_classification, scan_segmentation, stratified_split
from .gradcheck import GRAD_TOL, run_suites
from .metrics import (accumulate_confusion, class_report, confidence_histogram, emit_report, parse_report,
                      separation_margin)
from .netpbm import NetpbmError, read_image, write_image
from .optim import NonFiniteGradient
from .segnet import binarize, decode_mask, extract_road_area
from .synth import CLASS_FAMILIES, DEFAULT_CLASSES, synth_dataset_generate, write_synth_dataset
from .tensor import GraphError
from .train import (TrainingError, _stack, load_classifier, load_segmenter, mean_dice, predict_classifier,
                    predict_segmenter, train_classifier, train_segmentation)
from .classifier import softmax_confidence

log = logging.getLogger("roadcond")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive, got {text!r}")
    return h, w


def _ratios(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
        SplitSpec(vals)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad split {text!r}: {exc}") from None
    return vals


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def _unit(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="roadcond", description="Road-surface classification with road-area extraction.")
    shared = _Parser(add_help=False)
    shared.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser
    sub.add_parser = lambda name, **kw: _add(name, parents=[shared], **kw)

    def common(sp, data=True, out=True):
        if data:
            sp.add_argument("--data", type=Path, required=True)
        if out:
            sp.add_argument("--out", type=Path, required=True)
        sp.add_argument("--seed", type=int, default=0)

    def training(sp):
        sp.add_argument("--lr", type=_nonneg_float, default=1e-4)
        sp.add_argument("--batch", type=_positive(int), default=32)
        sp.add_argument("--epochs", type=_positive(int), default=20)
        sp.add_argument("--split", type=_ratios, default=(0.2, 0.1, 0.7), help="train,val,test ratios")
        sp.add_argument("--no-hflip", action="store_true", help="disable flip augmentation")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp, data=False)
    sp.add_argument("--scenes", type=_positive(int), default=60)
    sp.add_argument("--dims", type=_size, default=(64, 80), help="scene size HxW")
    sp.add_argument("--classes", default=",".join(DEFAULT_CLASSES),
                    help=f"comma list drawn from {','.join(CLASS_FAMILIES)}")

    sp = sub.add_parser("train-seg", help="train the road segmenter")
    common(sp)
    training(sp)
    sp.add_argument("--threshold", type=_unit, default=0.5)
    sp.add_argument("--seg-size", type=_size, default=(288, 352), help="network input HxW")
    sp.add_argument("--depth", type=_positive(int), default=2)
    sp.add_argument("--base-channels", type=_positive(int), default=8)

    sp = sub.add_parser("extract-road", help="mask and resize images with a trained segmenter")
    common(sp)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--threshold", type=_unit, default=None, help="defaults to the checkpoint's")
    sp.add_argument("--size", type=_size, default=(128, 128), help="output HxW")
    sp.add_argument("--crop", action="store_true", help="crop to the road bounding box before resizing")

    sp = sub.add_parser("train-cls", help="train the road-condition classifier")
    common(sp)
    training(sp)
    sp.add_argument("--lambda", dest="lam", type=_nonneg_float, default=1.0)
    sp.add_argument("--tau", type=_positive(float), default=0.05)
    sp.add_argument("--denominator", choices=DENOMINATOR_MODES, default="paper")
    sp.add_argument("--size", type=_size, default=(128, 128), help="network input HxW")

    sp = sub.add_parser("evaluate", help="score a classifier checkpoint on a data split")
    common(sp)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--subset", choices=["train", "val", "test", "all"], default="test")
    sp.add_argument("--format", choices=["json", "csv", "svg"], default="json")

    sp = sub.add_parser("report", help="render a JSON report as JSON, CSV or SVG")
    sp.add_argument("--data", type=Path, required=True, help="report.json from evaluate")
    sp.add_argument("--out", type=Path, default=None, help="output file; stdout if omitted")
    sp.add_argument("--format", choices=["json", "csv", "svg"], default="json")

    sp = sub.add_parser("gradcheck", help="run every finite-difference suite")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--instances", type=_positive(int), default=20)
    return p


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------


def _prepare_out(out: Path, data: Path | None = None) -> None:
    out = out.resolve()
    if data is not None:
        data = data.resolve()
        if out == data or data in out.parents:
            raise ValueError(f"--out {out} lies inside the input dataset {data}")
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ValueError(f"output directory {out} is not writable")


def _write_json(path: Path, obj) -> None:
    path.write_bytes((json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8"))


def _relative(manifest: DatasetManifest, root: Path) -> DatasetManifest:
    items = [(Path(p).relative_to(root).as_posix(), t) for p, t in manifest.items]
    return DatasetManifest(items, manifest.class_names, manifest.split, manifest.kind)


def _fit(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    return img if img.shape[:2] == tuple(size) else resize_bilinear(img, *size)


def _load_cls(man: DatasetManifest, root: Path, size) -> tuple[list[np.ndarray], list[int]]:
    return [_fit(read_image(root / p), size) for p, _ in man.items], [int(t) for _, t in man.items]


def _margin_or_none(emb: np.ndarray, labels) -> float | None:
    # undefined without a same-class pair and a cross-class pair
    try:
        return separation_margin(emb, labels)
    except ValueError:
        log.warning("separation margin undefined for %d samples", len(labels))
        return None


def _load_checkpoint(path: Path, kind: str):
    ck = ckpt_io.load(path)
    if ck.kind != kind:
        raise CheckpointError(f"{path} holds a {ck.kind} checkpoint, expected {kind}")
    return ck


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------


def cmd_synth(args) -> int:
    classes = [c for c in args.classes.split(",") if c]
    if len(classes) < 2 or len(set(classes)) != len(classes):
        raise ValueError(f"need at least two distinct classes, got {classes}")
    unknown = [c for c in classes if c not in CLASS_FAMILIES]
    if unknown:
        raise ValueError(f"unknown classes {unknown}")
    _prepare_out(args.out)
    scenes = synth_dataset_generate(args.scenes, classes, args.seed, args.dims)
    write_synth_dataset(args.out, scenes, classes)
    log.info("wrote %d scenes to %s", len(scenes), args.out)
    return 0


def cmd_train_seg(args) -> int:
    k = 2**args.depth
    if args.seg_size[0] % k or args.seg_size[1] % k:
        raise ValueError(f"--seg-size {args.seg_size} must be divisible by {k}")
    cfg = SegTrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                         input_size=args.seg_size, threshold=args.threshold, augment_hflip=not args.no_hflip,
                         split=args.split, unet=UNetConfig(depth=args.depth, base_channels=args.base_channels))
    _prepare_out(args.out, args.data)
    man = scan_segmentation(args.data)
    parts = stratified_split(man, SplitSpec(cfg.split, cfg.seed))
    if not len(parts[0]) or not len(parts[1]):
        raise ValueError("train and validation splits must be non-empty")

    def load(m):
        imgs = [_fit(read_image(p), cfg.input_size) for p, _ in m.items]
        masks = []
        for _, mp in m.items:
            mask = decode_mask(Path(mp).read_bytes())
            if mask.shape != tuple(cfg.input_size):
                mask = (resize_bilinear(mask.astype(np.float64), *cfg.input_size) >= 0.5).astype(np.uint8)
            masks.append(mask)
        return imgs, masks

    tr, va, te = (load(m) for m in parts)
    best, _ = train_segmentation(*tr, *va, cfg)
    ckpt_io.save(args.out / "segmenter.ckpt", best)
    summary = {"best_epoch": best.epoch, "val_dice": best.val_metric, "history": best.history,
               "n_train": len(tr[0]), "n_val": len(va[0]), "n_test": len(te[0])}
    if te[0]:
        net, _ = load_segmenter(best)
        probs = predict_segmenter(net, _stack(te[0], best.norm, np.float32))
        summary["test_dice"] = mean_dice(probs, np.stack(te[1]), cfg.threshold)
        log.info("segmenter test DICE %.4f over %d scenes", summary["test_dice"], len(te[0]))
    _write_json(args.out / "seg_metrics.json", summary)
    return 0


def cmd_extract_road(args) -> int:
    ck = _load_checkpoint(args.checkpoint, "segmenter")
    _prepare_out(args.out, args.data)
    net, cfg = load_segmenter(ck)
    threshold = cfg.threshold if args.threshold is None else args.threshold
    man = scan_classification(args.data)
    fractions = []
    batch = 16
    items = man.items
    for start in range(0, len(items), batch):
        chunk = items[start : start + batch]
        imgs = [_fit(read_image(p), cfg.input_size) for p, _ in chunk]
        probs = predict_segmenter(net, _stack(imgs, ck.norm, np.float32))
        for (path, label), img, prob in zip(chunk, imgs, probs):
            mask = binarize(prob, threshold)
            fractions.append(float(mask.mean()))
            dest = args.out / man.class_names[label] / Path(path).name
            dest.parent.mkdir(parents=True, exist_ok=True)
            write_image(dest, np.clip(extract_road_area(img, mask, args.size, crop=args.crop), 0.0, 1.0))
    for name in man.class_names:
        (args.out / name).mkdir(parents=True, exist_ok=True)
    log.info("extracted %d images (mean road fraction %.3f)", len(items), float(np.mean(fractions)))
    return 0


def cmd_train_cls(args) -> int:
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, lam=args.lam,
                      tau=args.tau, seed=args.seed, denominator_mode=args.denominator, input_size=args.size,
                      augment_hflip=not args.no_hflip, split=args.split)
    _prepare_out(args.out, args.data)
    root = args.data.resolve()
    man = _relative(scan_classification(root), root)
    tr, va, te = stratified_split(man, SplitSpec(cfg.split, cfg.seed))
    if not len(tr) or not len(va):
        raise ValueError("train and validation splits must be non-empty")
    xtr, ytr = _load_cls(tr, root, cfg.input_size)
    xva, yva = _load_cls(va, root, cfg.input_size)
    best, _ = train_classifier(xtr, ytr, xva, yva, cfg, man.class_names)
    ckpt_io.save(args.out / "classifier.ckpt", best)
    splits = args.out / "splits"
    splits.mkdir(exist_ok=True)
    for part in (tr, va, te):
        (splits / f"{part.split}.csv").write_bytes(part.to_csv())
    model, _ = load_classifier(best)
    emb, _ = predict_classifier(model, _stack(xva, best.norm, model.dtype))
    margin = _margin_or_none(emb, yva)
    summary = {"best_epoch": best.epoch, "val_macro_f1": best.val_metric, "val_loss": best.val_loss,
               "val_separation_margin": margin, "history": best.history,
               "n_train": len(tr), "n_val": len(va), "n_test": len(te)}
    _write_json(args.out / "cls_summary.json", summary)
    log.info("best epoch %d, val macro-F1 %.4f, val margin %s", best.epoch, best.val_metric,
             "undefined" if margin is None else f"{margin:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    ck = _load_checkpoint(args.checkpoint, "classifier")
    _prepare_out(args.out, args.data)
    model, cfg = load_classifier(ck)
    root = args.data.resolve()
    man = _relative(scan_classification(root), root)
    if man.class_names != ck.class_names:
        raise ValueError(f"dataset classes {man.class_names} differ from checkpoint classes {ck.class_names}")
    if args.subset == "all":
        part = man
    else:
        part = dict(zip(("train", "val", "test"), stratified_split(man, SplitSpec(cfg.split, cfg.seed))))[args.subset]
    if not len(part):
        raise ValueError(f"the {args.subset} subset is empty")
    x, y = _load_cls(part, root, cfg.input_size)
    emb, logits = predict_classifier(model, _stack(x, ck.norm, model.dtype))
    pred, conf = softmax_confidence(logits)
    cm = accumulate_confusion(zip(y, pred.tolist()), model.n_classes, ck.class_names)
    report = class_report(cm)
    hist = confidence_histogram(conf)
    extra = {"subset": args.subset, "n": len(y), "checkpoint_epoch": ck.epoch}
    margin = _margin_or_none(emb, y)
    if margin is not None:
        extra["separation_margin"] = margin
    (args.out / "report.json").write_bytes(emit_report(report, cm, hist, "json", extra))
    if args.format != "json":
        (args.out / f"report.{args.format}").write_bytes(emit_report(report, cm, hist, args.format, extra))
    log.info("%s macro-F1 %.4f over %d images", args.subset, report.macro_f1, len(y))
    return 0


def cmd_report(args) -> int:
    raw = args.data.read_bytes()
    report, cm, hist = parse_report(raw)
    extra = json.loads(raw.decode("utf-8")).get("extra")
    out = emit_report(report, cm, hist, args.format, extra)
    if args.out is None:
        sys.stdout.buffer.write(out)
        sys.stdout.flush()
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_bytes(out)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suites(instances=args.instances, seed=args.seed)
    for r in results:
        print(f"{r.name:<20} instances={r.instances:<3} max_rel_err={r.max_error:.3e} "
              f"{'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        log.error("gradient checks above %.0e: %s", GRAD_TOL, ", ".join(failed))
        return 2
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train-seg": cmd_train_seg,
    "extract-road": cmd_extract_road,
    "train-cls": cmd_train_cls,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "gradcheck": cmd_gradcheck,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root_log = logging.getLogger("roadcond")
    root_log.handlers[:] = [handler]
    root_log.setLevel(args.log_level)
    root_log.propagate = False
    try:
        return COMMANDS[args.command](args)
    except (TrainingError, NonFiniteGradient, GraphError, MemoryError) as exc:
        log.error("%s", exc)
        return 2
    except (ValueError, OSError, KeyError, CheckpointError, NetpbmError) as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure: %s", exc)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
