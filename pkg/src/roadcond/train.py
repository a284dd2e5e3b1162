"""Training loops for the segmenter and the classifier, and checkpoint selection."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import losses
from . import tensor as T
from .checkpoint import Checkpoint
from .classifier import Classifier, softmax_confidence
from .config import SegTrainConfig, TrainConfig
from .data import NormStats, hflip, normalize
from .metrics import macro_f1_from_predictions
from .optim import AdamState, NonFiniteGradient, adam_step
from .segnet import TinyUNet, binarize, dice_score
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class BatchStream:
    """Seeded mini-batches over preprocessed arrays.

    ``augment`` turns on per-sample horizontal flips; evaluation streams keep
    it off and ordered.
    """

    images: np.ndarray
    targets: np.ndarray
    batch_size: int
    shuffle_rng: np.random.Generator | None = None
    flip_rng: np.random.Generator | None = None
    augment: bool = False
    flip_prob: float = 0.5
    flip_targets: bool = False

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        n = len(self.images)
        order = self.shuffle_rng.permutation(n) if self.shuffle_rng is not None else np.arange(n)
        for start in range(0, n, self.batch_size):
            idx = order[start : start + self.batch_size]
            x = self.images[idx]
            y = self.targets[idx]
            if self.augment:
                flips = self.flip_rng.random(len(idx)) < self.flip_prob
                if flips.any():
                    x = x.copy()
                    x[flips] = x[flips][:, :, ::-1]
                    if self.flip_targets:
                        y = y.copy()
                        y[flips] = y[flips][:, :, ::-1]
            yield idx, x, y


def select_best_checkpoint(history: Sequence[Checkpoint]) -> Checkpoint:
    """Highest validation metric; ties go to lower validation loss, then the earliest epoch."""
    if not history:
        raise ValueError("select_best_checkpoint: empty history")
    return min(history, key=lambda c: (-c.val_metric, c.val_loss, c.epoch))


def _stack(images: Sequence[np.ndarray], stats: NormStats, dtype) -> np.ndarray:
    return np.stack([normalize(im, stats) for im in images]).astype(dtype)


def _check_finite(loss: Tensor, epoch: int, batch: int) -> None:
    if not np.isfinite(loss.data).all():
        raise TrainingError(f"non-finite loss {float(loss.data)!r} at epoch {epoch}, batch {batch}")


def _update(params, adam: AdamState, epoch: int, batch: int) -> None:
    try:
        adam_step(params, adam)
    except NonFiniteGradient as e:
        raise TrainingError(f"{e} at epoch {epoch}, batch {batch}") from e


def _adam_snapshot(state: AdamState) -> AdamState:
    return copy.deepcopy(state)


# ----------------------------------------------------------------------------
# classifier
# ----------------------------------------------------------------------------


def classifier_loss(model: Classifier, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, train: bool = True):
    emb, logits = model.forward(Tensor._wrap(x), train=train)
    ce = losses.categorical_ce_loss(logits, y)
    if cfg.lam == 0:
        return ce, ce, None
    ct = losses.batch_contrastive_loss(model.project(emb), y, cfg.contrastive)
    return losses.combined_loss(ce, ct, cfg.lam), ce, ct


def predict_classifier(model: Classifier, x: np.ndarray, batch_size: int = 64):
    """-> (embeddings, logits) for a preprocessed (N, H, W, C) array, no augmentation."""
    embs, logits = [], []
    with T.no_grad():
        for start in range(0, len(x), batch_size):
            e, z = model.forward(Tensor._wrap(x[start : start + batch_size]))
            embs.append(e.data)
            logits.append(z.data)
    return np.concatenate(embs), np.concatenate(logits)


def _eval_classifier(model: Classifier, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> tuple[float, float]:
    stream = BatchStream(x, y, cfg.batch_size)
    total, count, preds = 0.0, 0, []
    with T.no_grad():
        for _, xb, yb in stream:
            loss, _, _ = classifier_loss(model, xb, yb, cfg, train=False)
            total += float(loss.data) * len(yb)
            count += len(yb)
    _, logits = predict_classifier(model, x, cfg.batch_size)
    preds, _ = softmax_confidence(logits)
    return macro_f1_from_predictions(y, preds, model.n_classes), total / count


def train_classifier(train_images: Sequence[np.ndarray], train_labels: Sequence[int],
                     val_images: Sequence[np.ndarray], val_labels: Sequence[int],
                     cfg: TrainConfig, class_names: Sequence[str],
                     stats: NormStats | None = None) -> tuple[Checkpoint, list[Checkpoint]]:
    """Minimise CE + lambda * contrastive with Adam; returns the best checkpoint and all epochs."""
    if len(train_images) == 0 or len(val_images) == 0:
        raise ValueError("train and validation splits must be non-empty")
    n_classes = len(class_names)
    ytr = np.asarray(train_labels, dtype=np.int64)
    yva = np.asarray(val_labels, dtype=np.int64)
    if max(ytr.max(), yva.max()) >= n_classes or min(ytr.min(), yva.min()) < 0:
        raise ValueError("labels inconsistent with the class table")
    for im in (*train_images, *val_images):
        if tuple(im.shape[:2]) != tuple(cfg.input_size):
            raise ValueError(f"image of size {im.shape[:2]} but input_size is {cfg.input_size}")

    stats = stats or NormStats.from_images(train_images)
    model = Classifier(cfg.backbone, n_classes, seed=cfg.seed, input_size=cfg.input_size)
    dtype = model.dtype
    xtr = _stack(train_images, stats, dtype)
    xva = _stack(val_images, stats, dtype)
    params = model.params
    adam = AdamState(lr=cfg.learning_rate)
    stream = BatchStream(xtr, ytr, cfg.batch_size,
                         shuffle_rng=np.random.default_rng([cfg.seed, 1]),
                         flip_rng=np.random.default_rng([cfg.seed, 2]),
                         augment=cfg.augment_hflip, flip_prob=cfg.hflip_prob)
    history: list[Checkpoint] = []
    for epoch in range(1, cfg.epochs + 1):
        run_loss = run_ce = 0.0
        seen = 0
        for b, (_, xb, yb) in enumerate(stream):
            loss, ce, _ = classifier_loss(model, xb, yb, cfg)
            _check_finite(loss, epoch, b)
            model.zero_grad()
            T.backward(loss, leaves=params.values())
            _update(params, adam, epoch, b)
            run_loss += float(loss.data) * len(yb)
            run_ce += float(ce.data) * len(yb)
            seen += len(yb)
        model.backbone.update_center(xtr, cfg.batch_size)
        val_f1, val_loss = _eval_classifier(model, xva, yva, cfg)
        log.info("cls epoch %d/%d  loss %.4f  ce %.4f  val_f1 %.4f  val_loss %.4f",
                 epoch, cfg.epochs, run_loss / seen, run_ce / seen, val_f1, val_loss)
        record = {"epoch": epoch, "train_loss": run_loss / seen, "train_ce": run_ce / seen,
                  "val_metric": val_f1, "val_loss": val_loss}
        history.append(Checkpoint(
            kind="classifier", params=model.state_dict(), adam=_adam_snapshot(adam), epoch=epoch,
            val_metric=val_f1, val_loss=val_loss, config=cfg.to_dict(), norm=stats,
            class_names=list(class_names), metric_name="macro_f1", history=[record]))
    best = copy.copy(select_best_checkpoint(history))
    best.history = [h.history[0] for h in history]
    return best, history


def load_classifier(ckpt: Checkpoint) -> tuple[Classifier, TrainConfig]:
    cfg = TrainConfig.from_dict(ckpt.config)
    model = Classifier(cfg.backbone, len(ckpt.class_names), seed=cfg.seed, input_size=cfg.input_size)
    model.load_state_dict(ckpt.params)
    return model, cfg


# ----------------------------------------------------------------------------
# segmenter
# ----------------------------------------------------------------------------


def predict_segmenter(net: TinyUNet, x: np.ndarray, batch_size: int = 16) -> np.ndarray:
    out = []
    with T.no_grad():
        for start in range(0, len(x), batch_size):
            out.append(net(Tensor._wrap(x[start : start + batch_size])).data)
    return np.concatenate(out)


def mean_dice(probs: np.ndarray, masks: np.ndarray, threshold: float) -> float:
    return float(np.mean([dice_score(binarize(p, threshold), m) for p, m in zip(probs, masks)]))


def train_segmentation(train_images: Sequence[np.ndarray], train_masks: Sequence[np.ndarray],
                       val_images: Sequence[np.ndarray], val_masks: Sequence[np.ndarray],
                       cfg: SegTrainConfig, stats: NormStats | None = None) -> tuple[Checkpoint, list[Checkpoint]]:
    """Minimise pixel BCE with Adam, selecting the epoch with the best validation DICE."""
    if len(train_images) == 0 or len(val_images) == 0:
        raise ValueError("train and validation splits must be non-empty")
    for im, m in zip((*train_images, *val_images), (*train_masks, *val_masks)):
        if tuple(im.shape[:2]) != tuple(cfg.input_size) or m.shape != im.shape[:2]:
            raise ValueError(f"image/mask of size {im.shape[:2]}/{m.shape}, input_size is {cfg.input_size}")
    stats = stats or NormStats.from_images(train_images)
    net = TinyUNet(cfg.unet, seed=cfg.seed)
    dtype = next(iter(net.params.values())).dtype
    xtr = _stack(train_images, stats, dtype)
    ytr = np.stack(train_masks).astype(dtype)
    xva = _stack(val_images, stats, dtype)
    yva = np.stack(val_masks).astype(np.uint8)
    params = net.params
    adam = AdamState(lr=cfg.learning_rate)
    stream = BatchStream(xtr, ytr, cfg.batch_size,
                         shuffle_rng=np.random.default_rng([cfg.seed, 1]),
                         flip_rng=np.random.default_rng([cfg.seed, 2]),
                         augment=cfg.augment_hflip, flip_prob=cfg.hflip_prob, flip_targets=True)
    history: list[Checkpoint] = []
    for epoch in range(1, cfg.epochs + 1):
        run, seen = 0.0, 0
        for b, (_, xb, yb) in enumerate(stream):
            loss = losses.seg_bce_loss(net(Tensor._wrap(xb)), yb)
            _check_finite(loss, epoch, b)
            net.zero_grad()
            T.backward(loss, leaves=params.values())
            _update(params, adam, epoch, b)
            run += float(loss.data) * len(yb)
            seen += len(yb)
        probs = predict_segmenter(net, xva)
        with T.no_grad():
            val_loss = float(losses.seg_bce_loss(Tensor._wrap(probs), yva.astype(probs.dtype)).data)
        val_dice = mean_dice(probs, yva, cfg.threshold)
        log.info("seg epoch %d/%d  bce %.4f  val_dice %.4f  val_bce %.4f",
                 epoch, cfg.epochs, run / seen, val_dice, val_loss)
        record = {"epoch": epoch, "train_loss": run / seen, "val_metric": val_dice, "val_loss": val_loss}
        history.append(Checkpoint(
            kind="segmenter", params=net.state_dict(), adam=_adam_snapshot(adam), epoch=epoch,
            val_metric=val_dice, val_loss=val_loss, config=cfg.to_dict(), norm=stats,
            class_names=["background", "road"], metric_name="dice", history=[record]))
    best = copy.copy(select_best_checkpoint(history))
    best.history = [h.history[0] for h in history]
    return best, history


def load_segmenter(ckpt: Checkpoint) -> tuple[TinyUNet, SegTrainConfig]:
    cfg = SegTrainConfig.from_dict(ckpt.config)
    net = TinyUNet(cfg.unet, seed=cfg.seed)
    net.load_state_dict(ckpt.params)
    return net, cfg
