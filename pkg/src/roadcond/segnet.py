"""Road segmentation: a small UNet, mask binarisation, road extraction, DICE."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import UNetConfig
from .data import NormStats, normalize, resize_bilinear
from .netpbm import NetpbmError, decode_raw, encode_raw
from .nn import Module
from .tensor import ShapeError, Tensor


class TinyUNet(Module):
    """Encoder-decoder with skip concatenations and a 1-channel sigmoid head.

    Level ``l`` of the encoder has ``base_channels * 2**l`` channels and is
    followed by 2x2 max pooling; the decoder upsamples by nearest neighbour
    and concatenates the matching encoder output.
    """

    def __init__(self, cfg: UNetConfig = UNetConfig(), seed: int = 0, dtype=np.float32):
        super().__init__()
        if not 1 <= cfg.depth <= 4:
            raise ValueError(f"depth must be in [1, 4], got {cfg.depth}")
        if cfg.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {cfg.base_channels}")
        self.cfg = cfg
        widths = [cfg.base_channels * 2**l for l in range(cfg.depth + 1)]
        cin = cfg.in_channels
        for l in range(cfg.depth):
            self._add(f"enc{l}.w", (3, 3, cin, widths[l]), seed, dtype=dtype, gain=cfg.init_gain)
            self._add(f"enc{l}.b", (widths[l],), seed, "zeros", dtype=dtype)
            cin = widths[l]
        self._add("mid.w", (3, 3, cin, widths[cfg.depth]), seed, dtype=dtype, gain=cfg.init_gain)
        self._add("mid.b", (widths[cfg.depth],), seed, "zeros", dtype=dtype)
        for l in reversed(range(cfg.depth)):
            self._add(f"dec{l}.w", (3, 3, widths[l + 1] + widths[l], widths[l]), seed, dtype=dtype, gain=cfg.init_gain)
            self._add(f"dec{l}.b", (widths[l],), seed, "zeros", dtype=dtype)
        self._add("head.w", (1, 1, widths[0], 1), seed, cfg.head_init, dtype=dtype)
        self._add("head.b", (1,), seed, "zeros", dtype=dtype)

    def check_input(self, shape) -> None:
        if len(shape) != 4 or shape[3] != self.cfg.in_channels:
            raise ShapeError(f"TinyUNet: expected (N, H, W, {self.cfg.in_channels}) input, got {tuple(shape)}")
        k = 2**self.cfg.depth
        if shape[1] % k or shape[2] % k:
            raise ShapeError(f"TinyUNet: input {shape[1]}x{shape[2]} not divisible by {k}")

    def forward(self, x: Tensor) -> Tensor:
        """(N, H, W, C) -> (N, H, W) road probabilities."""
        self.check_input(x.shape)
        skips = []
        h = x
        for l in range(self.cfg.depth):
            h = T.relu(self.conv(h, f"enc{l}"))
            skips.append(h)
            h = T.max_pool2d(h, 2)
        h = T.relu(self.conv(h, "mid"))
        for l in reversed(range(self.cfg.depth)):
            h = T.concat([T.upsample2d(h, 2), skips[l]], axis=-1)
            h = T.relu(self.conv(h, f"dec{l}"))
        logit = self.conv(h, "head", pad=0)
        n, hh, ww, _ = logit.shape
        return T.reshape(T.sigmoid(logit), (n, hh, ww))

    __call__ = forward


def build_tiny_unet(depth: int = 2, base_channels: int = 8, seed: int = 0, in_channels: int = 3,
                    dtype=np.float32) -> TinyUNet:
    return TinyUNet(UNetConfig(depth, base_channels, in_channels), seed=seed, dtype=dtype)


def predict_seg_map(net: TinyUNet, image: np.ndarray, stats: NormStats | None = None,
                    input_size: tuple[int, int] | None = None) -> np.ndarray:
    """Per-pixel road probability for one (H, W, C) image at the net's resolution."""
    image = np.asarray(image)
    if input_size is not None and image.shape[:2] != tuple(input_size):
        raise ShapeError(f"predict_seg_map: image is {image.shape[:2]}, network expects {tuple(input_size)}")
    x = normalize(image, stats) if stats is not None else np.asarray(image, dtype=np.float64)
    dtype = next(iter(net.params.values())).dtype
    out = net(Tensor(x[None].astype(dtype)))
    return out.data[0]


def binarize(seg: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(seg) >= threshold).astype(np.uint8)


def bbox_crop(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return image
    return image[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]


def extract_road_area(image: np.ndarray, mask: np.ndarray, out_size: tuple[int, int] = (128, 128),
                      crop: bool = False) -> np.ndarray:
    """Zero non-road pixels, then bilinear-resize to ``out_size`` (H, W)."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if image.shape[:2] != mask.shape:
        raise ShapeError(f"extract_road_area: image {image.shape[:2]} vs mask {mask.shape}")
    masked = image * mask[:, :, None] if image.ndim == 3 else image * mask
    if crop:
        masked = bbox_crop(masked, mask)
    return resize_bilinear(masked, out_size[0], out_size[1])


def dice_score(pred: np.ndarray, truth: np.ndarray) -> float:
    a = np.asarray(pred).astype(bool)
    b = np.asarray(truth).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"dice_score: shapes {a.shape} and {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def encode_mask(mask: np.ndarray) -> bytes:
    """P5, maxval 255: 0 for non-road, 255 for road."""
    m = np.asarray(mask)
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask must be binary")
    return encode_raw((m.astype(np.int64) * 255)[:, :, None], 255)


def decode_mask(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P5":
        raise NetpbmError("mask files must be P5")
    raster, maxval = decode_raw(buf)
    return (raster[:, :, 0] * 2 >= maxval).astype(np.uint8)
