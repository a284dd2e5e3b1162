"""Image preprocessing, dataset manifests and deterministic stratified splits.

Directory layouts understood here:

* classification: ``<root>/<class_name>/<stem>.ppm``
* segmentation:   ``<root>/images/<stem>.ppm`` with ``<root>/masks/<stem>.pgm``
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .netpbm import read_image

STD_FLOOR = 1e-6


# ----------------------------------------------------------------------------
# pixel ops
# ----------------------------------------------------------------------------


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres: source coordinate of output i is (i + 0.5) * n_in / n_out - 0.5
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) or (H, W) array, align_corners=False."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    img = np.asarray(img)
    squeeze = img.ndim == 2
    a = img[:, :, None] if squeeze else img
    h, w = a.shape[:2]
    if (h, w) == (out_h, out_w):
        out = a.astype(np.float64, copy=True)
    else:
        y0, y1, fy = _axis_weights(h, out_h)
        x0, x1, fx = _axis_weights(w, out_w)
        a = a.astype(np.float64)
        top = a[y0][:, x0] * (1 - fx)[None, :, None] + a[y0][:, x1] * fx[None, :, None]
        bot = a[y1][:, x0] * (1 - fx)[None, :, None] + a[y1][:, x1] * fx[None, :, None]
        out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return out[:, :, 0] if squeeze else out


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(img)[:, ::-1])


@dataclass(frozen=True)
class NormStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        if len(self.mean) != len(self.std):
            raise ValueError("mean and std must have equal length")

    @property
    def channels(self) -> int:
        return len(self.mean)

    @classmethod
    def identity(cls, channels: int = 3) -> "NormStats":
        return cls((0.0,) * channels, (1.0,) * channels)

    @classmethod
    def from_images(cls, images: Sequence[np.ndarray]) -> "NormStats":
        stack = np.stack([np.asarray(im, dtype=np.float64) for im in images])
        c = stack.shape[-1]
        flat = stack.reshape(-1, c)
        mean = flat.mean(axis=0)
        # float32-representable, so checkpoints store them exactly; the floor
        # is applied after rounding so it survives the cast
        std = flat.std(axis=0).astype(np.float32)
        std = np.where(std < STD_FLOOR, np.nextafter(np.float32(STD_FLOOR), np.float32(1)), std)
        return cls(tuple(float(v) for v in mean.astype(np.float32)),
                   tuple(float(v) for v in std))

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(tuple(d["mean"]), tuple(d["std"]))


def normalize(img: np.ndarray, stats: NormStats) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-1] != stats.channels:
        raise ValueError(f"image has {img.shape[-1]} channels, stats have {stats.channels}")
    return (img - np.asarray(stats.mean)) / np.asarray(stats.std)


def denormalize(img: np.ndarray, stats: NormStats) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-1] != stats.channels:
        raise ValueError(f"image has {img.shape[-1]} channels, stats have {stats.channels}")
    return img * np.asarray(stats.std) + np.asarray(stats.mean)


# ----------------------------------------------------------------------------
# manifests
# ----------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    """Items are ``(image_path, label)`` or ``(image_path, mask_path)``."""

    items: list[tuple[str, int | str]]
    class_names: list[str] = field(default_factory=list)
    split: str = "all"
    kind: str = "classification"

    def __len__(self) -> int:
        return len(self.items)

    @property
    def labels(self) -> list[int]:
        if self.kind != "classification":
            return [0] * len(self.items)
        return [int(lab) for _, lab in self.items]

    def validate(self, check_paths: bool = True) -> None:
        seen = set()
        for path, target in self.items:
            if path in seen:
                raise ValueError(f"duplicate path in {self.split} split: {path}")
            seen.add(path)
            if self.kind == "classification":
                if not 0 <= int(target) < len(self.class_names):
                    raise ValueError(f"label {target} out of range for {path}")
            elif check_paths and not Path(str(target)).exists():
                raise FileNotFoundError(target)
            if check_paths and not Path(path).exists():
                raise FileNotFoundError(path)

    def to_csv(self) -> bytes:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "label"])
        for path, target in self.items:
            w.writerow([path, target])
        return buf.getvalue().encode("utf-8")

    @classmethod
    def from_csv(cls, data: bytes, class_names: Sequence[str] = (), split: str = "all",
                 kind: str = "classification") -> "DatasetManifest":
        rows = list(csv.reader(io.StringIO(data.decode("utf-8"))))
        if not rows or rows[0] != ["path", "label"]:
            raise ValueError("manifest CSV must start with header 'path,label'")
        items = [(p, int(t) if kind == "classification" else t) for p, t in rows[1:]]
        return cls(items, list(class_names), split, kind)


def scan_classification(root) -> DatasetManifest:
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise FileNotFoundError(f"no class directories under {root}")
    names = [p.name for p in class_dirs]
    items = []
    for idx, d in enumerate(class_dirs):
        for f in sorted(d.glob("*.ppm")):
            items.append((str(f), idx))
    m = DatasetManifest(items, names)
    m.validate()
    return m


def scan_segmentation(root) -> DatasetManifest:
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise FileNotFoundError(f"{root} needs images/ and masks/ subdirectories")
    items = []
    for f in sorted(img_dir.glob("*.ppm")):
        mask = mask_dir / (f.stem + ".pgm")
        if not mask.exists():
            raise FileNotFoundError(f"no mask for {f.name}")
        items.append((str(f), str(mask)))
    m = DatasetManifest(items, ["road"], kind="segmentation")
    m.validate()
    return m


def load_images(paths: Sequence[str]) -> list[np.ndarray]:
    return [read_image(p) for p in paths]


# ----------------------------------------------------------------------------
# splitting
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.2, 0.1, 0.7)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ValueError(f"ratios must be three non-negative numbers, got {self.ratios}")
        if abs(math.fsum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {self.ratios}")


def apportion(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties favour earlier slots."""
    quotas = [n * r for r in ratios]
    base = [int(math.floor(q + 1e-9)) for q in quotas]
    rest = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base


def stratified_split(manifest: DatasetManifest, spec: SplitSpec) -> tuple[DatasetManifest, ...]:
    """Per-class seeded shuffle then largest-remainder partition into train/val/test.

    Items are sorted by path before shuffling, so the result does not depend
    on input order.
    """
    by_class: dict[int, list] = {}
    for item, lab in zip(manifest.items, manifest.labels):
        by_class.setdefault(lab, []).append(item)
    n_classes = len(manifest.class_names) if manifest.kind == "classification" else 1
    for c in range(n_classes):
        if not by_class.get(c):
            name = manifest.class_names[c] if c < len(manifest.class_names) else c
            raise ValueError(f"class {name!r} has no items")
    parts: list[list] = [[], [], []]
    for c in sorted(by_class):
        items = sorted(by_class[c], key=lambda it: str(it[0]))
        rng = np.random.default_rng([spec.seed, c])
        perm = rng.permutation(len(items))
        items = [items[i] for i in perm]
        sizes = apportion(len(items), spec.ratios)
        start = 0
        for k, size in enumerate(sizes):
            parts[k].extend(items[start : start + size])
            start += size
    return tuple(
        DatasetManifest(sorted(p, key=lambda it: str(it[0])), list(manifest.class_names), name, manifest.kind)
        for p, name in zip(parts, ("train", "val", "test"))
    )
