"""Synthetic road scenes with exact road masks.

A scene is sky above a horizon, grass below it, and a trapezoidal road
running from the horizon to the bottom edge. The road is filled with one of
three surface textures:

    smooth   dark, even asphalt with fine grain
    cracked  faded lighter asphalt with dark cracks and potholes
    blocky   brown gravel made of coarse random blocks
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .netpbm import encode_image
from .segnet import encode_mask

CLASS_FAMILIES = {
    "asphalt_good": "smooth",
    "asphalt_bad": "cracked",
    "unpaved": "blocky",
}
DEFAULT_CLASSES = tuple(CLASS_FAMILIES)


@dataclass(frozen=True)
class Trapezoid:
    """Road outline in pixel coordinates (x to the right, y down)."""

    top_y: float
    top_left: float
    top_right: float
    bottom_left: float
    bottom_right: float
    bottom_y: float

    def mask(self, h: int, w: int) -> np.ndarray:
        yc = np.arange(h)[:, None] + 0.5
        xc = np.arange(w)[None, :] + 0.5
        t = (yc - self.top_y) / (self.bottom_y - self.top_y)
        left = self.top_left + t * (self.bottom_left - self.top_left)
        right = self.top_right + t * (self.bottom_right - self.top_right)
        inside = (yc >= self.top_y) & (yc <= self.bottom_y) & (xc >= left) & (xc <= right)
        return inside.astype(np.uint8)


@dataclass
class SynthScene:
    image: np.ndarray
    mask: np.ndarray
    label: int
    outline: Trapezoid


def _random_trapezoid(rng: np.random.Generator, h: int, w: int) -> Trapezoid:
    top_y = rng.uniform(0.3, 0.45) * h
    top_c = rng.uniform(0.4, 0.6) * w
    top_half = rng.uniform(0.06, 0.14) * w
    bot_c = rng.uniform(0.4, 0.6) * w
    bot_half = rng.uniform(0.38, 0.55) * w
    return Trapezoid(top_y, top_c - top_half, top_c + top_half,
                     bot_c - bot_half, bot_c + bot_half, float(h))


def _blocks(rng, h, w, cell, sigma):
    gh, gw = -(-h // cell), -(-w // cell)
    coarse = rng.normal(0.0, sigma, size=(gh, gw))
    return coarse.repeat(cell, axis=0).repeat(cell, axis=1)[:h, :w]


def _texture(family: str, rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    if family == "smooth":
        g = rng.uniform(0.26, 0.36)
        base = g + rng.normal(0.0, 0.015, size=(h, w))
        return np.repeat(base[:, :, None], 3, axis=2)
    if family == "cracked":
        g = rng.uniform(0.5, 0.6)
        base = g + rng.normal(0.0, 0.03, size=(h, w))
        for _ in range(rng.integers(4, 8)):
            y, x = rng.uniform(0, h), rng.uniform(0, w)
            ang = rng.uniform(0, 2 * np.pi)
            for _ in range(int(rng.integers(h // 2, h))):
                ang += rng.normal(0.0, 0.4)
                y += np.sin(ang)
                x += np.cos(ang)
                yi, xi = int(y), int(x)
                if 0 <= yi < h and 0 <= xi < w:
                    base[yi, xi] = rng.uniform(0.05, 0.15)
        for _ in range(rng.integers(1, 4)):
            cy, cx, r = rng.uniform(0, h), rng.uniform(0, w), rng.uniform(1.5, 3.5)
            yy, xx = np.ogrid[:h, :w]
            base[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = rng.uniform(0.1, 0.2)
        return np.repeat(base[:, :, None], 3, axis=2)
    if family == "blocky":
        tint = np.array([0.55, 0.43, 0.3]) * rng.uniform(0.85, 1.1)
        lum = _blocks(rng, h, w, int(rng.integers(3, 6)), 0.09) + rng.normal(0.0, 0.02, size=(h, w))
        return tint[None, None, :] + lum[:, :, None]
    raise ValueError(f"unknown texture family {family!r}")


def _background(rng: np.random.Generator, h: int, w: int, horizon: float) -> np.ndarray:
    rows = np.arange(h)[:, None, None] + 0.5
    sky_top = np.array([0.35, 0.55, 0.9]) * rng.uniform(0.9, 1.05)
    sky_bot = np.array([0.7, 0.82, 0.97])
    t = np.clip(rows / max(horizon, 1.0), 0, 1)
    sky = sky_top * (1 - t) + sky_bot * t + rng.normal(0, 0.01, size=(h, w, 1))
    grass = np.array([0.22, 0.5, 0.18]) * rng.uniform(0.85, 1.15)
    grass = grass + _blocks(rng, h, w, 2, 0.05)[:, :, None] * np.array([0.5, 1.0, 0.5])
    return np.where(rows < horizon, sky, grass)


def synth_scene(rng: np.random.Generator, family: str, dims: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, Trapezoid]:
    h, w = dims
    outline = _random_trapezoid(rng, h, w)
    mask = outline.mask(h, w)
    img = _background(rng, h, w, outline.top_y)
    road = _texture(family, rng, h, w)
    img = np.where(mask[:, :, None] == 1, road, img)
    # quantised to the 8-bit grid so the in-memory scene equals its file
    img = np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return img, mask, outline


def synth_dataset_generate(n_scenes: int, class_set: Sequence[str] = DEFAULT_CLASSES,
                           seed: int = 0, dims: tuple[int, int] = (64, 80)) -> list[SynthScene]:
    """``n_scenes`` scenes cycling through ``class_set``; deterministic per seed."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    unknown = [c for c in class_set if c not in CLASS_FAMILIES]
    if unknown:
        raise ValueError(f"unknown classes {unknown}; choose from {sorted(CLASS_FAMILIES)}")
    scenes = []
    for i in range(n_scenes):
        label = i % len(class_set)
        rng = np.random.default_rng([seed, i])
        img, mask, outline = synth_scene(rng, CLASS_FAMILIES[class_set[label]], dims)
        scenes.append(SynthScene(img, mask, label, outline))
    return scenes


def write_synth_dataset(out_dir, scenes: Sequence[SynthScene], class_set: Sequence[str] = DEFAULT_CLASSES) -> None:
    """Write scenes as both a segmentation tree (seg/) and a classification tree (cls/)."""
    out = Path(out_dir)
    (out / "seg" / "images").mkdir(parents=True, exist_ok=True)
    (out / "seg" / "masks").mkdir(parents=True, exist_ok=True)
    for name in class_set:
        (out / "cls" / name).mkdir(parents=True, exist_ok=True)
    for i, sc in enumerate(scenes):
        stem = f"scene_{i:05d}"
        data = encode_image(sc.image)
        (out / "seg" / "images" / f"{stem}.ppm").write_bytes(data)
        (out / "seg" / "masks" / f"{stem}.pgm").write_bytes(encode_mask(sc.mask))
        (out / "cls" / class_set[sc.label] / f"{stem}.ppm").write_bytes(data)
