"""Hyperparameter containers.

Defaults for the classifier and the segmenter follow the published training
setup: Adam at lr 1e-4, batch 32, 20 epochs, contrastive weight 1.0 and
temperature 0.05. Images enter the classifier at 128x128 and the segmenter
at 288x352 (H x W).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

DENOMINATOR_MODES = ("paper", "simclr")


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.05
    lam: float = 1.0
    # "paper": negatives only in the denominator; "simclr": negatives + the positive
    denominator_mode: str = "paper"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.denominator_mode not in DENOMINATOR_MODES:
            raise ValueError(f"denominator_mode must be one of {DENOMINATOR_MODES}")


@dataclass(frozen=True)
class BackboneConfig:
    widths: tuple[int, ...] = (16, 32, 64)
    in_channels: int = 3
    stem_stride: int = 2
    # He-uniform: keeps activations O(1) through the relu stack
    init_gain: float = 6 ** 0.5
    # initial logits all equal, so the first updates already order the classes
    head_init: str = "zeros"
    # the last conv stays linear so embeddings can take either sign
    final_relu: bool = False
    # subtract the mean embedding (batch mean in training, stored training-set
    # mean at inference); without it the shared positive offset of pooled
    # features swamps the class signal for the first few hundred Adam steps
    center: bool = True
    # > 0 adds a linear projection used only by the contrastive term
    projection_dim: int = 0


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 2
    base_channels: int = 8
    in_channels: int = 3
    init_gain: float = 6 ** 0.5
    # a zero head starts every pixel at probability 0.5
    head_init: str = "zeros"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    lam: float = 1.0
    tau: float = 0.05
    seed: int = 0
    denominator_mode: str = "paper"
    input_size: tuple[int, int] = (128, 128)
    augment_hflip: bool = True
    hflip_prob: float = 0.5
    split: tuple[float, float, float] = (0.2, 0.1, 0.7)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if any(s < 1 for s in self.input_size):
            raise ValueError("input_size must be positive")
        self.contrastive  # validates tau / lam / mode

    @property
    def contrastive(self) -> ContrastiveConfig:
        return ContrastiveConfig(tau=self.tau, lam=self.lam, denominator_mode=self.denominator_mode)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        d["input_size"] = tuple(d["input_size"])
        d["split"] = tuple(d["split"])
        bb = dict(d.get("backbone", {}))
        if "widths" in bb:
            bb["widths"] = tuple(bb["widths"])
        d["backbone"] = BackboneConfig(**bb)
        return cls(**d)


@dataclass(frozen=True)
class SegTrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    input_size: tuple[int, int] = (288, 352)
    threshold: float = 0.5
    augment_hflip: bool = True
    hflip_prob: float = 0.5
    split: tuple[float, float, float] = (0.2, 0.1, 0.7)
    unet: UNetConfig = field(default_factory=UNetConfig)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SegTrainConfig":
        d = dict(d)
        d["input_size"] = tuple(d["input_size"])
        d["split"] = tuple(d["split"])
        d["unet"] = UNetConfig(**d.get("unet", {}))
        return cls(**d)
