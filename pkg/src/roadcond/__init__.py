"""Road-surface condition classification on extracted road areas.

A small encoder-decoder segments the road, non-road pixels are zeroed, and a
convolutional classifier is trained on the masked images with cross-entropy
plus a weighted supervised contrastive term. Everything runs on a numpy
reverse-mode autodiff engine (:mod:`roadcond.tensor`).
"""

from .config import BackboneConfig, ContrastiveConfig, SegTrainConfig, TrainConfig, UNetConfig
from .tensor import Tensor, backward

__all__ = ["BackboneConfig", "ContrastiveConfig", "SegTrainConfig", "TrainConfig", "UNetConfig",
           "Tensor", "backward"]
__version__ = "0.1.0"
