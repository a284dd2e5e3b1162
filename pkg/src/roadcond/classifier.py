"""Road-condition classifier: conv backbone producing embeddings, affine head."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import BackboneConfig
from .nn import Module
from .tensor import ShapeError, Tensor


class TinyBackbone(Module):
    """conv3x3-relu-maxpool blocks, the last block unpooled, then global average pooling.

    The embedding dimension is the width of the last block. With ``cfg.center``
    the pooled features are mean-centred: over the batch when ``train`` is set,
    otherwise with the stored ``bb.center`` buffer (see ``update_center``).
    """

    def __init__(self, cfg: BackboneConfig = BackboneConfig(), seed: int = 0, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        cin = cfg.in_channels
        for i, width in enumerate(cfg.widths):
            self._add(f"bb{i}.w", (3, 3, cin, width), seed, dtype=dtype, gain=cfg.init_gain)
            self._add(f"bb{i}.b", (width,), seed, "zeros", dtype=dtype)
            cin = width
        if cfg.center:
            self.buffers["bb.center"] = np.zeros(self.dim, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.cfg.widths[-1]

    def features(self, x: Tensor) -> Tensor:
        """Pooled features before centring."""
        if x.ndim != 4 or x.shape[3] != self.cfg.in_channels:
            raise ShapeError(f"TinyBackbone: expected (N, H, W, {self.cfg.in_channels}), got {x.shape}")
        h = x
        last = len(self.cfg.widths) - 1
        for i in range(len(self.cfg.widths)):
            h = self.conv(h, f"bb{i}", stride=self.cfg.stem_stride if i == 0 else 1)
            if i < last or self.cfg.final_relu:
                h = T.relu(h)
            if i < last:
                h = T.max_pool2d(h, 2)
        return T.global_avg_pool(h)

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        e = self.features(x)
        if not self.cfg.center:
            return e
        if train:
            return e - T.mean(e, axis=0, keepdims=True)
        return e - self.buffers["bb.center"]

    def update_center(self, x: np.ndarray, batch_size: int = 64) -> None:
        """Store the mean pooled feature of ``x`` (N, H, W, C) as the inference centre."""
        if not self.cfg.center:
            return
        total = np.zeros(self.dim, dtype=np.float64)
        with T.no_grad():
            for start in range(0, len(x), batch_size):
                total += self.features(Tensor._wrap(x[start : start + batch_size])).data.sum(axis=0, dtype=np.float64)
        self.buffers["bb.center"] = (total / len(x)).astype(self.buffers["bb.center"].dtype)

    __call__ = forward


class ClassifierHead(Module):
    def __init__(self, dim: int, n_classes: int, seed: int = 0, init: str = "zeros", dtype=np.float32):
        super().__init__()
        if n_classes < 2:
            raise ValueError("need at least two classes")
        self.n_classes = n_classes
        self._add("head.w", (dim, n_classes), seed, init, dtype=dtype)
        self._add("head.b", (n_classes,), seed, "zeros", dtype=dtype)

    def forward(self, emb: Tensor) -> Tensor:
        return T.matmul(emb, self.params["head.w"]) + self.params["head.b"]

    __call__ = forward


class Classifier:
    """Backbone and head with a merged parameter namespace."""

    def __init__(self, backbone_cfg: BackboneConfig, n_classes: int, seed: int = 0,
                 input_size: tuple[int, int] = (128, 128), dtype=np.float32):
        self.backbone = TinyBackbone(backbone_cfg, seed=seed, dtype=dtype)
        self.head = ClassifierHead(self.backbone.dim, n_classes, seed=seed + 1,
                                   init=backbone_cfg.head_init, dtype=dtype)
        self.projection = Module()
        if backbone_cfg.projection_dim > 0:
            self.projection._add("proj.w", (self.backbone.dim, backbone_cfg.projection_dim), seed + 2, dtype=dtype)
        self.input_size = tuple(input_size)

    @property
    def params(self) -> dict[str, Tensor]:
        return {**self.backbone.params, **self.head.params, **self.projection.params}

    def project(self, emb: Tensor) -> Tensor:
        """Embedding seen by the contrastive term."""
        if not self.projection.params:
            return emb
        return T.matmul(emb, self.projection.params["proj.w"])

    @property
    def n_classes(self) -> int:
        return self.head.n_classes

    @property
    def dtype(self):
        return self.head.params["head.w"].dtype

    def check_input(self, shape) -> None:
        if tuple(shape[1:3]) != self.input_size:
            raise ShapeError(f"classifier expects {self.input_size} inputs, got {tuple(shape[1:3])}")

    def forward(self, x: Tensor, train: bool = False) -> tuple[Tensor, Tensor]:
        """-> (embeddings (N, D), logits (N, n))."""
        self.check_input(x.shape)
        emb = self.backbone(x, train=train)
        return emb, self.head(emb)

    def _parts(self) -> tuple[Module, ...]:
        return self.backbone, self.head, self.projection

    def zero_grad(self) -> None:
        for m in self._parts():
            m.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for m in self._parts():
            out.update(m.state_dict())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        keys = set().union(*(m.state_keys() for m in self._parts()))
        missing, extra = keys - set(state), set(state) - keys
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for m in self._parts():
            m.load_state_dict({k: state[k] for k in m.state_keys()})


def embed(backbone: TinyBackbone, image: np.ndarray, input_size: tuple[int, int] | None = None) -> np.ndarray:
    """Embedding of one preprocessed (H, W, C) image."""
    image = np.asarray(image)
    if input_size is not None and image.shape[:2] != tuple(input_size):
        raise ShapeError(f"embed: image is {image.shape[:2]}, expected {tuple(input_size)}")
    dtype = next(iter(backbone.params.values())).dtype
    return backbone(Tensor(image[None].astype(dtype))).data[0]


def softmax_confidence(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmax class and max softmax probability per row."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    return p.argmax(axis=-1), p.max(axis=-1)


def classify_with_confidence(backbone: TinyBackbone, head: ClassifierHead, image: np.ndarray) -> tuple[int, float]:
    dtype = head.params["head.w"].dtype
    logits = head(backbone(Tensor(np.asarray(image)[None].astype(dtype)))).data
    cls, conf = softmax_confidence(logits)
    return int(cls[0]), float(conf[0])
