"""Parameter containers shared by the segmentation and classification nets."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, seeded_init


class Module:
    """Holds named parameter tensors; subclasses implement ``forward``."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        # non-trainable state saved alongside the parameters
        self.buffers: dict[str, np.ndarray] = {}

    def _add(self, name: str, shape, seed: int, scheme: str = "uniform-fan-in", dtype=np.float32,
             gain: float = 1.0) -> Tensor:
        # per-parameter seed derived from the net seed and the slot index
        p = seeded_init(shape, scheme, seed=hash_seed(seed, len(self.params)), dtype=dtype, gain=gain)
        p.name = name
        self.params[name] = p
        return p

    def conv(self, x: Tensor, name: str, stride: int = 1, pad: int = 1) -> Tensor:
        y = T.conv2d(x, self.params[name + ".w"], stride=stride, pad=pad)
        return y + self.params[name + ".b"]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: p.data.copy() for k, p in self.params.items()}
        out.update({k: b.copy() for k, b in self.buffers.items()})
        return out

    def state_keys(self) -> set[str]:
        return set(self.params) | set(self.buffers)

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = self.state_keys() - set(state)
        extra = set(state) - self.state_keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k in self.state_keys():
            arr = np.asarray(state[k])
            cur = self.params[k].data if k in self.params else self.buffers[k]
            if arr.shape != cur.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {cur.shape}")
            if k in self.params:
                self.params[k].data = arr.astype(cur.dtype, copy=True)
            else:
                self.buffers[k] = arr.astype(cur.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        for k, b in self.buffers.items():
            self.buffers[k] = b.astype(dtype)
        return self

    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))


def hash_seed(seed: int, slot: int) -> int:
    return int(np.random.SeedSequence([seed, slot]).generate_state(1)[0])
