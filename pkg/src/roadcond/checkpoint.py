"""Checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"RDCKPT\\r\\n"
    u32       format version (1)
    u32       header length L
    L bytes   header: canonical JSON (sorted keys, no whitespace, ASCII)
    ...       tensor payload: raw float32 little-endian, in header order

The header holds the run metadata plus a ``tensors`` table of
``{"name", "shape", "offset"}`` entries; offsets are relative to the start
of the payload. Parameters are stored as ``param/<name>``, Adam moments as
``adam.m/<name>`` and ``adam.v/<name>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data import NormStats
from .optim import AdamState

MAGIC = b"RDCKPT\r\n"
VERSION = 1
_F4 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str  # "classifier" | "segmenter"
    params: dict[str, np.ndarray]
    adam: AdamState
    epoch: int
    val_metric: float
    val_loss: float
    config: dict[str, Any]
    norm: NormStats
    class_names: list[str] = field(default_factory=list)
    metric_name: str = "macro_f1"
    history: list[dict[str, Any]] = field(default_factory=list)


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True,
                      allow_nan=False).encode("ascii")


def dumps(ckpt: Checkpoint) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = []
    for name in sorted(ckpt.params):
        tensors.append((f"param/{name}", ckpt.params[name]))
    for name in sorted(ckpt.adam.m):
        tensors.append((f"adam.m/{name}", ckpt.adam.m[name]))
        tensors.append((f"adam.v/{name}", ckpt.adam.v[name]))
    table, blobs, offset = [], [], 0
    for name, arr in tensors:
        blob = np.ascontiguousarray(arr, dtype=_F4).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "kind": ckpt.kind,
        "epoch": ckpt.epoch,
        "val_metric": ckpt.val_metric,
        "val_loss": ckpt.val_loss,
        "metric_name": ckpt.metric_name,
        "config": ckpt.config,
        "norm": ckpt.norm.to_dict(),
        "class_names": list(ckpt.class_names),
        "history": ckpt.history,
        "adam": {"lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "eps": ckpt.adam.eps, "t": ckpt.adam.t},
        "tensors": table,
    }
    hb = canonical_json(header)
    return MAGIC + struct.pack("<II", VERSION, len(hb)) + hb + b"".join(blobs)


def loads(buf: bytes) -> Checkpoint:
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    pos = len(MAGIC)
    if len(buf) < pos + 8:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack_from("<II", buf, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 8
    try:
        header = json.loads(buf[pos : pos + hlen].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    payload = memoryview(buf)[pos + hlen :]
    arrays = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        if start + 4 * count > len(payload):
            raise CheckpointError(f"truncated tensor {entry['name']}")
        arr = np.frombuffer(payload, dtype=_F4, count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
    a = header["adam"]
    adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"],
                     m={k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam.m/")},
                     v={k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam.v/")})
    return Checkpoint(kind=header["kind"], params=params, adam=adam, epoch=header["epoch"],
                      val_metric=header["val_metric"], val_loss=header["val_loss"],
                      config=header["config"], norm=NormStats.from_dict(header["norm"]),
                      class_names=header["class_names"], metric_name=header["metric_name"],
                      history=header["history"])


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
