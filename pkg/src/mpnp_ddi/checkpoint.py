"""Binary checkpoint format.

Layout (all integers little-endian):

    magic      8 bytes  b"MPNPCKPT"
    version    uint32
    header     uint32 length + UTF-8 JSON (config, relation count, optimizer
               scalars, rng state, batch-norm counters)
    count      uint32 number of tensors
    tensors    repeated: uint16 name length, name, uint8 ndim,
               ndim x uint64 dims, float64 values (C order)
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .model import MPNPModel
from .objective import OptimizerState

MAGIC = b"MPNPCKPT"
VERSION = 1

PARAM, BUFFER, MOMENT1, MOMENT2 = "param:", "buffer:", "adam_m:", "adam_v:"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    num_relations: int
    tensors: dict  # full name -> float64 array, in file order
    optimizer: dict | None = None  # {"step": int, "lr": float}
    rng_state: dict | None = None
    bn_counts: dict = field(default_factory=dict)
    version: int = VERSION

    def group(self, prefix):
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def _batch_norm_states(model):
    def walk(obj, prefix):
        for key, val in vars(obj).items():
            name = f"{prefix}{key}"
            if isinstance(val, ad.BatchNormState):
                yield name, val
            elif hasattr(val, "named_buffers"):
                yield from walk(val, name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if hasattr(item, "named_buffers"):
                        yield from walk(item, f"{name}.{i}.")
    return dict(walk(model, ""))


def checkpoint_from_model(model, optimizer=None, rng=None):
    tensors = {}
    for name, p in model.named_parameters():
        tensors[PARAM + name] = p.data
    for name, b in model.named_buffers():
        tensors[BUFFER + name] = b
    opt = None
    if optimizer is not None:
        opt = {"step": optimizer.step, "lr": optimizer.lr}
        for name in sorted(optimizer.first_moment):
            tensors[MOMENT1 + name] = optimizer.first_moment[name]
            tensors[MOMENT2 + name] = optimizer.second_moment[name]
    return Checkpoint(
        config=model.config,
        num_relations=model.num_relations,
        tensors=tensors,
        optimizer=opt,
        rng_state=None if rng is None else rng.bit_generator.state,
        bn_counts={k: s.num_batches for k, s in _batch_norm_states(model).items()},
    )


def encode(ckpt):
    header = json.dumps({
        "config": ckpt.config.to_dict(),
        "num_relations": ckpt.num_relations,
        "optimizer": ckpt.optimizer,
        "rng_state": ckpt.rng_state,
        "bn_counts": ckpt.bn_counts,
    }, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(header)), header,
             struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data):
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, header_len = r.unpack("<II", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    header = json.loads(r.take(header_len, "header").decode("utf-8"))
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        name_len, ndim = r.unpack("<HB", "tensor record")
        name = r.take(name_len, "tensor name").decode("utf-8")
        shape = r.unpack(f"<{ndim}Q", f"shape of {name}")
        n = int(np.prod(shape, dtype=np.int64))
        raw = r.take(8 * n, f"values of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after tensor block")
    return Checkpoint(
        config=TrainConfig.from_dict(header["config"]),
        num_relations=header["num_relations"],
        tensors=tensors,
        optimizer=header["optimizer"],
        rng_state=header["rng_state"],
        bn_counts=header.get("bn_counts", {}),
        version=version,
    )


def atomic_write(path, data):
    """Write bytes or text to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, model, optimizer=None, rng=None):
    ckpt = checkpoint_from_model(model, optimizer, rng)
    atomic_write(path, encode(ckpt))
    return ckpt


def load_checkpoint(path, config=None):
    """Read a checkpoint; with ``config``, check every tensor shape against it."""
    ckpt = decode(Path(path).read_bytes())
    if config is not None:
        expected = checkpoint_from_model(MPNPModel(ckpt.num_relations, config)).tensors
        for name, arr in ckpt.tensors.items():
            if name.startswith((MOMENT1, MOMENT2)):
                name_ref = PARAM + name.split(":", 1)[1]
            else:
                name_ref = name
            if name_ref not in expected:
                raise CheckpointError(f"tensor {name} is not part of the configured model")
            if expected[name_ref].shape != arr.shape:
                raise CheckpointError(
                    f"shape mismatch for tensor {name}: checkpoint {arr.shape}, "
                    f"config expects {expected[name_ref].shape}"
                )
    return ckpt


def restore_model(ckpt, config=None):
    """Build a model from a checkpoint and copy every tensor in."""
    model = MPNPModel(ckpt.num_relations, config or ckpt.config)
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name, arr in ckpt.group(PARAM).items():
        if name not in params or params[name].shape != arr.shape:
            raise CheckpointError(f"shape mismatch for tensor {PARAM}{name}")
        params[name].data[...] = arr
    for name, arr in ckpt.group(BUFFER).items():
        if name not in buffers or buffers[name].shape != arr.shape:
            raise CheckpointError(f"shape mismatch for tensor {BUFFER}{name}")
        buffers[name][...] = arr
    missing = set(params) - set(ckpt.group(PARAM))
    if missing:
        raise CheckpointError(f"checkpoint lacks tensor(s) {sorted(missing)}")
    for name, state in _batch_norm_states(model).items():
        state.num_batches = ckpt.bn_counts.get(name, state.num_batches)
    return model


def restore_optimizer(ckpt):
    if ckpt.optimizer is None:
        return None
    return OptimizerState(
        first_moment={k: v.copy() for k, v in ckpt.group(MOMENT1).items()},
        second_moment={k: v.copy() for k, v in ckpt.group(MOMENT2).items()},
        step=ckpt.optimizer["step"],
        lr=ckpt.optimizer["lr"],
    )


def restore_rng(ckpt):
    if ckpt.rng_state is None:
        return None
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    return rng
